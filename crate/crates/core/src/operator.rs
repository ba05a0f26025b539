//! Dense operators on the tensor-product space of `N` identical atoms, with
//! matrix-free application of sparse few-body factors.
//!
//! Basis states are indexed with atom 0 as the most significant digit.

use nalgebra::DMatrix;

use crate::C64;

/// Sparse square matrix acting on one atom (dimension `d`) or on an ordered
/// pair of atoms (dimension `d * d`, first atom most significant).
#[derive(Clone, Debug, Default)]
pub struct Sparse {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl Sparse {
    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let mut entries = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let v = m[(r, c)];
                if v.norm() > 1e-300 {
                    entries.push((r, c, v));
                }
            }
        }
        Sparse {
            dim: m.nrows(),
            entries,
        }
    }

    pub fn adjoint(&self) -> Self {
        Sparse {
            dim: self.dim,
            entries: self.entries.iter().map(|&(r, c, v)| (c, r, v.conj())).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManyBodyOp {
    pub atoms: usize,
    pub d: usize,
    pub data: Vec<C64>,
}

impl ManyBodyOp {
    pub fn zeros(atoms: usize, d: usize) -> Self {
        let dim = d.pow(atoms as u32);
        ManyBodyOp {
            atoms,
            d,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.d.pow(self.atoms as u32)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim() + j]
    }

    /// `a_0 (x) a_1 (x) ...` from single-atom matrices.
    pub fn product(factors: &[&DMatrix<C64>]) -> Self {
        let d = factors[0].nrows();
        let mut out = ManyBodyOp::zeros(factors.len(), d);
        let dim = out.dim();
        for i in 0..dim {
            for j in 0..dim {
                let mut v = C64::new(1.0, 0.0);
                for (a, f) in factors.iter().enumerate() {
                    let shift = d.pow((factors.len() - 1 - a) as u32);
                    v *= f[((i / shift) % d, (j / shift) % d)];
                    if v.re == 0.0 && v.im == 0.0 {
                        break;
                    }
                }
                out.data[i * dim + j] = v;
            }
        }
        out
    }

    /// Embeds a single-atom operator on `atom` with identities elsewhere.
    pub fn embed(atoms: usize, atom: usize, op: &DMatrix<C64>) -> Self {
        let id = DMatrix::<C64>::identity(op.nrows(), op.nrows());
        let factors: Vec<&DMatrix<C64>> = (0..atoms).map(|a| if a == atom { op } else { &id }).collect();
        ManyBodyOp::product(&factors)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let dim = self.dim();
        DMatrix::from_row_slice(dim, dim, &self.data)
    }

    pub fn from_dense(atoms: usize, d: usize, m: &DMatrix<C64>) -> Self {
        let dim = m.nrows();
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(m[(i, j)]);
            }
        }
        ManyBodyOp { atoms, d, data }
    }

    fn stride(&self, atom: usize) -> usize {
        self.d.pow((self.atoms - 1 - atom) as u32)
    }

    #[inline]
    fn digit(&self, index: usize, stride: usize) -> usize {
        (index / stride) % self.d
    }

    pub fn scale(&mut self, s: C64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn axpy(&mut self, a: C64, x: &ManyBodyOp) {
        debug_assert_eq!(self.data.len(), x.data.len());
        for (y, x) in self.data.iter_mut().zip(&x.data) {
            *y += a * x;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        let dim = self.dim();
        (0..dim).map(|i| self.data[i * dim + i]).sum()
    }

    pub fn adjoint(&self) -> Self {
        let dim = self.dim();
        let mut out = self.clone();
        for i in 0..dim {
            for j in 0..dim {
                out.data[i * dim + j] = self.data[j * dim + i].conj();
            }
        }
        out
    }

    /// Indices whose digit for the atom with `stride` equals `digit`.
    fn matching(&self, stride: usize, digit: usize) -> Vec<usize> {
        let block = stride * self.d;
        let dim = self.dim();
        let mut out = Vec::with_capacity(dim / self.d);
        for hi in (0..dim).step_by(block) {
            let base = hi + digit * stride;
            out.extend(base..base + stride);
        }
        out
    }

    /// `out += (A_atom (x) 1) self`.
    pub fn left_mul_into(&self, atom: usize, a: &Sparse, coeff: C64, out: &mut ManyBodyOp) {
        let dim = self.dim();
        let stride = self.stride(atom);
        for &(r, c, v) in &a.entries {
            let v = v * coeff;
            for i in self.matching(stride, r) {
                let src = i - r * stride + c * stride;
                let (dst, src) = (&mut out.data[i * dim..(i + 1) * dim], &self.data[src * dim..(src + 1) * dim]);
                for (y, x) in dst.iter_mut().zip(src) {
                    *y += v * x;
                }
            }
        }
    }

    /// `out += self (A_atom (x) 1)`.
    pub fn right_mul_into(&self, atom: usize, a: &Sparse, coeff: C64, out: &mut ManyBodyOp) {
        let dim = self.dim();
        let stride = self.stride(atom);
        for &(r, c, v) in &a.entries {
            let v = v * coeff;
            let cols = self.matching(stride, c);
            let shift = r * stride;
            for i in 0..dim {
                let row = i * dim;
                for &j in &cols {
                    out.data[row + j] += v * self.data[row + j - c * stride + shift];
                }
            }
        }
    }

    fn matching_pair(&self, s1: usize, d1: usize, s2: usize, d2: usize) -> Vec<usize> {
        self.matching(s1, d1)
            .into_iter()
            .filter(|&i| self.digit(i, s2) == d2)
            .collect()
    }

    /// `out += (A_{first,second} (x) 1) self` for a two-atom operator.
    pub fn left_mul_pair_into(&self, first: usize, second: usize, a: &Sparse, coeff: C64, out: &mut ManyBodyOp) {
        let dim = self.dim();
        let (s1, s2) = (self.stride(first), self.stride(second));
        let d = self.d;
        for &(r, c, v) in &a.entries {
            let v = v * coeff;
            let (r1, r2, c1, c2) = (r / d, r % d, c / d, c % d);
            for i in self.matching_pair(s1, r1, s2, r2) {
                let src = i - r1 * s1 - r2 * s2 + c1 * s1 + c2 * s2;
                let (dst, src) = (&mut out.data[i * dim..(i + 1) * dim], &self.data[src * dim..(src + 1) * dim]);
                for (y, x) in dst.iter_mut().zip(src) {
                    *y += v * x;
                }
            }
        }
    }

    /// `out += self (A_{first,second} (x) 1)` for a two-atom operator.
    pub fn right_mul_pair_into(&self, first: usize, second: usize, a: &Sparse, coeff: C64, out: &mut ManyBodyOp) {
        let dim = self.dim();
        let (s1, s2) = (self.stride(first), self.stride(second));
        let d = self.d;
        for &(r, c, v) in &a.entries {
            let v = v * coeff;
            let (r1, r2, c1, c2) = (r / d, r % d, c / d, c % d);
            let cols = self.matching_pair(s1, c1, s2, c2);
            let shift = r1 * s1 + r2 * s2;
            let unshift = c1 * s1 + c2 * s2;
            for i in 0..dim {
                let row = i * dim;
                for &j in &cols {
                    out.data[row + j] += v * self.data[row + j - unshift + shift];
                }
            }
        }
    }

    /// `out += coeff * A_atom self B_atom'` with the two factors possibly on different atoms.
    pub fn sandwich_into(
        &self,
        left_atom: usize,
        left: &Sparse,
        right_atom: usize,
        right: &Sparse,
        coeff: C64,
        out: &mut ManyBodyOp,
    ) {
        let dim = self.dim();
        let (sl, sr) = (self.stride(left_atom), self.stride(right_atom));
        for &(lr, lc, lv) in &left.entries {
            let rows = self.matching(sl, lr);
            for &(rr, rc, rv) in &right.entries {
                let v = lv * rv * coeff;
                let cols = self.matching(sr, rc);
                for &i in &rows {
                    let si = i - lr * sl + lc * sl;
                    let (row, srow) = (i * dim, si * dim);
                    for &j in &cols {
                        out.data[row + j] += v * self.data[srow + j - rc * sr + rr * sr];
                    }
                }
            }
        }
    }

    /// Partial contraction `Tr_last[self (1 (x) rho)]`, removing the last atom.
    pub fn contract_last(&self, rho: &DMatrix<C64>) -> ManyBodyOp {
        let d = self.d;
        let dim = self.dim();
        let mut out = ManyBodyOp::zeros(self.atoms - 1, d);
        let small = out.dim();
        for i in 0..small {
            for j in 0..small {
                let mut acc = C64::new(0.0, 0.0);
                for s in 0..d {
                    for t in 0..d {
                        let r = rho[(t, s)];
                        if r.re != 0.0 || r.im != 0.0 {
                            acc += self.data[(i * d + s) * dim + j * d + t] * r;
                        }
                    }
                }
                out.data[i * small + j] = acc;
            }
        }
        out
    }

    /// `Tr[self (rho_0 (x) rho_1 (x) ...)]`.
    pub fn expectation_product(&self, rhos: &[&DMatrix<C64>]) -> C64 {
        assert_eq!(rhos.len(), self.atoms);
        let mut current = self.clone();
        for rho in rhos.iter().rev().take(self.atoms - 1) {
            current = current.contract_last(rho);
        }
        let rho = rhos[0];
        let d = self.d;
        let mut acc = C64::new(0.0, 0.0);
        for s in 0..d {
            for t in 0..d {
                acc += current.data[s * d + t] * rho[(t, s)];
            }
        }
        acc
    }
}
