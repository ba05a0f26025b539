//! Generators of the single-cycle dynamics: laser pulses, radiative decay,
//! resonant dipole-dipole coupling and the fluorescence observable.
//!
//! Decay and coupling act on observables (Heisenberg picture) unless the
//! method name says otherwise; the state-side decay is only needed between
//! the two pulses, where it is solved in closed form.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operator::{ManyBodyOp, Sparse};
use crate::species::{all_lowering_operators, spherical_unit, Species, VectorOperator};
use crate::C64;

/// Harmonic bookkeeping of one pulse: the multiplicity of the phase of each
/// excited manifold (slot 0: first excited manifold, slot 1: second).
pub type Harmonic = [i32; 2];

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Single-atom operators shared by all generators.
#[derive(Clone, Debug)]
pub struct AtomOperators {
    pub dim: usize,
    pub gamma: f64,
    /// Block label of every basis state: 0 ground, `k + 1` for excited manifold `k`.
    pub block: Vec<usize>,
    pub lowering: Vec<VectorOperator>,
    /// Sparse spherical components `S_q` (index `q + 1`) per excited manifold.
    pub spherical: Vec<[Sparse; 3]>,
    pub spherical_adj: Vec<[Sparse; 3]>,
}

impl AtomOperators {
    pub fn new(species: &Species) -> Self {
        let dim = species.dim();
        let block = (0..dim).map(|s| species.manifold_of(s)).collect();
        let lowering = all_lowering_operators(species);
        let spherical: Vec<[Sparse; 3]> = lowering
            .iter()
            .map(|l| [0, 1, 2].map(|q| Sparse::from_dense(&l.spherical[q])))
            .collect();
        let spherical_adj = spherical
            .iter()
            .map(|s| [s[0].adjoint(), s[1].adjoint(), s[2].adjoint()])
            .collect();
        AtomOperators {
            dim,
            gamma: species.gamma,
            block,
            lowering,
            spherical,
            spherical_adj,
        }
    }

    pub fn n_excited(&self) -> usize {
        self.lowering.len()
    }

    pub fn is_excited(&self, state: usize) -> bool {
        self.block[state] != 0
    }

    /// Projector onto block `b`.
    pub fn projector(&self, b: usize) -> DMatrix<C64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| if i == j && self.block[i] == b { c(1.0) } else { c(0.0) })
    }

    pub fn harmonic_of_block(b: usize) -> Harmonic {
        match b {
            1 => [1, 0],
            2 => [0, 1],
            _ => [0, 0],
        }
    }
}

/// Columns are the spherical unit vectors `e_{-1}, e_0, e_{+1}`.
fn spherical_frame() -> Matrix3<C64> {
    let mut e = Matrix3::zeros();
    for q in -1..=1i32 {
        let v = spherical_unit(q);
        for k in 0..3 {
            e[(k, (q + 1) as usize)] = v[k];
        }
    }
    e
}

/// Cartesian tensor `A_kl` contracted as `sum_kl A_kl X_k^dagger Y_l`, moved to
/// the spherical components of `X` and `Y`.
fn to_spherical(a: &Matrix3<C64>) -> Matrix3<C64> {
    let e = spherical_frame();
    e.adjoint() * a * e
}

// ---------------------------------------------------------------------------
// Pulses

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub index: usize,
    /// Arrival time, s.
    pub time: f64,
    /// Pulse area, rad.
    pub area: f64,
    /// Real linear polarisation, perpendicular to the beam axis z.
    pub polarization: Vector3<f64>,
    /// Phase modulation frequency, rad/s.
    pub modulation: f64,
}

impl PulseEvent {
    pub fn validate(&self) -> Result<()> {
        if !self.area.is_finite() || self.area < 0.0 {
            return Err(invalid("area", format!("{} must be finite and non-negative", self.area)));
        }
        if (self.polarization.norm() - 1.0).abs() > 1e-12 {
            return Err(invalid("polarization", "must be a unit vector"));
        }
        if self.polarization.z.abs() > 1e-12 {
            return Err(invalid("polarization", "must be perpendicular to the beam axis z"));
        }
        Ok(())
    }
}

/// `U = exp(-i (theta/2) sum_J (D_J^dagger . e + h.c.))` with its gauge structure.
#[derive(Clone, Debug)]
pub struct PulseUnitary {
    pub u0: DMatrix<C64>,
    block: Vec<usize>,
    n_blocks: usize,
}

pub fn pulse_unitary(ops: &AtomOperators, area: f64, polarization: &Vector3<f64>) -> Result<PulseUnitary> {
    if !area.is_finite() {
        return Err(Error::NonFinite);
    }
    let e = polarization.map(c);
    let mut h = DMatrix::<C64>::zeros(ops.dim, ops.dim);
    for l in &ops.lowering {
        let down = l.dot(&e);
        h += down.adjoint() + down;
    }
    let u0 = if area == 0.0 {
        DMatrix::identity(ops.dim, ops.dim)
    } else {
        exp_hermitian(&h, -0.5 * area)
    };
    Ok(PulseUnitary {
        u0,
        block: ops.block.clone(),
        n_blocks: ops.n_excited() + 1,
    })
}

/// `exp(i s H)` for Hermitian `H`.
fn exp_hermitian(h: &DMatrix<C64>, s: f64) -> DMatrix<C64> {
    let eig = h.clone().symmetric_eigen();
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| C64::from_polar(1.0, s * x)));
    &eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}

impl PulseUnitary {
    fn block_mask(&self, x: &DMatrix<C64>, a: usize, b: usize) -> DMatrix<C64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            if self.block[i] == a && self.block[j] == b {
                x[(i, j)]
            } else {
                c(0.0)
            }
        })
    }

    /// `G U0 G^dagger` with `G = exp(-i sum_k phi_k N_k)`.
    pub fn at_phases(&self, phi: [f64; 2]) -> DMatrix<C64> {
        let g: Vec<C64> = self
            .block
            .iter()
            .map(|&b| {
                let h = AtomOperators::harmonic_of_block(b);
                C64::from_polar(1.0, -(h[0] as f64 * phi[0] + h[1] as f64 * phi[1]))
            })
            .collect();
        DMatrix::from_fn(self.u0.nrows(), self.u0.ncols(), |i, j| g[i] * self.u0[(i, j)] * g[j].conj())
    }

    /// Harmonic decomposition of `U(phi) x U(phi)^dagger = sum_n exp(i n.phi) x_n`.
    pub fn conjugate_tagged(&self, x: &DMatrix<C64>) -> BTreeMap<Harmonic, DMatrix<C64>> {
        let mut out: BTreeMap<Harmonic, DMatrix<C64>> = BTreeMap::new();
        let h = AtomOperators::harmonic_of_block;
        for a in 0..self.n_blocks {
            for b in 0..self.n_blocks {
                let xab = self.block_mask(x, a, b);
                if xab.iter().all(|v| v.norm() == 0.0) {
                    continue;
                }
                let y = &self.u0 * xab * self.u0.adjoint();
                for cc in 0..self.n_blocks {
                    for d in 0..self.n_blocks {
                        let ycd = self.block_mask(&y, cc, d);
                        if ycd.iter().all(|v| v.norm() < 1e-300) {
                            continue;
                        }
                        let n = [
                            h(a)[0] - h(b)[0] - h(cc)[0] + h(d)[0],
                            h(a)[1] - h(b)[1] - h(cc)[1] + h(d)[1],
                        ];
                        *out.entry(n).or_insert_with(|| DMatrix::zeros(x.nrows(), x.ncols())) += ycd;
                    }
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Decay

/// Radiative decay with one rate `gamma` shared by all excited manifolds.
#[derive(Clone, Debug)]
pub struct DecayGenerator {
    pub ops: AtomOperators,
}

/// One exponential mode `exp(-half_gammas * gamma/2 * t) * op`.
#[derive(Clone, Debug)]
pub struct DecayMode {
    pub half_gammas: u32,
    pub op: DMatrix<C64>,
}

impl DecayGenerator {
    pub fn new(ops: AtomOperators) -> Self {
        DecayGenerator { ops }
    }

    fn feeding(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for l in &self.ops.lowering {
            for s in &l.spherical {
                out += s * x * s.adjoint();
            }
        }
        out * c(self.ops.gamma)
    }

    fn excited_projector(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.ops.dim, self.ops.dim, |i, j| {
            if i == j && self.ops.is_excited(i) {
                c(1.0)
            } else {
                c(0.0)
            }
        })
    }

    /// State-side generator on one atom.
    pub fn schrodinger(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        let p = self.excited_projector();
        self.feeding(x) - (&p * x + x * &p) * c(0.5 * self.ops.gamma)
    }

    /// Observable-side generator on one atom.
    pub fn heisenberg(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        let p = self.excited_projector();
        let mut feed = DMatrix::zeros(x.nrows(), x.ncols());
        for l in &self.ops.lowering {
            for s in &l.spherical {
                feed += s.adjoint() * x * s;
            }
        }
        feed * c(self.ops.gamma) - (&p * x + x * &p) * c(0.5 * self.ops.gamma)
    }

    /// Closed-form `exp(L t) x` on one atom as a sum of exponential modes.
    pub fn modes(&self, x: &DMatrix<C64>) -> Vec<DecayMode> {
        let d = self.ops.dim;
        let exc = |i: usize| self.ops.is_excited(i);
        let pick = |f: &dyn Fn(usize, usize) -> bool| DMatrix::from_fn(d, d, |i, j| if f(i, j) { x[(i, j)] } else { c(0.0) });
        let ee = pick(&|i, j| exc(i) && exc(j));
        let coh = pick(&|i, j| exc(i) != exc(j));
        let gg = pick(&|i, j| !exc(i) && !exc(j));
        let fed = self.feeding(&ee) / c(self.ops.gamma);
        let candidates = [(2, &ee - &fed), (1, coh), (0, gg + fed)];
        candidates
            .into_iter()
            .filter(|(_, m)| m.iter().any(|v| v.norm() > 0.0))
            .map(|(half_gammas, op)| DecayMode { half_gammas, op })
            .collect()
    }

    /// Excitation count of a many-atom basis index.
    fn excitations(&self, atoms: usize, mut index: usize) -> u32 {
        let d = self.ops.dim;
        let mut k = 0;
        for _ in 0..atoms {
            if self.ops.is_excited(index % d) {
                k += 1;
            }
            index /= d;
        }
        k
    }

    fn grading(&self, atoms: usize) -> Vec<u32> {
        let dim = self.ops.dim.pow(atoms as u32);
        (0..dim).map(|i| self.excitations(atoms, i)).collect()
    }

    /// Heisenberg feeding term `gamma sum_a sum_J sum_q S_q^dagger X S_q`.
    pub fn feeding_heisenberg_many(&self, x: &ManyBodyOp, out: &mut ManyBodyOp) {
        let g = c(self.ops.gamma);
        for atom in 0..x.atoms {
            for (s, sa) in self.ops.spherical.iter().zip(&self.ops.spherical_adj) {
                for q in 0..3 {
                    x.sandwich_into(atom, &sa[q], atom, &s[q], g, out);
                }
            }
        }
    }

    /// Heisenberg generator on `N` atoms.
    pub fn heisenberg_many(&self, x: &ManyBodyOp) -> ManyBodyOp {
        let k = self.grading(x.atoms);
        let dim = x.dim();
        let mut out = ManyBodyOp::zeros(x.atoms, x.d);
        for i in 0..dim {
            for j in 0..dim {
                out.data[i * dim + j] = x.data[i * dim + j] * (-0.5 * self.ops.gamma * (k[i] + k[j]) as f64);
            }
        }
        self.feeding_heisenberg_many(x, &mut out);
        out
    }

    /// `R x = integral_0^inf exp(L^dagger t) x dt` for observables supported on
    /// matrix elements with at least one excitation.
    ///
    /// Backward substitution through the excitation grading: the diagonal part
    /// `-(gamma/2) K` is inverted entrywise and feeding raises `K` by two, so
    /// the series terminates after at most `N` steps.
    pub fn resolvent(&self, x: &ManyBodyOp) -> Result<ManyBodyOp> {
        let k = self.grading(x.atoms);
        let dim = x.dim();
        let scale = x.max_abs();
        let inv_diag = |y: &ManyBodyOp| -> Result<ManyBodyOp> {
            let mut out = y.clone();
            for i in 0..dim {
                for j in 0..dim {
                    let kk = k[i] + k[j];
                    let v = &mut out.data[i * dim + j];
                    if kk == 0 {
                        if v.norm() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                            return Err(Error::Grading(format!(
                                "non-decaying component {:.3e} at ({i}, {j})",
                                v.norm()
                            )));
                        }
                        *v = c(0.0);
                    } else {
                        *v /= 0.5 * self.ops.gamma * kk as f64;
                    }
                }
            }
            Ok(out)
        };
        let mut term = inv_diag(x)?;
        let mut acc = term.clone();
        for _ in 0..x.atoms {
            let mut fed = ManyBodyOp::zeros(x.atoms, x.d);
            self.feeding_heisenberg_many(&term, &mut fed);
            if fed.max_abs() == 0.0 {
                break;
            }
            term = inv_diag(&fed)?;
            acc.axpy(c(1.0), &term);
        }
        Ok(acc)
    }
}

// ---------------------------------------------------------------------------
// Coupling

/// Which half of the coupling: the part carrying `T` (pair phase +1) or `T*`
/// (pair phase -1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CouplingPart {
    Plus,
    Minus,
}

impl CouplingPart {
    pub fn phase(self) -> i32 {
        match self {
            CouplingPart::Plus => 1,
            CouplingPart::Minus => -1,
        }
    }
}

#[derive(Clone, Debug)]
struct OrderedTerms {
    /// `sum_{q'} (left_{q'} on one atom) X (S_{q'} on the other)`.
    sandwiches: Vec<(usize, Sparse, usize, Sparse)>,
    /// Two-atom operator `(first, second, op)` multiplied on one side.
    pair: (usize, usize, Sparse),
}

/// Resonant coupling of one unordered pair, both orderings and both parts.
#[derive(Clone, Debug)]
pub struct PairCoupling {
    pub a: usize,
    pub b: usize,
    plus: Vec<OrderedTerms>,
    minus: Vec<OrderedTerms>,
}

impl PairCoupling {
    /// `t` multiplies the `T` part; `t_conj` is used verbatim in the `T*` part
    /// (pass `conj(t)` for the physical generator, or independent matrices
    /// for orientation-mode expansions).
    pub fn new(
        ops: &AtomOperators,
        a: usize,
        b: usize,
        t: &Matrix3<C64>,
        t_conj: &Matrix3<C64>,
    ) -> Result<Self> {
        if a == b {
            return Err(Error::SameAtomPair(a));
        }
        let tp = to_spherical(t);
        let tm = to_spherical(t_conj);
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for (alpha, beta) in [(a, b), (b, a)] {
            for (s, sa) in ops.spherical.iter().zip(&ops.spherical_adj) {
                // T part: sum T~_{qq'} (S_q^dag(beta) X S_q'(alpha) - X S_q^dag(beta) S_q'(alpha)).
                plus.push(ordered_terms(ops, s, sa, &tp, beta, alpha));
                // T* part: sum C~_{qq'} (S_q^dag(alpha) X S_q'(beta) - S_q^dag(alpha) S_q'(beta) X).
                minus.push(ordered_terms(ops, s, sa, &tm, alpha, beta));
            }
        }
        Ok(PairCoupling { a, b, plus, minus })
    }

    /// `out += coeff * L_part x` in the Heisenberg picture.
    pub fn apply(&self, part: CouplingPart, x: &ManyBodyOp, coeff: C64, out: &mut ManyBodyOp) {
        if self.a >= x.atoms || self.b >= x.atoms {
            panic!("pair ({}, {}) outside {}-atom operator", self.a, self.b, x.atoms);
        }
        let terms = match part {
            CouplingPart::Plus => &self.plus,
            CouplingPart::Minus => &self.minus,
        };
        for t in terms {
            for (la, l, ra, r) in &t.sandwiches {
                x.sandwich_into(*la, l, *ra, r, coeff, out);
            }
            let (f, s, p) = &t.pair;
            match part {
                CouplingPart::Plus => x.right_mul_pair_into(*f, *s, p, -coeff, out),
                CouplingPart::Minus => x.left_mul_pair_into(*f, *s, p, -coeff, out),
            }
        }
    }

    pub fn apply_all(&self, x: &ManyBodyOp) -> ManyBodyOp {
        let mut out = ManyBodyOp::zeros(x.atoms, x.d);
        self.apply(CouplingPart::Plus, x, c(1.0), &mut out);
        self.apply(CouplingPart::Minus, x, c(1.0), &mut out);
        out
    }
}

/// Terms `sum T~_{qq'} (S_q^dag(raised) X S_q'(lowered))` plus the two-atom
/// operator `sum T~_{qq'} S_q^dag(raised) S_q'(lowered)`.
fn ordered_terms(
    ops: &AtomOperators,
    s: &[Sparse; 3],
    sa: &[Sparse; 3],
    tt: &Matrix3<C64>,
    raised: usize,
    lowered: usize,
) -> OrderedTerms {
    let d = ops.dim;
    let mut sandwiches = Vec::new();
    for qp in 0..3 {
        let mut entries = Vec::new();
        for q in 0..3 {
            let w = tt[(q, qp)];
            if w.norm() == 0.0 {
                continue;
            }
            entries.extend(sa[q].entries.iter().map(|&(r, cc, v)| (r, cc, v * w)));
        }
        let left = merge(d, entries);
        if !left.is_empty() && !s[qp].is_empty() {
            sandwiches.push((raised, left, lowered, s[qp].clone()));
        }
    }
    let mut pair = Vec::new();
    for q in 0..3 {
        for qp in 0..3 {
            let w = tt[(q, qp)];
            if w.norm() == 0.0 {
                continue;
            }
            for &(r1, c1, v1) in &sa[q].entries {
                for &(r2, c2, v2) in &s[qp].entries {
                    pair.push((r1 * d + r2, c1 * d + c2, v1 * v2 * w));
                }
            }
        }
    }
    OrderedTerms {
        sandwiches,
        pair: (raised, lowered, merge(d * d, pair)),
    }
}

fn merge(dim: usize, entries: Vec<(usize, usize, C64)>) -> Sparse {
    let mut map: BTreeMap<(usize, usize), C64> = BTreeMap::new();
    for (r, cc, v) in entries {
        *map.entry((r, cc)).or_insert(c(0.0)) += v;
    }
    Sparse {
        dim,
        entries: map
            .into_iter()
            .filter(|(_, v)| v.norm() > 1e-300)
            .map(|((r, cc), v)| (r, cc, v))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Detection

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorShape {
    Cone,
    Point,
}

/// `K = integral (I - k k) dOmega` over the detector aperture.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionTensor {
    pub k: Matrix3<f64>,
    pub direction: Vector3<f64>,
    pub solid_angle: f64,
}

pub fn detection_tensor(direction: &Vector3<f64>, solid_angle: f64, shape: DetectorShape) -> Result<DetectionTensor> {
    if !(solid_angle > 0.0 && solid_angle <= 4.0 * PI * (1.0 + 1e-15)) {
        return Err(Error::InvalidSolidAngle(solid_angle));
    }
    let norm = direction.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidGeometry("detector direction must be non-zero".into()));
    }
    let a = direction / norm;
    let aa = a * a.transpose();
    let id = Matrix3::identity();
    let k = match shape {
        DetectorShape::Point => (id - aa) * solid_angle,
        DetectorShape::Cone => {
            // Uniform cone of half-angle acos(c0); moments of cos^2 over the cap.
            let c0 = (1.0 - solid_angle / (2.0 * PI)).max(-1.0);
            let cos2 = (1.0 - c0.powi(3)) / (3.0 * (1.0 - c0));
            let sin2 = 1.0 - cos2;
            let second = aa * cos2 + (id - aa) * (0.5 * sin2);
            (id - second) * solid_angle
        }
    };
    Ok(DetectionTensor {
        k,
        direction: a,
        solid_angle,
    })
}

impl DetectionTensor {
    pub fn full_sphere() -> Self {
        detection_tensor(&Vector3::x(), 4.0 * PI, DetectorShape::Cone).expect("full sphere")
    }
}

/// Single-atom observable `sum_J D_J^dagger . K . D_J` (overall prefactor set to one).
pub fn detection_operator(ops: &AtomOperators, det: &DetectionTensor) -> DMatrix<C64> {
    let mut o = DMatrix::zeros(ops.dim, ops.dim);
    for l in &ops.lowering {
        let comps = l.cartesian_all();
        for i in 0..3 {
            for j in 0..3 {
                let kij = det.k[(i, j)];
                if kij != 0.0 {
                    o += comps[i].adjoint() * &comps[j] * c(kij);
                }
            }
        }
    }
    o
}

/// `sum_alpha` of the single-atom observable on `atoms` atoms.
pub fn detection_operator_many(ops: &AtomOperators, atoms: usize, det: &DetectionTensor) -> ManyBodyOp {
    let single = detection_operator(ops, det);
    let mut out = ManyBodyOp::zeros(atoms, ops.dim);
    for a in 0..atoms {
        out.axpy(c(1.0), &ManyBodyOp::embed(atoms, a, &single));
    }
    out
}
