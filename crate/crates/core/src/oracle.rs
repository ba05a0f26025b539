//! Brute-force lock-in simulation used to validate the phase-tag engine.
//!
//! Every excitation cycle is simulated explicitly: both pulses carry their
//! full numeric phases (position, optical, modulation and Doppler), the
//! master equation is solved for the emitted intensity, and the cycle series
//! is demodulated by a discrete Fourier projection. Disorder is averaged by
//! Monte Carlo.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::ground_mixture;
use crate::error::{invalid, Error, Result};
use crate::kernel::{green_tensor, InteractionMode, PairGeometry};
use crate::liouville::{pulse_unitary, AtomOperators, DetectionTensor, PulseUnitary};
use crate::species::{all_lowering_operators, Species};
use crate::C64;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

// ---------------------------------------------------------------------------
// Adaptive Runge-Kutta

/// Dormand-Prince 5(4) with max-norm error control.
#[derive(Clone, Copy, Debug)]
pub struct Rk45 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub last_step: f64,
}

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C_NODES: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

impl Rk45 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Rk45 {
            rtol,
            atol,
            max_steps: 1_000_000,
        }
    }

    /// Integrates `y' = f(t, y)` from `t0` to `t1`; `on_step` sees every
    /// accepted state.
    pub fn integrate<F, S>(
        &self,
        mut f: F,
        t0: f64,
        y0: DVector<C64>,
        t1: f64,
        h0: f64,
        mut on_step: S,
    ) -> Result<(DVector<C64>, StepStats)>
    where
        F: FnMut(f64, &DVector<C64>) -> DVector<C64>,
        S: FnMut(f64, &DVector<C64>) -> Result<()>,
    {
        let mut stats = StepStats::default();
        let mut t = t0;
        let mut y = y0;
        if t1 <= t0 {
            return Ok((y, stats));
        }
        let mut h = h0.min(t1 - t0);
        let mut k0 = f(t, &y);
        while t < t1 {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::Integrator(format!(
                    "step budget exhausted at t = {t:e} ({} accepted, {} rejected, h = {h:e})",
                    stats.accepted, stats.rejected
                )));
            }
            h = h.min(t1 - t);
            let mut ks: Vec<DVector<C64>> = Vec::with_capacity(7);
            ks.push(k0.clone());
            for s in 0..6 {
                let mut ys = y.clone();
                for (j, kj) in ks.iter().enumerate() {
                    if A[s][j] != 0.0 {
                        ys.axpy(c(h * A[s][j]), kj, c(1.0));
                    }
                }
                if s == 5 {
                    // Last stage is evaluated at the proposed solution.
                    let k = f(t + h, &ys);
                    ks.push(k);
                    let mut err = DVector::zeros(y.len());
                    for (j, kj) in ks.iter().enumerate() {
                        if E[j] != 0.0 {
                            err.axpy(c(h * E[j]), kj, c(1.0));
                        }
                    }
                    let mut en: f64 = 0.0;
                    for i in 0..y.len() {
                        let sc = self.atol + self.rtol * y[i].norm().max(ys[i].norm());
                        en = en.max(err[i].norm() / sc);
                    }
                    if !en.is_finite() {
                        return Err(Error::Integrator(format!("non-finite error estimate at t = {t:e}")));
                    }
                    if en <= 1.0 {
                        t += h;
                        y = ys;
                        k0 = ks.pop().expect("last stage");
                        stats.accepted += 1;
                        stats.last_step = h;
                        on_step(t, &y)?;
                    } else {
                        stats.rejected += 1;
                    }
                    let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
                    h *= fac;
                    if h < 1e-14 * (t1 - t0).abs() {
                        return Err(Error::Integrator(format!("step size underflow at t = {t:e}, h = {h:e}")));
                    }
                    break;
                }
                let k = f(t + C_NODES[s + 1] * h, &ys);
                ks.push(k);
            }
        }
        Ok((y, stats))
    }
}

// ---------------------------------------------------------------------------
// Sparse superoperators

/// Compressed-row superoperator acting on row-major vectorised matrices.
#[derive(Clone, Debug)]
pub struct SuperOp {
    pub n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SuperOp {
    fn from_triplets(n: usize, mut t: Vec<(usize, usize, C64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<C64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, cc, v) in t {
            if last == Some((r, cc)) {
                *vals.last_mut().expect("entry") += v;
                continue;
            }
            cols.push(cc);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, cc));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SuperOp { n, row_ptr, cols, vals }
    }

    pub fn apply(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut y = DVector::zeros(self.n);
        for r in 0..self.n {
            let mut acc = c(0.0);
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            y[r] = acc;
        }
        y
    }

    /// Conjugate transpose, i.e. the adjoint under `<A, B> = Tr[A^dagger B]`.
    pub fn adjoint(&self) -> SuperOp {
        let mut t = Vec::with_capacity(self.vals.len());
        for r in 0..self.n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                t.push((self.cols[p], r, self.vals[p].conj()));
            }
        }
        SuperOp::from_triplets(self.n, t)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn dense_block(&self, keep: &[usize]) -> DMatrix<C64> {
        let mut pos = vec![usize::MAX; self.n];
        for (i, &k) in keep.iter().enumerate() {
            pos[k] = i;
        }
        let mut m = DMatrix::zeros(keep.len(), keep.len());
        for (i, &r) in keep.iter().enumerate() {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let j = pos[self.cols[p]];
                if j != usize::MAX {
                    m[(i, j)] += self.vals[p];
                }
            }
        }
        m
    }
}

fn to_vec(m: &DMatrix<C64>) -> DVector<C64> {
    let n = m.nrows();
    DVector::from_fn(n * m.ncols(), |k, _| m[(k / n, k % n)])
}

fn from_vec(v: &DVector<C64>, n: usize) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |i, j| v[i * n + j])
}

fn nonzeros(m: &DMatrix<C64>) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != c(0.0) {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

/// Triplets of `X -> coeff * a X b` for `D x D` matrices `a`, `b`.
fn sandwich(a: &DMatrix<C64>, b: &DMatrix<C64>, coeff: C64, out: &mut Vec<(usize, usize, C64)>) {
    let n = a.nrows();
    let an = nonzeros(a);
    let bn = nonzeros(b);
    for &(i, k, av) in &an {
        for &(l, j, bv) in &bn {
            out.push((i * n + j, k * n + l, coeff * av * bv));
        }
    }
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    DMatrix::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

fn embed(op: &DMatrix<C64>, atom: usize, atoms: usize) -> DMatrix<C64> {
    let d = op.nrows();
    let mut out = DMatrix::identity(1, 1);
    for a in 0..atoms {
        let f = if a == atom { op.clone() } else { DMatrix::identity(d, d) };
        out = kron(&out, &f);
    }
    out
}

// ---------------------------------------------------------------------------
// Master equation

/// Largest many-atom Hilbert dimension the oracle accepts.
pub const MAX_ORACLE_DIM: usize = 64;
/// Above this many decaying coefficients the detection integral is
/// integrated in time instead of solved directly.
pub const DIRECT_SOLVE_LIMIT: usize = 1200;

/// Decay and dipole-dipole coupling of `atoms` atoms on the full
/// `D = d^atoms` dimensional space.
#[derive(Clone, Debug)]
pub struct MasterEquation {
    pub atoms: usize,
    pub d: usize,
    pub dim: usize,
    pub gamma: f64,
    decay: Vec<(usize, usize, C64)>,
    /// Per pair: `[k][l]` triplets multiplying `T_kl` and `conj(T_kl)`.
    coupling: Vec<PairTerms>,
    pub pairs: Vec<(usize, usize)>,
    /// `true` where every atom is in its ground manifold.
    all_ground: Vec<bool>,
    /// Number of excited atoms in every basis state.
    excitations: Vec<usize>,
}

#[derive(Clone, Debug)]
struct PairTerms {
    plus: Vec<Vec<Vec<(usize, usize, C64)>>>,
    minus: Vec<Vec<Vec<(usize, usize, C64)>>>,
}

impl MasterEquation {
    pub fn new(species: &Species, atoms: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let d = species.dim();
        let dim = d.checked_pow(atoms as u32).unwrap_or(usize::MAX);
        if atoms == 0 || dim > MAX_ORACLE_DIM {
            return Err(Error::AtomCount(atoms));
        }
        for &(a, b) in pairs {
            if a == b {
                return Err(Error::SameAtomPair(a));
            }
            if a >= atoms || b >= atoms {
                return Err(Error::UnknownAtom {
                    index: a.max(b),
                    atoms,
                });
            }
        }
        let gamma = species.gamma;
        let lowering = all_lowering_operators(species);
        // cart[atom][manifold][k]
        let cart: Vec<Vec<[DMatrix<C64>; 3]>> = (0..atoms)
            .map(|a| {
                lowering
                    .iter()
                    .map(|l| l.cartesian_all().map(|m| embed(&m, a, atoms)))
                    .collect()
            })
            .collect();
        let id = DMatrix::<C64>::identity(dim, dim);
        let mut decay = Vec::new();
        for per_atom in &cart {
            for comps in per_atom {
                let mut p = DMatrix::zeros(dim, dim);
                for dk in comps {
                    let dk_adj = dk.adjoint();
                    sandwich(&dk_adj, dk, c(gamma), &mut decay);
                    p += dk_adj * dk;
                }
                sandwich(&p, &id, c(-0.5 * gamma), &mut decay);
                sandwich(&id, &p, c(-0.5 * gamma), &mut decay);
            }
        }
        let mut coupling = Vec::new();
        for &(a, b) in pairs {
            let mut plus = vec![vec![Vec::new(); 3]; 3];
            let mut minus = vec![vec![Vec::new(); 3]; 3];
            for (al, be) in [(a, b), (b, a)] {
                for j in 0..lowering.len() {
                    for k in 0..3 {
                        for l in 0..3 {
                            let da_adj = cart[al][j][k].adjoint();
                            let db = &cart[be][j][l];
                            // conj(T_kl) D+_{al,k} [Q, D_{be,l}]
                            sandwich(&da_adj, db, c(1.0), &mut minus[k][l]);
                            sandwich(&(&da_adj * db), &id, c(-1.0), &mut minus[k][l]);
                            // T_kl [D+_{be,k}, Q] D_{al,l}
                            let db_adj = cart[be][j][k].adjoint();
                            let da = &cart[al][j][l];
                            sandwich(&db_adj, da, c(1.0), &mut plus[k][l]);
                            sandwich(&id, &(&db_adj * da), c(-1.0), &mut plus[k][l]);
                        }
                    }
                }
            }
            coupling.push(PairTerms { plus, minus });
        }
        let excitations: Vec<usize> = (0..dim)
            .map(|i| {
                let mut r = i;
                (0..atoms)
                    .filter(|_| {
                        let s = r % d;
                        r /= d;
                        species.manifold_of(s) != 0
                    })
                    .count()
            })
            .collect();
        let all_ground = excitations.iter().map(|&n| n == 0).collect();
        Ok(MasterEquation {
            atoms,
            d,
            dim,
            gamma,
            decay,
            coupling,
            pairs: pairs.to_vec(),
            all_ground,
            excitations,
        })
    }

    /// Heisenberg generator for the pair tensors `t[p]` of `self.pairs[p]`.
    pub fn heisenberg(&self, t: &[Matrix3<C64>]) -> Result<SuperOp> {
        if t.len() != self.pairs.len() {
            return Err(Error::LengthMismatch {
                expected: self.pairs.len(),
                actual: t.len(),
            });
        }
        let mut trip = self.decay.clone();
        for (terms, tp) in self.coupling.iter().zip(t) {
            for k in 0..3 {
                for l in 0..3 {
                    let (tp_kl, tm_kl) = (tp[(k, l)], tp[(k, l)].conj());
                    trip.extend(terms.plus[k][l].iter().map(|&(r, cc, v)| (r, cc, v * tp_kl)));
                    trip.extend(terms.minus[k][l].iter().map(|&(r, cc, v)| (r, cc, v * tm_kl)));
                }
            }
        }
        Ok(SuperOp::from_triplets(self.dim * self.dim, trip))
    }

    /// Vectorised indices with at least one excited index.
    fn decaying_indices(&self) -> Vec<usize> {
        let n = self.dim;
        (0..n * n)
            .filter(|&k| !(self.all_ground[k / n] && self.all_ground[k % n]))
            .collect()
    }

    /// Decaying indices whose ket and bra carry the same number of
    /// excitations. The generator conserves that difference, so observables
    /// supported there never leave it.
    fn balanced_indices(&self) -> Vec<usize> {
        let n = self.dim;
        self.decaying_indices()
            .into_iter()
            .filter(|&k| self.excitations[k / n] == self.excitations[k % n])
            .collect()
    }

    fn is_balanced(&self, o: &DMatrix<C64>) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| self.excitations[i] == self.excitations[j] || o[(i, j)] == c(0.0)))
    }

    /// `int_0^inf exp(L t) O dt` in the Heisenberg picture.
    ///
    /// The all-ground block is never populated from `O` and carries the
    /// stationary modes, so the integral is `-L^{-1} O` on its complement.
    pub fn integrated_observable(&self, l: &SuperOp, o: &DMatrix<C64>, tol: f64) -> Result<DMatrix<C64>> {
        let keep = if self.is_balanced(o) {
            self.balanced_indices()
        } else {
            self.decaying_indices()
        };
        let ov = to_vec(o);
        if keep.len() <= DIRECT_SOLVE_LIMIT {
            let m = l.dense_block(&keep);
            let rhs = DVector::from_iterator(keep.len(), keep.iter().map(|&k| -ov[k]));
            let sol = m
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Integrator("singular decay generator".into()))?;
            let mut y = DVector::zeros(self.dim * self.dim);
            for (i, &k) in keep.iter().enumerate() {
                y[k] = sol[i];
            }
            return Ok(from_vec(&y, self.dim));
        }
        self.integrated_observable_rk(l, o, tol)
    }

    /// Largest real part of the generator on the decaying sector, in units
    /// of `gamma`. Strong coupling in this form can produce growing modes.
    pub fn spectral_abscissa(&self, l: &SuperOp) -> Result<f64> {
        let m = l.dense_block(&self.decaying_indices()) / c(self.gamma);
        let schur = nalgebra::Schur::try_new(m, 1e-14, 100_000)
            .ok_or_else(|| Error::Integrator("Schur decomposition did not converge".into()))?;
        Ok(schur.unpack().1.diagonal().iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max))
    }

    /// Errors unless every mode of the decaying sector decays.
    pub fn check_stability(&self, l: &SuperOp) -> Result<()> {
        let a = self.spectral_abscissa(l)?;
        if a >= 0.0 {
            return Err(Error::Integrator(format!(
                "coupled dynamics has a growing mode (rate {a:.3} gamma); increase the pair distance"
            )));
        }
        Ok(())
    }

    /// Same integral by explicit time stepping of `(X, int X)`.
    pub fn integrated_observable_rk(&self, l: &SuperOp, o: &DMatrix<C64>, tol: f64) -> Result<DMatrix<C64>> {
        let n2 = self.dim * self.dim;
        let ov = to_vec(o);
        let scale = ov.camax().max(f64::MIN_POSITIVE);
        let mut y0 = DVector::zeros(2 * n2);
        y0.rows_mut(0, n2).copy_from(&ov);
        let t_end = 60.0 / self.gamma;
        let rk = Rk45::new(tol, tol * scale / self.gamma);
        let (y, _) = rk.integrate(
            |_, y| {
                let x = y.rows(0, n2).into_owned();
                let mut dy = DVector::zeros(2 * n2);
                dy.rows_mut(0, n2).copy_from(&l.apply(&x));
                dy.rows_mut(n2, n2).copy_from(&x);
                dy
            },
            0.0,
            y0,
            t_end,
            0.01 / self.gamma,
            |_, _| Ok(()),
        )?;
        Ok(from_vec(&y.rows(n2, n2).into_owned(), self.dim))
    }
}

/// Invariants of the density matrix seen along a forward integration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub max_hermiticity_error: f64,
    pub max_trace_error: f64,
    pub min_eigenvalue: f64,
    pub steps: usize,
}

impl InvariantReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.max_hermiticity_error <= tol && self.max_trace_error <= tol && self.min_eigenvalue >= -1e-8
    }
}

fn observe(report: &mut InvariantReport, rho: &DMatrix<C64>, trace0: C64) {
    let h = (rho - rho.adjoint()).camax();
    report.max_hermiticity_error = report.max_hermiticity_error.max(h);
    report.max_trace_error = report.max_trace_error.max((rho.trace() - trace0).norm());
    let herm = (rho + rho.adjoint()) * c(0.5);
    let ev = herm.symmetric_eigenvalues().min();
    report.min_eigenvalue = report.min_eigenvalue.min(ev);
    report.steps += 1;
}

/// Forward integration of `rho` under `l_s` over `[0, t_end]`, returning the
/// final state, `int Tr[O rho] dt` and the invariant report.
pub fn integrate_forward(
    l_s: &SuperOp,
    rho0: &DMatrix<C64>,
    o: &DMatrix<C64>,
    t_end: f64,
    rate: f64,
    tol: f64,
) -> Result<(DMatrix<C64>, f64, InvariantReport)> {
    let n = rho0.nrows();
    let n2 = n * n;
    // Tr[O rho] = sum_ij O_ji rho_ij.
    let ot = to_vec(&o.transpose());
    let mut y0 = DVector::zeros(n2 + 1);
    y0.rows_mut(0, n2).copy_from(&to_vec(rho0));
    let trace0 = rho0.trace();
    let mut report = InvariantReport {
        min_eigenvalue: f64::INFINITY,
        ..Default::default()
    };
    observe(&mut report, rho0, trace0);
    let scale = rho0.camax().max(f64::MIN_POSITIVE);
    let rk = Rk45::new(tol, tol * scale);
    let (y, _) = rk.integrate(
        |_, y| {
            let r = y.rows(0, n2).into_owned();
            let dr = l_s.apply(&r);
            let mut dy = DVector::zeros(n2 + 1);
            dy.rows_mut(0, n2).copy_from(&dr);
            dy[n2] = ot.dot(&r);
            dy
        },
        0.0,
        y0,
        t_end,
        0.01 / rate,
        |_, y| {
            let r = from_vec(&y.rows(0, n2).into_owned(), n);
            observe(&mut report, &r, trace0);
            Ok(())
        },
    )?;
    let rho = from_vec(&y.rows(0, n2).into_owned(), n);
    Ok((rho, y[n2].re, report))
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleAtom {
    /// `k_L . r_0`, rad.
    pub position_phase: f64,
    /// `k_L . v`, rad/s.
    pub doppler: f64,
    pub driven: bool,
}

impl OracleAtom {
    pub fn at_rest(position_phase: f64) -> Self {
        OracleAtom {
            position_phase,
            doppler: 0.0,
            driven: true,
        }
    }
}

/// Coupling geometry of one pair, frozen over a cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePair {
    pub a: usize,
    pub b: usize,
    pub u: f64,
    pub n_hat: Vector3<f64>,
}

/// Modulation frequencies and cycle timing; cycle `m` starts at `m T_cyc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    /// rad/s per pulse.
    pub omega: [f64; 2],
    /// s.
    pub t_cyc: f64,
    pub cycles: usize,
}

impl Modulation {
    /// Frequencies on the DFT grid: `Omega_j T_cyc = 2 pi bins_j / cycles`.
    pub fn from_bins(bins: [i64; 2], cycles: usize, t_cyc: f64) -> Self {
        let w = |b: i64| 2.0 * PI * b as f64 / (cycles as f64 * t_cyc);
        Modulation {
            omega: [w(bins[0]), w(bins[1])],
            t_cyc,
            cycles,
        }
    }

    pub fn phase(&self, pulse: usize, cycle: usize) -> f64 {
        self.omega[pulse] * cycle as f64 * self.t_cyc
    }

    pub fn difference(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }

    /// Rejects configurations in which the `kappa` channel is undersampled
    /// or shares its bin with another harmonic pair `(a, b)`, `|a|, |b| <= max_harmonic`.
    pub fn check(&self, kappa: i32, max_harmonic: i32) -> Result<()> {
        let target = kappa as f64 * self.difference() * self.t_cyc;
        if target.abs() > PI / 2.0 {
            return Err(Error::Aliasing(format!(
                "kappa = {kappa} channel has {:.2} samples per period (need >= 4)",
                2.0 * PI / target.abs()
            )));
        }
        let m = self.cycles as f64;
        for a in -max_harmonic..=max_harmonic {
            for b in -max_harmonic..=max_harmonic {
                if (a, b) == (-kappa, kappa) {
                    continue;
                }
                let x = (a as f64 * self.omega[0] + b as f64 * self.omega[1]) * self.t_cyc - target;
                // Residual in DFT bins.
                let bins = x * m / (2.0 * PI);
                if (bins - bins.round()).abs() < 1e-6 && (bins.round() as i64).rem_euclid(self.cycles as i64) == 0 {
                    return Err(Error::Aliasing(format!(
                        "harmonics ({a}, {b}) alias onto the kappa = {kappa} channel"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub species: Species,
    /// Areas of the two pulses.
    pub areas: [f64; 2],
    pub polarization: Vector3<f64>,
    pub atoms: Vec<OracleAtom>,
    /// `None` switches the coupling off.
    pub mode: Option<InteractionMode>,
    pub pairs: Vec<OraclePair>,
    pub modulation: Modulation,
    /// Delays between the pulses, s.
    pub taus: Vec<f64>,
    pub couple_between_pulses: bool,
    pub detector: DetectionTensor,
    /// Relative tolerance of every time integration.
    pub tolerance: f64,
}

/// Shortest cycle accepted, in units of the lifetime.
pub const MIN_CYCLE_LIFETIMES: f64 = 40.0;

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::AtomCount(0));
        }
        if self.modulation.cycles < 2 {
            return Err(invalid("cycles", "need at least two cycles"));
        }
        if self.modulation.t_cyc * self.species.gamma < MIN_CYCLE_LIFETIMES {
            return Err(invalid(
                "t_cyc",
                format!("must exceed {MIN_CYCLE_LIFETIMES} lifetimes"),
            ));
        }
        if self.taus.iter().any(|&t| !(t >= 0.0)) {
            return Err(invalid("taus", "delays must be non-negative"));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1e-3) {
            return Err(invalid("tolerance", format!("{} not in (0, 1e-3)", self.tolerance)));
        }
        for p in &self.pairs {
            if p.a >= self.atoms.len() || p.b >= self.atoms.len() {
                return Err(Error::UnknownAtom {
                    index: p.a.max(p.b),
                    atoms: self.atoms.len(),
                });
            }
        }
        Ok(())
    }

    /// Harmonic bound per pulse used for the aliasing check.
    pub fn max_harmonic(&self) -> i32 {
        2 * self.atoms.iter().filter(|a| a.driven).count() as i32
    }

    /// Pair tensors `T` in the configured mode (zero when uncoupled).
    pub fn tensors(&self) -> Result<Vec<Matrix3<C64>>> {
        self.pairs
            .iter()
            .map(|p| match self.mode {
                None => Ok(Matrix3::zeros()),
                Some(mode) => {
                    let g = PairGeometry::from_u(p.u, p.n_hat)?;
                    green_tensor(&g, self.species.gamma, mode)
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Cycle simulation

/// Per-delay, per-cycle integrated intensities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub taus: Vec<f64>,
    /// `intensities[tau][cycle]`.
    pub intensities: Vec<Vec<f64>>,
}

/// Reusable pieces of a configuration that do not depend on the disorder.
pub struct OracleModel {
    pub me: MasterEquation,
    pulses: [PulseUnitary; 2],
    ground: DMatrix<C64>,
    observable: DMatrix<C64>,
    /// Single-atom decay propagators per delay, on vectorised matrices.
    propagators: Vec<DMatrix<C64>>,
}

impl OracleModel {
    pub fn new(cfg: &OracleConfig) -> Result<Self> {
        cfg.validate()?;
        let atoms = cfg.atoms.len();
        let pairs: Vec<(usize, usize)> = cfg.pairs.iter().map(|p| (p.a, p.b)).collect();
        let me = MasterEquation::new(&cfg.species, atoms, &pairs)?;
        let ops = AtomOperators::new(&cfg.species);
        let pulses = [
            pulse_unitary(&ops, cfg.areas[0], &cfg.polarization)?,
            pulse_unitary(&ops, cfg.areas[1], &cfg.polarization)?,
        ];
        let ground = ground_mixture(&cfg.species);
        // O = sum_atoms sum_J sum_kl K_kl D+_k D_l.
        let lowering = all_lowering_operators(&cfg.species);
        let d = cfg.species.dim();
        let mut single = DMatrix::<C64>::zeros(d, d);
        for l in &lowering {
            let cart = l.cartesian_all();
            for k in 0..3 {
                for m in 0..3 {
                    single += cart[k].adjoint() * &cart[m] * c(cfg.detector.k[(k, m)]);
                }
            }
        }
        let mut observable = DMatrix::zeros(me.dim, me.dim);
        for a in 0..atoms {
            observable += embed(&single, a, atoms);
        }
        let single_me = MasterEquation::new(&cfg.species, 1, &[])?;
        let l_s = single_me.heisenberg(&[])?.adjoint();
        let mut propagators = Vec::with_capacity(cfg.taus.len());
        for &tau in &cfg.taus {
            propagators.push(propagator(&l_s, d, tau, cfg.species.gamma, cfg.tolerance)?);
        }
        Ok(OracleModel {
            me,
            pulses,
            ground,
            observable,
            propagators,
        })
    }

    pub fn observable(&self) -> &DMatrix<C64> {
        &self.observable
    }

    /// Integrated detection observable for the configured geometry.
    pub fn detection_integral(&self, cfg: &OracleConfig) -> Result<DMatrix<C64>> {
        let l = self.me.heisenberg(&cfg.tensors()?)?;
        self.me.integrated_observable(&l, &self.observable, cfg.tolerance)
    }

    pub fn check_stability(&self, cfg: &OracleConfig) -> Result<()> {
        if cfg.pairs.is_empty() || cfg.mode.is_none() {
            return Ok(());
        }
        self.me.check_stability(&self.me.heisenberg(&cfg.tensors()?)?)
    }

    fn atom_phases(cfg: &OracleConfig, atom: &OracleAtom, pulse: usize, cycle: usize, tau: f64) -> [f64; 2] {
        let t = if pulse == 0 { 0.0 } else { tau };
        let base = atom.position_phase + cfg.modulation.phase(pulse, cycle) + atom.doppler * t;
        [base + cfg.species.omega1() * t, base + cfg.species.omega2() * t]
    }

    /// State of every atom after the second pulse, when no coupling acts
    /// between the pulses.
    pub fn product_state(&self, cfg: &OracleConfig, ti: usize, cycle: usize) -> DMatrix<C64> {
        let tau = cfg.taus[ti];
        let d = self.ground.nrows();
        let mut full = DMatrix::identity(1, 1);
        for atom in &cfg.atoms {
            let mut rho = self.ground.clone();
            if atom.driven {
                let u1 = self.pulses[0].at_phases(Self::atom_phases(cfg, atom, 0, cycle, tau));
                rho = &u1 * rho * u1.adjoint();
            }
            let v = &self.propagators[ti] * to_vec(&rho);
            rho = from_vec(&v, d);
            if atom.driven {
                let u2 = self.pulses[1].at_phases(Self::atom_phases(cfg, atom, 1, cycle, tau));
                rho = &u2 * rho * u2.adjoint();
            }
            full = kron(&full, &rho);
        }
        full
    }

    /// State after the second pulse with the coupling active between the pulses.
    fn coupled_state(&self, cfg: &OracleConfig, l_s: &SuperOp, ti: usize, cycle: usize) -> Result<DMatrix<C64>> {
        let tau = cfg.taus[ti];
        let atoms = cfg.atoms.len();
        let pulse = |p: usize| -> DMatrix<C64> {
            let mut u = DMatrix::identity(1, 1);
            for atom in &cfg.atoms {
                let ua = if atom.driven {
                    self.pulses[p].at_phases(Self::atom_phases(cfg, atom, p, cycle, tau))
                } else {
                    DMatrix::identity(self.ground.nrows(), self.ground.nrows())
                };
                u = kron(&u, &ua);
            }
            u
        };
        let mut rho0 = DMatrix::identity(1, 1);
        for _ in 0..atoms {
            rho0 = kron(&rho0, &self.ground);
        }
        let u1 = pulse(0);
        let rho1 = &u1 * rho0 * u1.adjoint();
        let zero = DMatrix::zeros(self.me.dim, self.me.dim);
        let (rho2, _, _) = integrate_forward(l_s, &rho1, &zero, tau, self.me.gamma, cfg.tolerance)?;
        let u2 = pulse(1);
        Ok(&u2 * rho2 * u2.adjoint())
    }

    /// Integrated intensity of every cycle for a detection integral `y`.
    pub fn simulate(&self, cfg: &OracleConfig, y: &DMatrix<C64>) -> Result<CycleRecord> {
        let l_s = if cfg.couple_between_pulses {
            Some(self.me.heisenberg(&cfg.tensors()?)?.adjoint())
        } else {
            None
        };
        let yt = y.transpose();
        let mut intensities = Vec::with_capacity(cfg.taus.len());
        for ti in 0..cfg.taus.len() {
            let mut row = Vec::with_capacity(cfg.modulation.cycles);
            for m in 0..cfg.modulation.cycles {
                let rho = match &l_s {
                    Some(l) => self.coupled_state(cfg, l, ti, m)?,
                    None => self.product_state(cfg, ti, m),
                };
                // Tr[Y rho] = sum_ij Y_ji rho_ij.
                row.push(yt.dot(&rho).re);
            }
            intensities.push(row);
        }
        Ok(CycleRecord {
            taus: cfg.taus.clone(),
            intensities,
        })
    }
}

/// Propagator `exp(L t)` of a `d x d` density matrix, column by column.
fn propagator(l_s: &SuperOp, d: usize, t: f64, rate: f64, tol: f64) -> Result<DMatrix<C64>> {
    let n2 = d * d;
    let mut p = DMatrix::zeros(n2, n2);
    if t == 0.0 {
        return Ok(DMatrix::identity(n2, n2));
    }
    let rk = Rk45::new(tol, tol * 1e-3);
    for k in 0..n2 {
        let mut e = DVector::zeros(n2);
        e[k] = c(1.0);
        let (y, _) = rk.integrate(|_, y| l_s.apply(y), 0.0, e, t, 0.01 / rate, |_, _| Ok(()))?;
        p.set_column(k, &y);
    }
    Ok(p)
}

/// Runs every cycle of one configuration.
pub fn simulate_cycles(cfg: &OracleConfig) -> Result<CycleRecord> {
    let model = OracleModel::new(cfg)?;
    model.check_stability(cfg)?;
    let y = model.detection_integral(cfg)?;
    model.simulate(cfg, &y)
}

// ---------------------------------------------------------------------------
// Lock-in demodulation

/// `(1/M) sum_m I_m exp(-i kappa Omega_21 m T_cyc)`.
pub fn lockin_demodulate(series: &[f64], kappa: i32, modulation: &Modulation) -> Result<C64> {
    if series.len() != modulation.cycles {
        return Err(Error::LengthMismatch {
            expected: modulation.cycles,
            actual: series.len(),
        });
    }
    let w = kappa as f64 * modulation.difference() * modulation.t_cyc;
    if w.abs() > PI / 2.0 {
        return Err(Error::Aliasing(format!("kappa = {kappa} channel undersampled")));
    }
    let mut acc = c(0.0);
    for (m, &v) in series.iter().enumerate() {
        acc += C64::from_polar(v, -w * m as f64);
    }
    Ok(acc / series.len() as f64)
}

/// Demodulated interferogram of a cycle record.
pub fn demodulate_record(record: &CycleRecord, kappa: i32, modulation: &Modulation) -> Result<Vec<C64>> {
    record
        .intensities
        .iter()
        .map(|row| lockin_demodulate(row, kappa, modulation))
        .collect()
}

/// Trapezoidal `sum_tau s(tau) exp(-i omega tau)` on a delay grid.
pub fn interferogram_spectrum(taus: &[f64], values: &[C64], omegas: &[f64]) -> Vec<C64> {
    omegas
        .iter()
        .map(|&w| {
            let mut acc = c(0.0);
            for i in 1..taus.len() {
                let h = taus[i] - taus[i - 1];
                let f0 = values[i - 1] * C64::from_polar(1.0, -w * taus[i - 1]);
                let f1 = values[i] * C64::from_polar(1.0, -w * taus[i]);
                acc += (f0 + f1) * (0.5 * h);
            }
            acc
        })
        .collect()
}

/// Least-squares amplitudes `A_p` of `s(tau) = sum_p A_p exp(p tau)`.
pub fn fit_amplitudes(taus: &[f64], values: &[C64], poles: &[C64]) -> Result<Vec<C64>> {
    if taus.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: taus.len(),
            actual: values.len(),
        });
    }
    if taus.len() < poles.len() {
        return Err(invalid("taus", "fewer delays than poles"));
    }
    let b = DMatrix::from_fn(taus.len(), poles.len(), |i, j| (poles[j] * taus[i]).exp());
    let rhs = DVector::from_column_slice(values);
    let svd = b.svd(true, true);
    let x = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Integrator(format!("amplitude fit failed: {e}")))?;
    Ok(x.iter().cloned().collect())
}

// ---------------------------------------------------------------------------
// Disorder average

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Independent uniform position phases and pair orientations.
    Plain,
    /// Randomised quasi-Monte Carlo: each group combines the six axes of a
    /// randomly rotated icosahedron (exact for polynomials of degree five in
    /// the orientation) with a randomly offset equispaced grid of
    /// `phase_steps` position phases per atom. Groups are never truncated,
    /// so the trial count is rounded up to whole groups.
    Stratified { phase_steps: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderConfig {
    /// `k0 r` of every pair.
    pub u: f64,
    pub sampler: Sampler,
    pub trials: usize,
    pub seed: u64,
    pub kappas: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub kappas: Vec<i32>,
    pub taus: Vec<f64>,
    pub trials: usize,
    pub groups: usize,
    /// `mean[kappa][tau]`.
    pub mean: Vec<Vec<C64>>,
    pub std_err: Vec<Vec<f64>>,
    /// Per-trial demodulated values `[trial][kappa][tau]`, in sampling order.
    pub samples: Vec<Vec<Vec<C64>>>,
    /// Per-group means `[group][kappa][tau]` with their trial counts.
    pub group_means: Vec<Vec<Vec<C64>>>,
    pub group_sizes: Vec<usize>,
    /// Every group gave the same value.
    pub zero_variance: bool,
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = nalgebra::Quaternion::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    );
    UnitQuaternion::from_quaternion(q)
}

/// One axis per antipodal vertex pair of the icosahedron.
pub fn icosahedral_axes() -> [Vector3<f64>; 6] {
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    [
        Vector3::new(0.0, 1.0, g),
        Vector3::new(0.0, 1.0, -g),
        Vector3::new(1.0, g, 0.0),
        Vector3::new(1.0, -g, 0.0),
        Vector3::new(g, 0.0, 1.0),
        Vector3::new(-g, 0.0, 1.0),
    ]
    .map(|v| v.normalize())
}

/// Configurations of one sampling group: `(pair axes, position phases)`.
type Group = Vec<(Vec<Vector3<f64>>, Vec<f64>)>;

fn sample_group(sampler: Sampler, atoms: usize, pairs: usize, rng: &mut ChaCha8Rng) -> Result<Group> {
    match sampler {
        Sampler::Plain => {
            let axes = (0..pairs).map(|_| random_direction(rng)).collect();
            let phases = (0..atoms).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            Ok(vec![(axes, phases)])
        }
        Sampler::Stratified { phase_steps } => {
            if phase_steps < 2 {
                return Err(Error::DegenerateSampler("need at least two phase steps".into()));
            }
            let rots: Vec<UnitQuaternion<f64>> = (0..pairs).map(|_| random_rotation(rng)).collect();
            let offsets: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let ico = icosahedral_axes();
            let n_axes = ico.len().pow(pairs as u32);
            let n_phase = phase_steps.pow(atoms as u32);
            let mut out = Vec::with_capacity(n_axes * n_phase);
            for ai in 0..n_axes {
                let mut r = ai;
                let axes: Vec<Vector3<f64>> = rots
                    .iter()
                    .map(|q| {
                        let v = q * ico[r % ico.len()];
                        r /= ico.len();
                        v
                    })
                    .collect();
                for pi in 0..n_phase {
                    let mut r = pi;
                    let phases = offsets
                        .iter()
                        .map(|o| {
                            let v = o + 2.0 * PI * (r % phase_steps) as f64 / phase_steps as f64;
                            r /= phase_steps;
                            v
                        })
                        .collect();
                    out.push((axes.clone(), phases));
                }
            }
            Ok(out)
        }
    }
}

/// Monte-Carlo disorder average of the demodulated interferograms of `base`.
///
/// Position phases and pair axes of `base` are replaced by sampled values;
/// everything else (including the Doppler shifts) is kept.
pub fn monte_carlo_disorder(base: &OracleConfig, disorder: &DisorderConfig) -> Result<McResult> {
    if disorder.trials < 2 {
        return Err(Error::DegenerateSampler("need at least two trials".into()));
    }
    for &k in &disorder.kappas {
        base.modulation.check(k, base.max_harmonic())?;
    }
    let model = OracleModel::new(base)?;
    let atoms = base.atoms.len();
    let n_pairs = base.pairs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(disorder.seed);
    let mut samples: Vec<Vec<Vec<C64>>> = Vec::with_capacity(disorder.trials);
    let mut group_means: Vec<Vec<Vec<C64>>> = Vec::new();
    let mut group_sizes: Vec<usize> = Vec::new();
    let nk = disorder.kappas.len();
    let nt = base.taus.len();
    let mut cfg = base.clone();
    let mut y_cache: Option<(Vec<Vector3<f64>>, DMatrix<C64>)> = None;
    while samples.len() < disorder.trials {
        let group = sample_group(disorder.sampler, atoms, n_pairs, &mut rng)?;
        let mut acc = vec![vec![c(0.0); nt]; nk];
        let mut count = 0usize;
        for (axes, phases) in group {
            for (p, axis) in cfg.pairs.iter_mut().zip(&axes) {
                p.u = disorder.u;
                p.n_hat = *axis;
            }
            for (a, ph) in cfg.atoms.iter_mut().zip(&phases) {
                a.position_phase = *ph;
            }
            if samples.is_empty() {
                model.check_stability(&cfg)?;
            }
            let y = match &y_cache {
                Some((ax, y)) if *ax == axes => y.clone(),
                _ => {
                    let y = model.detection_integral(&cfg)?;
                    y_cache = Some((axes.clone(), y.clone()));
                    y
                }
            };
            let record = model.simulate(&cfg, &y)?;
            let mut trial = Vec::with_capacity(nk);
            for (ki, &k) in disorder.kappas.iter().enumerate() {
                let s = demodulate_record(&record, k, &cfg.modulation)?;
                for (ti, v) in s.iter().enumerate() {
                    acc[ki][ti] += v;
                }
                trial.push(s);
            }
            samples.push(trial);
            count += 1;
        }
        for row in &mut acc {
            for v in row.iter_mut() {
                *v /= count as f64;
            }
        }
        group_means.push(acc);
        group_sizes.push(count);
    }
    let g = group_means.len();
    let mut mean = vec![vec![c(0.0); nt]; nk];
    let mut std_err = vec![vec![0.0; nt]; nk];
    let mut zero_variance = true;
    for ki in 0..nk {
        for ti in 0..nt {
            let (m, se) = weighted_mean_se(group_means.iter().map(|gm| gm[ki][ti]).collect(), &group_sizes);
            mean[ki][ti] = m;
            std_err[ki][ti] = se;
            if se > 0.0 {
                zero_variance = false;
            }
        }
    }
    Ok(McResult {
        kappas: disorder.kappas.clone(),
        taus: base.taus.clone(),
        trials: samples.len(),
        groups: g,
        mean,
        std_err,
        samples,
        group_means,
        group_sizes,
        zero_variance,
    })
}

/// Mean and standard error of a per-group statistic, weighting groups by
/// their trial counts.
pub fn group_statistic<F>(result: &McResult, f: F) -> (C64, f64)
where
    F: Fn(&[Vec<C64>]) -> C64,
{
    weighted_mean_se(
        result.group_means.iter().map(|g| f(g)).collect(),
        &result.group_sizes,
    )
}

/// Weighted mean and standard error of complex group values.
pub fn weighted_mean_se(values: Vec<C64>, sizes: &[usize]) -> (C64, f64) {
    let g = values.len();
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    let mean: C64 = values.iter().zip(sizes).map(|(v, &n)| v * n as f64).sum::<C64>() / total;
    if g < 2 {
        return (mean, 0.0);
    }
    let var = values
        .iter()
        .zip(sizes)
        .map(|(v, &n)| n as f64 * (v - mean).norm_sqr())
        .sum::<f64>()
        / total
        * g as f64
        / (g - 1) as f64;
    (mean, (var / g as f64).sqrt())
}

/// Root-mean-square deviation of batch means of size `n` from `reference`,
/// for every `n` in `batch_sizes`, using disjoint batches of `values`.
pub fn batch_mean_deviation(values: &[C64], reference: C64, batch_sizes: &[usize]) -> Vec<(usize, f64, usize)> {
    batch_sizes
        .iter()
        .filter_map(|&n| {
            let batches = values.len() / n;
            if n == 0 || batches == 0 {
                return None;
            }
            let ms: f64 = (0..batches)
                .map(|b| {
                    let m: C64 = values[b * n..(b + 1) * n].iter().sum::<C64>() / n as f64;
                    (m - reference).norm_sqr()
                })
                .sum::<f64>()
                / batches as f64;
            Some((n, ms.sqrt(), batches))
        })
        .collect()
}

/// Weighted least-squares slope of `ln y` against `ln n`.
pub fn log_log_slope(points: &[(usize, f64, usize)]) -> Option<f64> {
    let pts: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(n, y, w)| ((n as f64).ln(), y.ln(), w as f64))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::{detection_tensor, DecayGenerator, DetectorShape, PairCoupling};
    use crate::operator::ManyBodyOp;

    fn random_matrix(n: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn apply(l: &SuperOp, x: &DMatrix<C64>) -> DMatrix<C64> {
        from_vec(&l.apply(&to_vec(x)), x.nrows())
    }

    fn tensor(u: f64, mode: InteractionMode) -> Matrix3<C64> {
        let sp = Species::test_j0_j1();
        let g = PairGeometry::from_u(u, Vector3::new(0.3, -0.5, 0.8).normalize()).unwrap();
        green_tensor(&g, sp.gamma, mode).unwrap()
    }

    fn config(atoms: usize, area: f64, u: f64, taus: Vec<f64>) -> OracleConfig {
        let sp = Species::test_j0_j1();
        let t_cyc = 60.0 / sp.gamma;
        OracleConfig {
            areas: [area, area],
            polarization: Vector3::x(),
            atoms: (0..atoms).map(|a| OracleAtom::at_rest(0.7 * a as f64)).collect(),
            mode: Some(InteractionMode::Full),
            pairs: if atoms == 2 {
                vec![OraclePair {
                    a: 0,
                    b: 1,
                    u,
                    n_hat: Vector3::new(0.2, 0.6, -0.7).normalize(),
                }]
            } else {
                vec![]
            },
            modulation: Modulation::from_bins([3, 5], 16, t_cyc),
            taus,
            couple_between_pulses: false,
            detector: detection_tensor(&Vector3::x(), 0.38, DetectorShape::Cone).unwrap(),
            tolerance: 1e-10,
            species: sp,
        }
    }

    #[test]
    fn decay_matches_single_atom_generator() {
        let sp = Species::k39();
        let me = MasterEquation::new(&sp, 1, &[]).unwrap();
        let l = me.heisenberg(&[]).unwrap();
        let dg = DecayGenerator::new(AtomOperators::new(&sp));
        let x = random_matrix(sp.dim(), 1);
        let tol = 1e-13 * sp.gamma;
        assert!((apply(&l, &x) - dg.heisenberg(&x)).camax() < tol);
        assert!((apply(&l.adjoint(), &x) - dg.schrodinger(&x)).camax() < tol);
    }

    #[test]
    fn coupling_matches_many_body_generator() {
        let sp = Species::test_j0_j1();
        let t = tensor(2.5, InteractionMode::Full);
        let me = MasterEquation::new(&sp, 2, &[(0, 1)]).unwrap();
        let full = me.heisenberg(&[t]).unwrap();
        let decay = me.heisenberg(&[Matrix3::zeros()]).unwrap();
        let pc = PairCoupling::new(&AtomOperators::new(&sp), 0, 1, &t, &t.map(|v| v.conj())).unwrap();
        let x = random_matrix(me.dim, 2);
        let ours = apply(&full, &x) - apply(&decay, &x);
        let theirs = pc.apply_all(&ManyBodyOp::from_dense(2, sp.dim(), &x)).to_dense();
        assert!((&ours - &theirs).camax() < 1e-12 * theirs.camax());
    }

    #[test]
    fn schrodinger_generator_is_dual_and_trace_preserving() {
        let sp = Species::test_j0_j1();
        let me = MasterEquation::new(&sp, 2, &[(0, 1)]).unwrap();
        let l = me.heisenberg(&[tensor(1.5, InteractionMode::Full)]).unwrap();
        let ls = l.adjoint();
        let x = random_matrix(me.dim, 3);
        let x = &x + x.adjoint();
        let r = random_matrix(me.dim, 4);
        let r = &r * r.adjoint();
        let lhs = (&x * apply(&ls, &r)).trace();
        let rhs = (apply(&l, &x) * &r).trace();
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm());
        assert!(apply(&ls, &r).trace().norm() < 1e-13 * sp.gamma * r.trace().norm());
    }

    #[test]
    fn rk45_exponential() {
        let rk = Rk45::new(1e-11, 1e-14);
        let y0 = DVector::from_element(1, c(1.0));
        let (y, stats) = rk
            .integrate(|_, y| y * C64::new(-1.0, 3.0), 0.0, y0, 2.0, 0.01, |_, _| Ok(()))
            .unwrap();
        let exact = (C64::new(-1.0, 3.0) * 2.0).exp();
        assert!((y[0] - exact).norm() < 1e-9);
        assert!(stats.accepted > 0);
        let mut tight = rk;
        tight.max_steps = 3;
        let y0 = DVector::from_element(1, c(1.0));
        assert!(matches!(
            tight.integrate(|_, y| y * c(-1.0), 0.0, y0, 100.0, 0.01, |_, _| Ok(())),
            Err(Error::Integrator(_))
        ));
    }

    #[test]
    fn direct_and_time_stepped_integrals_agree() {
        let cfg = config(2, 0.4, 4.0, vec![0.0]);
        let model = OracleModel::new(&cfg).unwrap();
        let l = model.me.heisenberg(&cfg.tensors().unwrap()).unwrap();
        let a = model.me.integrated_observable(&l, model.observable(), 1e-10).unwrap();
        let b = model.me.integrated_observable_rk(&l, model.observable(), 1e-10).unwrap();
        assert!((&a - &b).camax() < 1e-7 * a.camax());
        // Forward integration from a pulsed state reproduces Tr[Y rho].
        let rho = model.product_state(&cfg, 0, 1);
        let (_, i, report) =
            integrate_forward(&l.adjoint(), &rho, model.observable(), 60.0 / cfg.species.gamma, cfg.species.gamma, 1e-10)
                .unwrap();
        let direct = (&a * &rho).trace().re;
        assert!((i - direct).abs() < 1e-7 * direct.abs());
        assert!(report.ok(1e-9), "{report:?}");
    }

    #[test]
    fn single_atom_two_level_intensity() {
        let theta = 0.37;
        let mut cfg = config(1, theta, 0.0, vec![0.0]);
        cfg.areas = [theta, 0.0];
        let rec = simulate_cycles(&cfg).unwrap();
        // x-polarised J=0 -> J=1: one excited state |x>, population sin^2(theta/2).
        let sp = &cfg.species;
        let d = all_lowering_operators(sp)[0].cartesian(0);
        let ex = d.adjoint().column(0).normalize();
        let mut o = DMatrix::<C64>::zeros(sp.dim(), sp.dim());
        let cart = all_lowering_operators(sp)[0].cartesian_all();
        for k in 0..3 {
            for m in 0..3 {
                o += cart[k].adjoint() * &cart[m] * c(cfg.detector.k[(k, m)]);
            }
        }
        let o_ex = (ex.adjoint() * &o * &ex)[(0, 0)].re;
        let expected = (theta / 2.0).sin().powi(2) * o_ex / sp.gamma;
        for v in &rec.intensities[0] {
            assert!((v - expected).abs() < 1e-8 * expected, "{v} vs {expected}");
        }
    }

    #[test]
    fn strong_coupling_instability_is_reported() {
        let cfg = config(2, 0.4, 1.5, vec![0.0]);
        assert!(matches!(simulate_cycles(&cfg), Err(Error::Integrator(_))));
        let model = OracleModel::new(&config(2, 0.4, 5.0, vec![0.0])).unwrap();
        let l = model.me.heisenberg(&[Matrix3::zeros()]).unwrap();
        assert!((model.me.spectral_abscissa(&l).unwrap() + 0.5).abs() < 1e-10);
    }

    #[test]
    fn zero_area_is_dark() {
        let rec = simulate_cycles(&config(2, 0.0, 2.0, vec![0.0, 1e-9])).unwrap();
        assert!(rec.intensities.iter().flatten().all(|v| v.abs() < 1e-30));
    }

    #[test]
    fn uncoupled_atoms_are_additive() {
        let mut two = config(2, 0.5, 2.0, vec![3e-9]);
        two.mode = None;
        let both = simulate_cycles(&two).unwrap();
        let mut sum = vec![0.0; two.modulation.cycles];
        for a in 0..2 {
            let mut one = config(1, 0.5, 0.0, vec![3e-9]);
            one.atoms = vec![two.atoms[a]];
            for (s, v) in sum.iter_mut().zip(&simulate_cycles(&one).unwrap().intensities[0]) {
                *s += v;
            }
        }
        for (a, b) in both.intensities[0].iter().zip(&sum) {
            assert!((a - b).abs() < 1e-9 * b.abs());
        }
    }

    #[test]
    fn coupling_between_pulses_path_matches_product_path_when_uncoupled() {
        let mut cfg = config(2, 0.5, 2.0, vec![2e-9]);
        cfg.mode = None;
        cfg.modulation = Modulation::from_bins([1, 2], 4, cfg.modulation.t_cyc);
        let a = simulate_cycles(&cfg).unwrap();
        cfg.couple_between_pulses = true;
        let b = simulate_cycles(&cfg).unwrap();
        for (x, y) in a.intensities[0].iter().zip(&b.intensities[0]) {
            assert!((x - y).abs() < 1e-8 * x.abs());
        }
    }

    #[test]
    fn lockin_recovers_synthetic_harmonic() {
        let m = Modulation::from_bins([1, 4], 64, 1e-6);
        let amp = C64::from_polar(0.8, 0.4);
        for kappa in [1, 2] {
            let w = kappa as f64 * m.difference() * m.t_cyc;
            let series: Vec<f64> = (0..m.cycles)
                .map(|k| 3.0 + 2.0 * (amp * C64::from_polar(1.0, w * k as f64)).re + (m.omega[0] * k as f64 * m.t_cyc).cos())
                .collect();
            let z = lockin_demodulate(&series, kappa, &m).unwrap();
            assert!((z - amp).norm() < 1e-12);
        }
        assert!(lockin_demodulate(&[1.0; 3], 1, &m).is_err());
        assert!(m.check(1, 2).is_ok());
        let fast = Modulation::from_bins([1, 30], 64, 1e-6);
        assert!(matches!(fast.check(1, 2), Err(Error::Aliasing(_))));
        // 2 * Omega_1 lands on the Omega_21 bin.
        let clash = Modulation::from_bins([3, 6], 64, 1e-6);
        assert!(matches!(clash.check(1, 2), Err(Error::Aliasing(_))));
    }

    #[test]
    fn amplitude_fit_recovers_poles() {
        let poles = [C64::new(-1.0, 5.0), C64::new(-2.0, 10.0)];
        let amps = [C64::new(0.3, -0.1), C64::new(-0.05, 0.2)];
        let taus: Vec<f64> = (0..6).map(|k| 0.2 * k as f64).collect();
        let vals: Vec<C64> = taus
            .iter()
            .map(|&t| amps.iter().zip(&poles).map(|(a, p)| a * (p * t).exp()).sum())
            .collect();
        let fit = fit_amplitudes(&taus, &vals, &poles).unwrap();
        for (f, a) in fit.iter().zip(&amps) {
            assert!((f - a).norm() < 1e-10);
        }
        let spec = interferogram_spectrum(&[0.0, 1.0], &[c(1.0), c(1.0)], &[0.0]);
        assert!((spec[0] - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn single_atom_disorder_has_no_variance() {
        let cfg = config(1, 0.4, 0.0, vec![1e-9]);
        let d = DisorderConfig {
            u: 1.0,
            sampler: Sampler::Plain,
            trials: 4,
            seed: 1,
            kappas: vec![1],
        };
        let r = monte_carlo_disorder(&cfg, &d).unwrap();
        let one = demodulate_record(&simulate_cycles(&cfg).unwrap(), 1, &cfg.modulation).unwrap();
        // Position phases cancel in the robust single-atom signal.
        assert!((r.mean[0][0] - one[0]).norm() < 1e-10 * one[0].norm());
        assert!(r.std_err[0][0] < 1e-10 * one[0].norm());
        let bad = DisorderConfig {
            sampler: Sampler::Stratified { phase_steps: 1 },
            ..d.clone()
        };
        assert!(matches!(monte_carlo_disorder(&cfg, &bad), Err(Error::DegenerateSampler(_))));
        let same = monte_carlo_disorder(&cfg, &d).unwrap();
        assert_eq!(same, r);
    }

    #[test]
    fn stratified_groups_cover_axes_and_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = sample_group(Sampler::Stratified { phase_steps: 3 }, 2, 1, &mut rng).unwrap();
        assert_eq!(g.len(), 6 * 9);
        // Second moment of the six axes is isotropic.
        let mut m = Matrix3::<f64>::zeros();
        for (axes, _) in g.iter().step_by(9) {
            m += axes[0] * axes[0].transpose();
        }
        assert!((m / 6.0 - Matrix3::identity() / 3.0).abs().max() < 1e-12);
    }

    #[test]
    fn batch_deviation_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<C64> = (0..1 << 14).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
        let pts = batch_mean_deviation(&v, c(0.0), &[4, 8, 16, 32, 64, 128, 256]);
        let s = log_log_slope(&pts).unwrap();
        assert!((s + 0.5).abs() < 0.1, "{s}");
    }
}
