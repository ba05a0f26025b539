//! Time-integrated detection after the second pulse, perturbatively in the
//! dipole-dipole coupling.
//!
//! With `L = L_gamma + V` acting on observables and `R = (-L_gamma)^{-1}`,
//! `integral_0^inf exp(L t) O dt = R O + R V R O + R V R V R O + ...`.
//! Everything is computed once per detector and coupling configuration and
//! contracted with tagged states afterwards.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{orientation_modes, InteractionMode};
use crate::liouville::{
    detection_operator_many, CouplingPart, DecayGenerator, DetectionTensor, PairCoupling,
};
use crate::operator::ManyBodyOp;
use crate::quadrature::SphereQuadrature;
use crate::C64;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Unordered pairs of `atoms` atoms in lexicographic order.
pub fn pairs(atoms: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..atoms {
        for b in a + 1..atoms {
            out.push((a, b));
        }
    }
    out
}

pub fn check_order(order_max: usize) -> Result<()> {
    if order_max % 2 == 1 || order_max > 4 {
        return Err(Error::UnsupportedOrder(order_max));
    }
    Ok(())
}

/// One coupling insertion: a pair and the parts of its generator applied together.
#[derive(Clone)]
struct Insertion<'a> {
    coupling: &'a PairCoupling,
    parts: &'a [CouplingPart],
}

impl Insertion<'_> {
    fn apply(&self, x: &ManyBodyOp, out: &mut ManyBodyOp) {
        for &p in self.parts {
            self.coupling.apply(p, x, c(1.0), out);
        }
    }
}

/// Sum over all orderings in which insertion `k` is used exactly `counts[k]`
/// times: `S(n) = sum_k R V_k S(n - e_k)`, `S(0) = R O`.
fn ordered_sum(decay: &DecayGenerator, base: &ManyBodyOp, items: &[Insertion], counts: &[usize]) -> Result<ManyBodyOp> {
    let radix: Vec<usize> = counts.iter().map(|c| c + 1).collect();
    let total: usize = radix.iter().product();
    let decode = |mut s: usize| -> Vec<usize> {
        radix
            .iter()
            .map(|r| {
                let v = s % r;
                s /= r;
                v
            })
            .collect()
    };
    let encode = |v: &[usize]| -> usize {
        let mut s = 0;
        for (k, r) in radix.iter().enumerate().rev() {
            s = s * r + v[k];
        }
        s
    };
    // Process states in order of total count so predecessors are ready.
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by_key(|&s| decode(s).iter().sum::<usize>());
    let mut table: Vec<Option<ManyBodyOp>> = vec![None; total];
    for s in order {
        let v = decode(s);
        if v.iter().all(|&x| x == 0) {
            table[s] = Some(base.clone());
            continue;
        }
        let mut acc = ManyBodyOp::zeros(base.atoms, base.d);
        for (k, item) in items.iter().enumerate() {
            if v[k] == 0 {
                continue;
            }
            let mut prev = v.clone();
            prev[k] -= 1;
            let p = table[encode(&prev)].as_ref().expect("predecessor computed");
            item.apply(p, &mut acc);
        }
        table[s] = Some(decay.resolvent(&acc)?);
    }
    Ok(table[total - 1].take().expect("final state"))
}

/// Orientation-averaged integrated observables.
#[derive(Clone, Debug)]
pub struct DetectionIntegrals {
    pub gamma: f64,
    pub d: usize,
    /// Single atom, no coupling.
    pub order0: DMatrix<C64>,
    /// Two driven atoms, second order in one pair.
    pub order2: Option<ManyBodyOp>,
    /// One driven atom coupled to the undriven atom, spectator traced out.
    pub order2_spectator: Option<DMatrix<C64>>,
    /// Two driven atoms after tracing out the undriven third atom; fourth
    /// order with each of two distinct pairs coupled twice.
    pub order4: Option<ManyBodyOp>,
}

#[derive(Clone, Debug)]
pub struct CouplingSpec {
    pub mode: InteractionMode,
    /// Dimensionless separation `k0 r` at which the envelope is evaluated.
    pub u: f64,
    /// Include the undriven third atom.
    pub spectator: bool,
    /// Multiplies every coupling to the undriven atom.
    pub spectator_scale: f64,
}

impl CouplingSpec {
    pub fn new(mode: InteractionMode, u: f64) -> Self {
        CouplingSpec {
            mode,
            u,
            spectator: true,
            spectator_scale: 1.0,
        }
    }
}

/// Which part sequences survive the pair-phase filter for one pair coupled twice.
fn pair_insertions(mode: InteractionMode) -> (Vec<Vec<CouplingPart>>, Vec<usize>) {
    if mode.carries_position_phase() {
        // One T and one T*: the retardation phases cancel.
        (vec![vec![CouplingPart::Plus], vec![CouplingPart::Minus]], vec![1, 1])
    } else {
        // No phase to cancel: any two insertions of the full generator.
        (vec![vec![CouplingPart::Plus, CouplingPart::Minus]], vec![2])
    }
}

pub fn detect_integrate(
    decay: &DecayGenerator,
    det: &DetectionTensor,
    coupling: Option<&CouplingSpec>,
    quadrature: &SphereQuadrature,
    order_max: usize,
    ground: &DMatrix<C64>,
) -> Result<DetectionIntegrals> {
    check_order(order_max)?;
    let ops = &decay.ops;
    let d = ops.dim;
    let o1 = detection_operator_many(ops, 1, det);
    let y0 = decay.resolvent(&o1)?.to_dense();
    let mut out = DetectionIntegrals {
        gamma: ops.gamma,
        d,
        order0: y0,
        order2: None,
        order2_spectator: None,
        order4: None,
    };
    let Some(spec) = coupling else {
        return Ok(out);
    };
    if order_max < 2 {
        return Ok(out);
    }
    let modes = orientation_modes(spec.u, ops.gamma, spec.mode, quadrature)?.modes;
    let (parts, counts) = pair_insertions(spec.mode);

    // Second order on one pair.
    let base2 = decay.resolvent(&detection_operator_many(ops, 2, det))?;
    let mut y2 = ManyBodyOp::zeros(2, d);
    for (lambda, v) in &modes {
        let pc = PairCoupling::new(ops, 0, 1, v, &v.map(|x| x.conj()))?;
        let items: Vec<Insertion> = parts.iter().map(|p| Insertion { coupling: &pc, parts: p }).collect();
        let s = ordered_sum(decay, &base2, &items, &counts)?;
        y2.axpy(c(*lambda), &s);
    }
    if spec.spectator {
        let mut ys = y2.contract_last(ground);
        ys.scale(c(spec.spectator_scale * spec.spectator_scale));
        out.order2_spectator = Some(ys.to_dense());
    }
    out.order2 = Some(y2);

    if order_max < 4 || !spec.spectator {
        return Ok(out);
    }
    // Fourth order: atoms 0, 1 driven, atom 2 a spectator; two distinct pairs,
    // each with independent orientation.
    let base3 = decay.resolvent(&detection_operator_many(ops, 3, det))?;
    let all_pairs = pairs(3);
    let mut jobs = Vec::new();
    for p in 0..all_pairs.len() {
        for q in p + 1..all_pairs.len() {
            for i in 0..modes.len() {
                for j in 0..modes.len() {
                    jobs.push((p, q, i, j));
                }
            }
        }
    }
    let results: Vec<Result<ManyBodyOp>> = jobs
        .par_iter()
        .map(|&(p, q, i, j)| {
            let (li, vi) = &modes[i];
            let (lj, vj) = &modes[j];
            let build = |pair: (usize, usize), v: &Matrix3<C64>| {
                let s = if pair.1 == 2 { spec.spectator_scale } else { 1.0 };
                let v = v * c(s);
                PairCoupling::new(ops, pair.0, pair.1, &v, &v.map(|x| x.conj()))
            };
            let cp = build(all_pairs[p], vi)?;
            let cq = build(all_pairs[q], vj)?;
            let mut items: Vec<Insertion> = parts.iter().map(|pp| Insertion { coupling: &cp, parts: pp }).collect();
            items.extend(parts.iter().map(|pp| Insertion { coupling: &cq, parts: pp }));
            let mut cnt = counts.clone();
            cnt.extend(counts.iter().copied());
            let s = ordered_sum(decay, &base3, &items, &cnt)?;
            let mut reduced = s.contract_last(ground);
            reduced.scale(c(li * lj));
            Ok(reduced)
        })
        .collect();
    let mut y4 = ManyBodyOp::zeros(2, d);
    for r in results {
        y4.axpy(c(1.0), &r?);
    }
    out.order4 = Some(y4);
    Ok(out)
}

/// Dyson terms for one fixed geometry, grouped by order and net pair phases.
///
/// `couplings[k]` couples pair `pair_index[k]`; keys are `(order, phases)`
/// with one phase counter per entry of `pairs(atoms)`.
pub fn dyson_fixed(
    decay: &DecayGenerator,
    det: &DetectionTensor,
    atoms: usize,
    couplings: &[(usize, PairCoupling)],
    order_max: usize,
) -> Result<BTreeMap<(usize, Vec<i32>), ManyBodyOp>> {
    if order_max > 4 {
        return Err(Error::UnsupportedOrder(order_max));
    }
    let n_pairs = pairs(atoms).len();
    let base = decay.resolvent(&detection_operator_many(&decay.ops, atoms, det))?;
    let mut out = BTreeMap::new();
    let mut level: BTreeMap<Vec<i32>, ManyBodyOp> = BTreeMap::new();
    level.insert(vec![0; n_pairs], base);
    for (k, v) in &level {
        out.insert((0, k.clone()), v.clone());
    }
    for order in 1..=order_max {
        let mut next: BTreeMap<Vec<i32>, ManyBodyOp> = BTreeMap::new();
        for (phases, y) in &level {
            for (pair, pc) in couplings {
                for part in [CouplingPart::Plus, CouplingPart::Minus] {
                    let mut key = phases.clone();
                    key[*pair] += part.phase();
                    let entry = next.entry(key).or_insert_with(|| ManyBodyOp::zeros(atoms, decay.ops.dim));
                    let mut v = ManyBodyOp::zeros(atoms, decay.ops.dim);
                    pc.apply(part, y, c(1.0), &mut v);
                    entry.axpy(c(1.0), &v);
                }
            }
        }
        level = BTreeMap::new();
        for (k, v) in next {
            let r = decay.resolvent(&v)?;
            out.insert((order, k.clone()), r.clone());
            level.insert(k, r);
        }
    }
    Ok(out)
}

/// Builds the physical coupling `T = e^{iu} M` of one pair.
pub fn physical_coupling(
    decay: &DecayGenerator,
    a: usize,
    b: usize,
    t: &Matrix3<C64>,
) -> Result<PairCoupling> {
    PairCoupling::new(&decay.ops, a, b, t, &t.map(|x| x.conj()))
}
