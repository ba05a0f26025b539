//! Phase tags and the tagged N-atom state between the pulses.
//!
//! Interactions are off until the second pulse, so the tagged state is an
//! exact product: every atom carries its own list of tagged components and
//! an N-atom component is one choice per atom.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::liouville::{DecayGenerator, Harmonic, PulseUnitary};
use crate::species::Species;
use crate::C64;

pub const MAX_ATOMS: usize = 3;

/// Integer bookkeeping of all phases carried by one contribution.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhaseTag {
    /// `harmonics[atom][pulse][transition]`.
    pub harmonics: Vec<[Harmonic; 2]>,
    /// Net power of `exp(i k0 r)` per unordered pair, pairs in lexicographic order.
    pub pair_phase: Vec<i32>,
}

impl PhaseTag {
    pub fn zero(atoms: usize) -> Self {
        PhaseTag {
            harmonics: vec![[[0; 2]; 2]; atoms],
            pair_phase: vec![0; atoms * atoms.saturating_sub(1) / 2],
        }
    }

    /// Net power of `exp(i k_L . r_alpha)`.
    pub fn atom_phase(&self, atom: usize) -> i32 {
        self.harmonics[atom].iter().flatten().sum()
    }

    /// Multiplicities of the two modulation frequencies `(Omega_1, Omega_2)`.
    pub fn modulation_harmonics(&self) -> [i32; 2] {
        let mut out = [0; 2];
        for h in &self.harmonics {
            for (pulse, o) in out.iter_mut().enumerate() {
                *o += h[pulse][0] + h[pulse][1];
            }
        }
        out
    }

    /// Demodulation harmonic `kappa` of `Omega_21`, defined for robust tags.
    pub fn kappa(&self) -> i32 {
        self.modulation_harmonics()[1]
    }

    /// Pulse-2 harmonics summed over atoms, per transition.
    pub fn second_pulse_totals(&self) -> Harmonic {
        let mut out = [0; 2];
        for h in &self.harmonics {
            out[0] += h[1][0];
            out[1] += h[1][1];
        }
        out
    }

    pub fn tau_frequency(&self, omega1: f64, omega2: f64) -> f64 {
        let t = self.second_pulse_totals();
        t[0] as f64 * omega1 + t[1] as f64 * omega2
    }

    pub fn doppler_multiplier(&self) -> i32 {
        let t = self.second_pulse_totals();
        t[0] + t[1]
    }

    /// Survives the average over atomic positions (and pair separations when
    /// the coupling carries a retardation phase).
    pub fn is_robust(&self, pair_phases_matter: bool) -> bool {
        (0..self.harmonics.len()).all(|a| self.atom_phase(a) == 0)
            && (!pair_phases_matter || self.pair_phase.iter().all(|&p| p == 0))
    }

    pub fn negated(&self) -> Self {
        PhaseTag {
            harmonics: self
                .harmonics
                .iter()
                .map(|h| [[-h[0][0], -h[0][1]], [-h[1][0], -h[1][1]]])
                .collect(),
            pair_phase: self.pair_phase.iter().map(|p| -p).collect(),
        }
    }
}

/// One tagged single-atom factor.
#[derive(Clone, Debug)]
pub struct AtomComponent {
    pub harmonics: [Harmonic; 2],
    /// Decay accumulated between the pulses, `exp(-half_gammas * gamma/2 * tau)`.
    pub half_gammas: u32,
    pub op: DMatrix<C64>,
}

impl AtomComponent {
    pub fn atom_phase(&self) -> i32 {
        self.harmonics.iter().flatten().sum()
    }

    fn key(&self) -> ([Harmonic; 2], u32) {
        (self.harmonics, self.half_gammas)
    }
}

/// Product of per-atom tagged components.
#[derive(Clone, Debug)]
pub struct TaggedState {
    pub atoms: Vec<Vec<AtomComponent>>,
}

/// Maximally mixed ground manifold on every atom, tag zero.
pub fn initial_state(species: &Species, atoms: usize) -> Result<TaggedState> {
    if atoms == 0 || atoms > MAX_ATOMS {
        return Err(Error::AtomCount(atoms));
    }
    let d = species.dim();
    let g = species.ground();
    let w = 1.0 / g.len() as f64;
    let rho = DMatrix::from_fn(d, d, |i, j| {
        if i == j && g.range().contains(&i) {
            C64::new(w, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(TaggedState {
        atoms: vec![
            vec![AtomComponent {
                harmonics: [[0; 2]; 2],
                half_gammas: 0,
                op: rho,
            }];
            atoms
        ],
    })
}

fn merge(components: Vec<AtomComponent>) -> Vec<AtomComponent> {
    let mut map: BTreeMap<([Harmonic; 2], u32), DMatrix<C64>> = BTreeMap::new();
    for c in components {
        let key = c.key();
        match map.get_mut(&key) {
            Some(m) => *m += c.op,
            None => {
                map.insert(key, c.op);
            }
        }
    }
    map.into_iter()
        .map(|((harmonics, half_gammas), op)| AtomComponent {
            harmonics,
            half_gammas,
            op,
        })
        .collect()
}

impl TaggedState {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Conjugation by the pulse on every driven atom; `slot` is the pulse index (0 or 1).
    pub fn apply_pulse(&self, pulse: &PulseUnitary, slot: usize, driven: &[usize]) -> Result<TaggedState> {
        if slot > 1 {
            return Err(Error::Unsupported(format!("pulse slot {slot} (two-pulse scheme)")));
        }
        for &a in driven {
            if a >= self.atoms.len() {
                return Err(Error::UnknownAtom {
                    index: a,
                    atoms: self.atoms.len(),
                });
            }
        }
        let atoms = self
            .atoms
            .iter()
            .enumerate()
            .map(|(a, comps)| {
                if !driven.contains(&a) {
                    return comps.clone();
                }
                let mut out = Vec::new();
                for c in comps {
                    for (n, op) in pulse.conjugate_tagged(&c.op) {
                        let mut harmonics = c.harmonics;
                        harmonics[slot][0] += n[0];
                        harmonics[slot][1] += n[1];
                        out.push(AtomComponent {
                            harmonics,
                            half_gammas: c.half_gammas,
                            op,
                        });
                    }
                }
                merge(out)
            })
            .collect();
        Ok(TaggedState { atoms })
    }

    /// Free decay between the pulses, split into exponential modes.
    pub fn evolve_tau(&self, decay: &DecayGenerator) -> TaggedState {
        let atoms = self
            .atoms
            .iter()
            .map(|comps| {
                let mut out = Vec::new();
                for c in comps {
                    for m in decay.modes(&c.op) {
                        out.push(AtomComponent {
                            harmonics: c.harmonics,
                            half_gammas: c.half_gammas + m.half_gammas,
                            op: m.op,
                        });
                    }
                }
                merge(out)
            })
            .collect();
        TaggedState { atoms }
    }

    /// Components of one atom with zero net position phase.
    pub fn robust_components(&self, atom: usize) -> impl Iterator<Item = &AtomComponent> {
        self.atoms[atom].iter().filter(|c| c.atom_phase() == 0)
    }

    /// Trace of the tag-zero component (all atoms at zero harmonics, summed over decay modes).
    pub fn tag_zero_trace(&self) -> C64 {
        self.atoms
            .iter()
            .map(|comps| {
                comps
                    .iter()
                    .filter(|c| c.harmonics == [[0; 2]; 2])
                    .map(|c| c.op.trace())
                    .sum::<C64>()
            })
            .product()
    }

    /// Largest violation of `x_{-n} = x_n^dagger` over all atoms.
    pub fn conjugation_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for comps in &self.atoms {
            for c in comps {
                let neg = [[-c.harmonics[0][0], -c.harmonics[0][1]], [-c.harmonics[1][0], -c.harmonics[1][1]]];
                let partner = comps
                    .iter()
                    .find(|o| o.harmonics == neg && o.half_gammas == c.half_gammas);
                let err = match partner {
                    Some(p) => (&p.op - c.op.adjoint()).norm(),
                    None => c.op.norm(),
                };
                worst = worst.max(err);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::{pulse_unitary, AtomOperators};
    use nalgebra::Vector3;

    #[test]
    fn initial_state_is_ground_mixture() {
        let k = Species::k39();
        let s = initial_state(&k, 1).unwrap();
        let rho = &s.atoms[0][0].op;
        assert_eq!(rho[(0, 0)], C64::new(0.5, 0.0));
        assert_eq!(rho[(1, 1)], C64::new(0.5, 0.0));
        assert_eq!(rho.iter().filter(|v| v.norm() > 0.0).count(), 2);
        assert!((s.tag_zero_trace() - 1.0).norm() < 1e-15);
        let s3 = initial_state(&k, 3).unwrap();
        for a in 0..3 {
            assert_eq!(&s3.atoms[a][0].op, rho);
        }
        assert!(initial_state(&k, 0).is_err());
        assert!(initial_state(&k, 4).is_err());
    }

    #[test]
    fn pulses_preserve_trace_and_conjugation_symmetry() {
        let k = Species::k39();
        let ops = AtomOperators::new(&k);
        let decay = DecayGenerator::new(ops.clone());
        let u = pulse_unitary(&ops, 0.3, &Vector3::x()).unwrap();
        let s = initial_state(&k, 2).unwrap();
        let s = s.apply_pulse(&u, 0, &[0, 1]).unwrap();
        assert!((s.tag_zero_trace() - 1.0).norm() < 1e-12);
        assert!(s.conjugation_defect() < 1e-12);
        let s = s.evolve_tau(&decay);
        assert!(s.conjugation_defect() < 1e-12);
        let s = s.apply_pulse(&u, 1, &[0, 1]).unwrap();
        assert!(s.conjugation_defect() < 1e-12);
        assert!(s.apply_pulse(&u, 1, &[2]).is_err());
    }

    #[test]
    fn zero_area_pulse_adds_no_tags() {
        let s = Species::test_j0_j1();
        let ops = AtomOperators::new(&s);
        let u = pulse_unitary(&ops, 0.0, &Vector3::x()).unwrap();
        let st = initial_state(&s, 1).unwrap().apply_pulse(&u, 0, &[0]).unwrap();
        assert_eq!(st.atoms[0].len(), 1);
        assert_eq!(st.atoms[0][0].harmonics, [[0; 2]; 2]);
    }

    #[test]
    fn single_pulse_tag_inventory() {
        // From a ground-state input, one pulse yields output-block harmonics
        // -[c excited] + [d excited] only: {-1, 0, +1} on the test species.
        let s = Species::test_j0_j1();
        let ops = AtomOperators::new(&s);
        let u = pulse_unitary(&ops, 0.8, &Vector3::x()).unwrap();
        let st = initial_state(&s, 1).unwrap().apply_pulse(&u, 0, &[0]).unwrap();
        let mut tags: Vec<i32> = st.atoms[0].iter().map(|c| c.harmonics[0][0]).collect();
        tags.sort();
        assert_eq!(tags, vec![-1, 0, 1]);
        // A second pulse on a generic input reaches the full gauge range.
        let st2 = st.apply_pulse(&u, 1, &[0]).unwrap();
        let max = st2.atoms[0].iter().map(|c| c.harmonics[1][0].abs()).max().unwrap();
        assert_eq!(max, 2);
    }

    #[test]
    fn excited_populations_carry_phase_difference_tags() {
        let k = Species::k39();
        let ops = AtomOperators::new(&k);
        let decay = DecayGenerator::new(ops.clone());
        let u = pulse_unitary(&ops, 0.3, &Vector3::x()).unwrap();
        let st = initial_state(&k, 1)
            .unwrap()
            .apply_pulse(&u, 0, &[0])
            .unwrap()
            .evolve_tau(&decay)
            .apply_pulse(&u, 1, &[0])
            .unwrap();
        let mut found = std::collections::BTreeSet::new();
        for c in &st.atoms[0] {
            let pops: f64 = (2..8).map(|i| c.op[(i, i)].norm()).sum();
            if pops > 1e-8 && c.atom_phase() == 0 {
                found.insert(c.harmonics);
            }
        }
        // 0, +-phi_21 (D1), +-phi_21 (D2), and the fine-structure mixed ones.
        assert!(found.contains(&[[0, 0], [0, 0]]));
        assert!(found.contains(&[[-1, 0], [1, 0]]));
        assert!(found.contains(&[[1, 0], [-1, 0]]));
        assert!(found.contains(&[[0, -1], [0, 1]]));
        assert!(found.contains(&[[0, 1], [0, -1]]));
    }

    #[test]
    fn tag_arithmetic() {
        let mut t = PhaseTag::zero(2);
        t.harmonics[0] = [[-1, 0], [1, 0]];
        t.harmonics[1] = [[0, -1], [0, 1]];
        assert_eq!(t.kappa(), 2);
        assert_eq!(t.doppler_multiplier(), 2);
        assert!(t.is_robust(true));
        assert_eq!(t.tau_frequency(1.0, 10.0), 11.0);
        t.pair_phase[0] = 1;
        assert!(!t.is_robust(true));
        assert!(t.is_robust(false));
        assert_eq!(t.negated().kappa(), -2);
    }
}
