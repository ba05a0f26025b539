//! Phase-tagged two-pulse propagation and classified peak contributions.

pub mod detect;
pub mod tag;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

pub use detect::{detect_integrate, dyson_fixed, pairs, physical_coupling, CouplingSpec, DetectionIntegrals};
pub use tag::{initial_state, AtomComponent, PhaseTag, TaggedState};

use crate::error::{Error, Result};
use crate::liouville::{pulse_unitary, AtomOperators, DecayGenerator, DetectionTensor, Harmonic};
use crate::operator::ManyBodyOp;
use crate::quadrature::SphereQuadrature;
use crate::species::Species;
use crate::C64;

/// Peak families of the demodulated spectra.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Peak {
    #[serde(rename = "D1")]
    D1,
    #[serde(rename = "D2")]
    D2,
    #[serde(rename = "2D1")]
    TwoD1,
    #[serde(rename = "D1D2")]
    D1D2,
    #[serde(rename = "2D2")]
    TwoD2,
}

impl Peak {
    pub const ALL: [Peak; 5] = [Peak::D1, Peak::D2, Peak::TwoD1, Peak::D1D2, Peak::TwoD2];

    /// Family of a robust tag from its summed second-pulse harmonics.
    pub fn from_totals(totals: Harmonic) -> Option<Peak> {
        match totals {
            [1, 0] => Some(Peak::D1),
            [0, 1] => Some(Peak::D2),
            [2, 0] => Some(Peak::TwoD1),
            [1, 1] => Some(Peak::D1D2),
            [0, 2] => Some(Peak::TwoD2),
            _ => None,
        }
    }

    pub fn totals(self) -> Harmonic {
        match self {
            Peak::D1 => [1, 0],
            Peak::D2 => [0, 1],
            Peak::TwoD1 => [2, 0],
            Peak::D1D2 => [1, 1],
            Peak::TwoD2 => [0, 2],
        }
    }

    pub fn kappa(self) -> i32 {
        let t = self.totals();
        t[0] + t[1]
    }

    pub fn center(self, omega1: f64, omega2: f64) -> f64 {
        let t = self.totals();
        t[0] as f64 * omega1 + t[1] as f64 * omega2
    }

    pub fn label(self) -> &'static str {
        match self {
            Peak::D1 => "D1",
            Peak::D2 => "D2",
            Peak::TwoD1 => "2D1",
            Peak::D1D2 => "D1D2",
            Peak::TwoD2 => "2D2",
        }
    }

    pub fn parse(s: &str) -> Option<Peak> {
        Peak::ALL.into_iter().find(|p| p.label() == s)
    }
}

impl fmt::Display for Peak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One Lorentzian contribution `A / (Gamma + i (omega - center))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedTerm {
    pub kappa: i32,
    pub peak: Peak,
    /// Number of interaction amplitudes (0, 2 or 4).
    pub order: usize,
    pub amplitude: C64,
    /// `Gamma_tau = half_gammas * gamma / 2`.
    pub half_gammas: u32,
    pub gamma_tau: f64,
    /// Unshifted centre, rad/s.
    pub center: f64,
    /// Doppler multiplier.
    pub nu: i32,
}

/// A robust contribution whose harmonics match no peak family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnclassifiedTerm {
    pub second_pulse: Harmonic,
    pub order: usize,
    pub half_gammas: u32,
    pub amplitude: C64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EngineOutput {
    pub terms: Vec<ClassifiedTerm>,
    pub unclassified: Vec<UnclassifiedTerm>,
}

impl ClassifiedTerm {
    /// `i omega_c - Gamma_tau`.
    pub fn pole(&self) -> C64 {
        C64::new(-self.gamma_tau, self.center)
    }
}

impl EngineOutput {
    pub fn for_kappa(&self, kappa: i32) -> impl Iterator<Item = &ClassifiedTerm> {
        self.terms.iter().filter(move |t| t.kappa == kappa)
    }

    /// Demodulated signal of channel `kappa` at delay `tau` from classified
    /// terms up to `max_order`, before any rescaling.
    pub fn interferogram(&self, kappa: i32, max_order: usize, tau: f64) -> C64 {
        self.for_kappa(kappa)
            .filter(|t| t.order <= max_order)
            .map(|t| t.amplitude * (t.pole() * tau).exp())
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub species: Species,
    pub pulse_area: f64,
    pub detector: DetectionTensor,
    /// `None` switches the dipole-dipole coupling off.
    pub coupling: Option<CouplingSpec>,
    pub order_max: usize,
    pub quadrature: SphereQuadrature,
    /// Coupling between the two pulses; not supported.
    pub interactions_between_pulses: bool,
}

/// Engine with the detection integrals precomputed; runs for several
/// polarisations share them.
pub struct Engine {
    pub config: EngineConfig,
    pub ops: AtomOperators,
    pub decay: DecayGenerator,
    pub integrals: DetectionIntegrals,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        if config.interactions_between_pulses {
            return Err(Error::Unsupported(
                "dipole-dipole coupling between the two pulses".into(),
            ));
        }
        detect::check_order(config.order_max)?;
        let ops = AtomOperators::new(&config.species);
        let decay = DecayGenerator::new(ops.clone());
        let ground = initial_state(&config.species, 1)?.atoms[0][0].op.clone();
        let integrals = detect_integrate(
            &decay,
            &config.detector,
            config.coupling.as_ref(),
            &config.quadrature,
            config.order_max,
            &ground,
        )?;
        Ok(Engine {
            config,
            ops,
            decay,
            integrals,
        })
    }

    /// Single-atom tagged state after both pulses with polarisation `e`.
    pub fn atom_after_pulses(&self, polarization: &Vector3<f64>) -> Result<TaggedState> {
        let u = pulse_unitary(&self.ops, self.config.pulse_area, polarization)?;
        initial_state(&self.config.species, 1)?
            .apply_pulse(&u, 0, &[0])?
            .evolve_tau(&self.decay)
            .apply_pulse(&u, 1, &[0])
    }

    pub fn run(&self, polarization: &Vector3<f64>) -> Result<EngineOutput> {
        let state = self.atom_after_pulses(polarization)?;
        let comps: Vec<&AtomComponent> = state.robust_components(0).collect();
        let mut acc = Accumulator::default();
        // Order 0: one atom.
        for c in &comps {
            let k = second_total(c);
            if k[0] + k[1] <= 0 {
                continue;
            }
            let amp = (&self.integrals.order0 * &c.op).trace();
            acc.add(k, 0, c.half_gammas, amp);
        }
        if let Some(ys) = &self.integrals.order2_spectator {
            // Each of the two driven atoms has the undriven one as a partner.
            for c in &comps {
                let k = second_total(c);
                if k[0] + k[1] <= 0 {
                    continue;
                }
                let amp = (ys * &c.op).trace() * 2.0;
                acc.add(k, 2, c.half_gammas, amp);
            }
        }
        for (order, y) in [(2, &self.integrals.order2), (4, &self.integrals.order4)] {
            if let Some(y) = y {
                pair_terms(y, &comps, order, &mut acc);
            }
        }
        Ok(acc.finish(&self.config.species, self.integrals.gamma))
    }
}

fn second_total(c: &AtomComponent) -> Harmonic {
    c.harmonics[1]
}

/// Contracts a two-atom observable with every pair of robust components.
fn pair_terms(y: &ManyBodyOp, comps: &[&AtomComponent], order: usize, acc: &mut Accumulator) {
    for cb in comps {
        let z = y.contract_last(&cb.op).to_dense();
        for ca in comps {
            let ka = second_total(ca);
            let kb = second_total(cb);
            let total = [ka[0] + kb[0], ka[1] + kb[1]];
            if total[0] + total[1] <= 0 {
                continue;
            }
            let amp = (&z * &ca.op).trace();
            acc.add(total, order, ca.half_gammas + cb.half_gammas, amp);
        }
    }
}

#[derive(Default)]
struct Accumulator {
    map: BTreeMap<(Harmonic, usize, u32), C64>,
}

impl Accumulator {
    fn add(&mut self, totals: Harmonic, order: usize, half_gammas: u32, amp: C64) {
        *self.map.entry((totals, order, half_gammas)).or_insert(C64::new(0.0, 0.0)) += amp;
    }

    fn finish(self, species: &Species, gamma: f64) -> EngineOutput {
        let mut out = EngineOutput::default();
        let (w1, w2) = (species.omega1(), species.omega2());
        for ((totals, order, half_gammas), amplitude) in self.map {
            if amplitude == C64::new(0.0, 0.0) {
                continue;
            }
            match Peak::from_totals(totals) {
                Some(peak) => out.terms.push(ClassifiedTerm {
                    kappa: peak.kappa(),
                    peak,
                    order,
                    amplitude,
                    half_gammas,
                    gamma_tau: 0.5 * gamma * half_gammas as f64,
                    center: peak.center(w1, w2),
                    nu: peak.kappa(),
                }),
                None => out.unclassified.push(UnclassifiedTerm {
                    second_pulse: totals,
                    order,
                    half_gammas,
                    amplitude,
                }),
            }
        }
        out
    }
}

/// Ground mixture of one atom, used as the spectator state.
pub fn ground_mixture(species: &Species) -> DMatrix<C64> {
    initial_state(species, 1).expect("one atom").atoms[0][0].op.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::InteractionMode;
    use crate::liouville::{detection_tensor, DetectorShape};

    fn config(coupling: Option<CouplingSpec>, order_max: usize) -> EngineConfig {
        EngineConfig {
            species: Species::test_j0_j1(),
            pulse_area: 0.4,
            detector: detection_tensor(&Vector3::x(), 0.38, DetectorShape::Cone).unwrap(),
            coupling,
            order_max,
            quadrature: SphereQuadrature::new(5, 9).unwrap(),
            interactions_between_pulses: false,
        }
    }

    fn order0(out: &EngineOutput) -> Vec<ClassifiedTerm> {
        out.terms.iter().filter(|t| t.order == 0).cloned().collect()
    }

    #[test]
    fn interactions_off_gives_only_single_atom_terms() {
        let e = Engine::new(config(None, 4)).unwrap();
        let out = e.run(&Vector3::y()).unwrap();
        assert_eq!(out.for_kappa(2).count(), 0);
        assert!(out.unclassified.is_empty());
        for t in &out.terms {
            assert_eq!(t.order, 0);
            assert!(t.amplitude.re > 0.0 && t.amplitude.im.abs() < 1e-12 * t.amplitude.re);
        }
    }

    #[test]
    fn order0_is_independent_of_coupling_mode() {
        let base = order0(&Engine::new(config(None, 2)).unwrap().run(&Vector3::x()).unwrap());
        for mode in [InteractionMode::Full, InteractionMode::near_electrostatic(), InteractionMode::FarOnly] {
            let e = Engine::new(config(Some(CouplingSpec::new(mode, 20.0)), 2)).unwrap();
            assert_eq!(order0(&e.run(&Vector3::x()).unwrap()), base);
        }
    }

    #[test]
    fn two_quantum_terms_need_coupling() {
        let e = Engine::new(config(Some(CouplingSpec::new(InteractionMode::Full, 20.0)), 2)).unwrap();
        let out = e.run(&Vector3::x()).unwrap();
        let k2: Vec<_> = out.for_kappa(2).collect();
        assert!(!k2.is_empty());
        for t in k2 {
            assert_eq!(t.order, 2);
            assert_eq!(t.nu, 2);
            assert!(t.amplitude.norm() > 0.0);
        }
    }

    #[test]
    fn zeroed_spectator_matches_two_atoms() {
        let mut two = CouplingSpec::new(InteractionMode::Full, 15.0);
        two.spectator = false;
        let mut three = CouplingSpec::new(InteractionMode::Full, 15.0);
        three.spectator_scale = 0.0;
        let a = Engine::new(config(Some(two), 4)).unwrap().run(&Vector3::x()).unwrap();
        let b = Engine::new(config(Some(three), 4)).unwrap().run(&Vector3::x()).unwrap();
        assert_eq!(a.terms, b.terms);
        assert!(a.terms.iter().all(|t| t.order <= 2));
    }

    #[test]
    fn spectator_adds_fourth_order() {
        let e = Engine::new(config(Some(CouplingSpec::new(InteractionMode::Full, 15.0)), 4)).unwrap();
        let out = e.run(&Vector3::x()).unwrap();
        assert!(out.terms.iter().any(|t| t.order == 4 && t.kappa == 2));
    }

    #[test]
    fn between_pulse_coupling_is_rejected() {
        let mut c = config(None, 0);
        c.interactions_between_pulses = true;
        assert!(matches!(Engine::new(c), Err(Error::Unsupported(_))));
    }

    #[test]
    fn peak_labels_round_trip() {
        for p in Peak::ALL {
            assert_eq!(Peak::parse(p.label()), Some(p));
            assert_eq!(Peak::from_totals(p.totals()), Some(p));
        }
        assert_eq!(Peak::from_totals([2, -1]), None);
    }
}
