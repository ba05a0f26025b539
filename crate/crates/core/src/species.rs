//! Atomic level schemes and vector dipole operators.
//!
//! Single-atom basis ordering: manifolds ground, then excited manifolds in the
//! order given (for potassium: P1/2, P3/2); inside a manifold the Zeeman
//! sublevels run from `m = -J` to `m = +J`. The quantisation axis is `z`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::angular::{clebsch_gordan, HalfInt};
use crate::constants::{ATOMIC_MASS_UNIT, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ground,
    Excited,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifold {
    pub role: Role,
    pub j: HalfInt,
    /// Transition angular frequency from the ground manifold, rad/s (0 for ground).
    pub omega: f64,
    /// Index of the `m = -J` sublevel in the single-atom basis.
    pub offset: usize,
}

impl Manifold {
    pub fn len(&self) -> usize {
        self.j.multiplicity()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn index_of(&self, m: HalfInt) -> Option<usize> {
        self.j
            .projections()
            .position(|mm| mm == m)
            .map(|k| self.offset + k)
    }
}

/// Serializable description of a species in SI units.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub name: String,
    pub ground_j: f64,
    /// Excited manifolds as (J, transition angular frequency in rad/s).
    pub excited: Vec<ExcitedSpec>,
    /// Reduced dipole scalar, C·m.
    pub dipole: f64,
    /// Spontaneous decay rate shared by all excited manifolds, 1/s.
    pub gamma: f64,
    /// Atomic mass, kg.
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExcitedSpec {
    pub j: f64,
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Species {
    pub name: String,
    /// Ground manifold first, then excited manifolds.
    pub manifolds: Vec<Manifold>,
    pub dipole: f64,
    pub gamma: f64,
    pub mass: f64,
}

/// Potassium lifetime of the 4P levels, s.
pub const K_TAU_SPONT: f64 = 26.37e-9;

impl Species {
    pub fn new(spec: &SpeciesSpec) -> Result<Self> {
        let ground = HalfInt::from_f64(spec.ground_j)?;
        if ground.twice() < 0 {
            return Err(Error::InvalidSpecies("negative ground J".into()));
        }
        if spec.excited.is_empty() {
            return Err(Error::InvalidSpecies("no excited manifold".into()));
        }
        if !(spec.gamma > 0.0 && spec.dipole > 0.0 && spec.mass > 0.0) {
            return Err(Error::InvalidSpecies(
                "gamma, dipole and mass must be positive".into(),
            ));
        }
        let mut manifolds = vec![Manifold {
            role: Role::Ground,
            j: ground,
            omega: 0.0,
            offset: 0,
        }];
        let mut offset = ground.multiplicity();
        for e in &spec.excited {
            let j = HalfInt::from_f64(e.j)?;
            if j.twice() < 0 || (j.twice() + ground.twice()) % 2 != 0 {
                return Err(Error::InvalidSpecies(format!("excited J = {} incompatible", e.j)));
            }
            if (j.twice() - ground.twice()).abs() > 2 || (j.twice() == 0 && ground.twice() == 0) {
                return Err(Error::InvalidSpecies(format!("J = {} not dipole-coupled", e.j)));
            }
            if !(e.omega > 0.0) {
                return Err(Error::InvalidSpecies("transition frequency must be positive".into()));
            }
            if manifolds.iter().any(|m| m.role == Role::Excited && m.omega == e.omega) {
                return Err(Error::InvalidSpecies("duplicate transition frequency".into()));
            }
            manifolds.push(Manifold {
                role: Role::Excited,
                j,
                omega: e.omega,
                offset,
            });
            offset += j.multiplicity();
        }
        Ok(Species {
            name: spec.name.clone(),
            manifolds,
            dipole: spec.dipole,
            gamma: spec.gamma,
            mass: spec.mass,
        })
    }

    pub fn spec(&self) -> SpeciesSpec {
        SpeciesSpec {
            name: self.name.clone(),
            ground_j: self.ground().j.value(),
            excited: self
                .excited()
                .map(|m| ExcitedSpec {
                    j: m.j.value(),
                    omega: m.omega,
                })
                .collect(),
            dipole: self.dipole,
            gamma: self.gamma,
            mass: self.mass,
        }
    }

    /// `39K` with the D1 and D2 lines.
    pub fn k39() -> Self {
        Species::new(&SpeciesSpec {
            name: "K39".into(),
            ground_j: 0.5,
            excited: vec![
                ExcitedSpec {
                    j: 0.5,
                    omega: 2.0 * PI * 389.6e12,
                },
                ExcitedSpec {
                    j: 1.5,
                    omega: 2.0 * PI * 391.3e12,
                },
            ],
            dipole: 2.46e-29,
            gamma: 1.0 / K_TAU_SPONT,
            mass: 38.963_706_5 * ATOMIC_MASS_UNIT,
        })
        .expect("built-in species is valid")
    }

    /// Generic `J = 0 -> J = 1` atom with potassium-like rates.
    pub fn test_j0_j1() -> Self {
        Species::new(&SpeciesSpec {
            name: "test_J0_J1".into(),
            ground_j: 0.0,
            excited: vec![ExcitedSpec {
                j: 1.0,
                omega: 2.0 * PI * 390.45e12,
            }],
            dipole: 2.46e-29,
            gamma: 1.0 / K_TAU_SPONT,
            mass: 38.963_706_5 * ATOMIC_MASS_UNIT,
        })
        .expect("built-in species is valid")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "K39" | "k39" => Ok(Species::k39()),
            "test_J0_J1" | "test_j0_j1" => Ok(Species::test_j0_j1()),
            other => Err(Error::UnknownSpecies(other.into())),
        }
    }

    pub fn dim(&self) -> usize {
        self.manifolds.iter().map(Manifold::len).sum()
    }

    pub fn ground(&self) -> &Manifold {
        &self.manifolds[0]
    }

    pub fn excited(&self) -> impl Iterator<Item = &Manifold> {
        self.manifolds.iter().skip(1)
    }

    pub fn n_excited(&self) -> usize {
        self.manifolds.len() - 1
    }

    /// Manifold index of every basis state.
    pub fn manifold_of(&self, state: usize) -> usize {
        self.manifolds
            .iter()
            .position(|m| m.range().contains(&state))
            .expect("state index within basis")
    }

    pub fn omega1(&self) -> f64 {
        self.manifolds[1].omega
    }

    pub fn omega2(&self) -> f64 {
        self.manifolds.last().map(|m| m.omega).unwrap_or(0.0)
    }

    /// Mean carrier angular frequency of the excited manifolds.
    pub fn omega0(&self) -> f64 {
        self.excited().map(|m| m.omega).sum::<f64>() / self.n_excited() as f64
    }

    /// Mean resonant wavenumber, 1/m.
    pub fn k0(&self) -> f64 {
        self.omega0() / SPEED_OF_LIGHT
    }

    pub fn lambda(&self) -> f64 {
        2.0 * PI / self.k0()
    }

    pub fn tau_spont(&self) -> f64 {
        1.0 / self.gamma
    }
}

/// Spherical basis vector `e_q` for `q = -1, 0, 1`.
pub fn spherical_unit(q: i32) -> Vector3<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match q {
        1 => Vector3::new(C64::new(-s, 0.0), C64::new(0.0, -s), C64::new(0.0, 0.0)),
        0 => Vector3::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
        -1 => Vector3::new(C64::new(s, 0.0), C64::new(0.0, -s), C64::new(0.0, 0.0)),
        _ => panic!("spherical component out of range: {q}"),
    }
}

/// Vector operator on the single-atom space.
///
/// `spherical[q + 1]` is the matrix multiplying the basis vector `e_q`; the
/// Cartesian component `k` is `sum_q (e_q)_k * spherical[q + 1]`.
#[derive(Clone, Debug)]
pub struct VectorOperator {
    pub spherical: [DMatrix<C64>; 3],
}

impl VectorOperator {
    pub fn cartesian(&self, k: usize) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.spherical[0].nrows(), self.spherical[0].ncols());
        for q in -1..=1 {
            let e = spherical_unit(q);
            out += &self.spherical[(q + 1) as usize] * e[k];
        }
        out
    }

    pub fn cartesian_all(&self) -> [DMatrix<C64>; 3] {
        [self.cartesian(0), self.cartesian(1), self.cartesian(2)]
    }

    /// Cartesian components of the adjoint vector, `(D^dagger)_k`.
    pub fn adjoint_cartesian(&self) -> [DMatrix<C64>; 3] {
        let c = self.cartesian_all();
        [c[0].adjoint(), c[1].adjoint(), c[2].adjoint()]
    }

    /// `D . e` for a complex polarisation vector.
    pub fn dot(&self, e: &Vector3<C64>) -> DMatrix<C64> {
        let c = self.cartesian_all();
        &c[0] * e[0] + &c[1] * e[1] + &c[2] * e[2]
    }

    /// `sum_k (D^dagger)_k D_k`.
    pub fn norm_operator(&self) -> DMatrix<C64> {
        let c = self.cartesian_all();
        c.iter().map(|m| m.adjoint() * m).fold(
            DMatrix::zeros(c[0].nrows(), c[0].ncols()),
            |acc, m| acc + m,
        )
    }
}

/// Lowering operator of the transition from excited manifold `manifold` to
/// the ground manifold: component `q` maps `|J_e, m_g+q>` to `|J_g, m_g>`
/// with amplitude `<J_g m_g, 1 q | J_e m_g+q>`.
pub fn lowering_operator(species: &Species, manifold: usize) -> Result<VectorOperator> {
    let excited = species
        .manifolds
        .get(manifold)
        .filter(|m| m.role == Role::Excited)
        .ok_or(Error::NotExcited { index: manifold })?;
    let ground = species.ground();
    let dim = species.dim();
    let mut spherical = [
        DMatrix::zeros(dim, dim),
        DMatrix::zeros(dim, dim),
        DMatrix::zeros(dim, dim),
    ];
    for q in -1..=1i32 {
        let hq = HalfInt::from(q);
        for mg in ground.j.projections() {
            let me = mg + hq;
            if me.twice().abs() > excited.j.twice() {
                continue;
            }
            let cg = clebsch_gordan(ground.j, mg, HalfInt::ONE, hq, excited.j, me)?;
            if cg != 0.0 {
                let row = ground.index_of(mg).expect("ground sublevel");
                let col = excited.index_of(me).expect("excited sublevel");
                spherical[(q + 1) as usize][(row, col)] = C64::new(cg, 0.0);
            }
        }
    }
    Ok(VectorOperator { spherical })
}

/// Lowering operators for every excited manifold, in manifold order.
pub fn all_lowering_operators(species: &Species) -> Vec<VectorOperator> {
    (1..species.manifolds.len())
        .map(|k| lowering_operator(species, k).expect("excited manifold"))
        .collect()
}

/// Polarisation-resolved single-atom emission pattern.
///
/// Intensities are normalised such that the integral of `total` over the
/// full sphere equals the summed excited population (decay rate set to one).
#[derive(Clone, Debug)]
pub struct EmissionPattern {
    pi_weight: f64,
    sigma_weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmissionSample {
    pub theta: f64,
    pub pi: f64,
    pub sigma: f64,
    pub total: f64,
}

impl EmissionPattern {
    /// Intensities at polar angle `theta` from the quantisation axis.
    pub fn at(&self, theta: f64) -> EmissionSample {
        let (s, c) = theta.sin_cos();
        let pi = self.pi_weight * 3.0 / (8.0 * PI) * s * s;
        let sigma = self.sigma_weight * 3.0 / (16.0 * PI) * (1.0 + c * c);
        EmissionSample {
            theta,
            pi,
            sigma,
            total: pi + sigma,
        }
    }

    /// Summed squared Clebsch–Gordan weights of the pi and sigma channels.
    pub fn channel_weights(&self) -> (f64, f64) {
        (self.pi_weight, self.sigma_weight)
    }
}

/// Angular emission of manifold `manifold` for the given sublevel
/// populations (ascending `m`). `theta` in [`EmissionPattern::at`] is measured
/// from the quantisation axis, which coincides with a linear pump polarisation.
pub fn emission_pattern(
    species: &Species,
    manifold: usize,
    populations: &[f64],
) -> Result<EmissionPattern> {
    let d = lowering_operator(species, manifold)?;
    let excited = &species.manifolds[manifold];
    if populations.len() != excited.len() {
        return Err(Error::LengthMismatch {
            expected: excited.len(),
            actual: populations.len(),
        });
    }
    if populations.iter().any(|p| !(*p >= 0.0)) {
        return Err(crate::error::invalid("populations", "must be nonnegative"));
    }
    let mut pi_weight = 0.0;
    let mut sigma_weight = 0.0;
    for (k, p) in populations.iter().enumerate() {
        let col = excited.offset + k;
        for q in -1..=1i32 {
            let w: f64 = d.spherical[(q + 1) as usize]
                .column(col)
                .iter()
                .map(|c| c.norm_sqr())
                .sum();
            if q == 0 {
                pi_weight += p * w;
            } else {
                sigma_weight += p * w;
            }
        }
    }
    Ok(EmissionPattern {
        pi_weight,
        sigma_weight,
    })
}
