//! Vapour-cell estimates: pulse area, velocity classes, collision rates and
//! Doppler widths.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{ATOMIC_MASS_UNIT, BOLTZMANN, HBAR, SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};
use crate::error::{invalid, Error, Result};

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be positive")))
    }
}

/// Area of a Gaussian pulse of peak intensity `intensity` (W/m^2) and
/// duration `sigma` (s) on a transition with dipole `dipole` (C m).
pub fn pulse_area(intensity: f64, sigma: f64, dipole: f64) -> Result<f64> {
    if intensity == 0.0 {
        return Ok(0.0);
    }
    positive("intensity", intensity)?;
    positive("sigma", sigma)?;
    positive("dipole", dipole)?;
    let field = (2.0 * intensity / (SPEED_OF_LIGHT * VACUUM_PERMITTIVITY)).sqrt();
    Ok(dipole / HBAR * field * (PI / (2.0 * 2f64.ln())).sqrt() * sigma)
}

/// Probability that one velocity component of two atoms differs by less
/// than `dv`, for a one-dimensional spread `v_bar`.
pub fn velocity_window_probability(dv: f64, v_bar: f64) -> Result<f64> {
    positive("v_bar", v_bar)?;
    if dv < 0.0 {
        return Err(invalid("dv", format!("{dv} must be non-negative")));
    }
    Ok(libm::erf(dv / (std::f64::consts::SQRT_2 * v_bar)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityClass {
    /// Allowed difference of one velocity component, m/s.
    pub dv: f64,
    /// Per-component probability.
    pub p: f64,
    /// m^-3.
    pub density: f64,
}

/// Density of atoms sharing a velocity class: the relative displacement
/// during `tau` stays below `fraction * lambda`.
pub fn velocity_class_density(n0: f64, v_bar: f64, lambda: f64, tau: f64, fraction: f64) -> Result<VelocityClass> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid("fraction", format!("{fraction} not in (0, 1)")));
    }
    if n0 < 0.0 {
        return Err(invalid("n0", format!("{n0} must be non-negative")));
    }
    positive("lambda", lambda)?;
    positive("tau", tau)?;
    let dv = lambda * fraction / (3f64.sqrt() * tau);
    let p = velocity_window_probability(dv, v_bar)?;
    Ok(VelocityClass {
        dv,
        p,
        density: n0 * p.powi(3),
    })
}

/// Mean nearest-neighbour distance `0.554 n^{-1/3}`.
pub fn mean_distance(density: f64) -> Result<f64> {
    positive("density", density)?;
    Ok(0.554 * density.powf(-1.0 / 3.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaporSpecies {
    pub name: String,
    /// m^-3.
    pub density: f64,
    /// m.
    pub radius: f64,
    /// kg.
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaporComposition {
    pub species: Vec<VaporSpecies>,
    /// K.
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionPartner {
    pub name: String,
    pub density: f64,
    /// m^2.
    pub cross_section: f64,
    /// m/s.
    pub relative_velocity: f64,
    /// Hz.
    pub rate: f64,
    /// s.
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionRates {
    pub target: String,
    pub partners: Vec<CollisionPartner>,
    pub total_density: f64,
    /// Hz.
    pub total: f64,
    /// s.
    pub time: f64,
}

pub const TABLE_TEMPERATURE: f64 = 295.15;

impl VaporComposition {
    pub fn validate(&self) -> Result<()> {
        positive("temperature", self.temperature)?;
        for s in &self.species {
            if !(s.density >= 0.0) {
                return Err(invalid("density", format!("{} for {}", s.density, s.name)));
            }
            positive("radius", s.radius)?;
            positive("mass", s.mass)?;
        }
        Ok(())
    }

    /// K, Rb and Cs vapour at 22 C with natural-abundance masses.
    pub fn reference_cell() -> Self {
        let sp = |name: &str, density: f64, radius: f64, amu: f64| VaporSpecies {
            name: name.into(),
            density,
            radius,
            mass: amu * ATOMIC_MASS_UNIT,
        };
        VaporComposition {
            species: vec![
                sp("K", 5.13e14, 2.43e-10, 39.0983),
                sp("Rb", 1.05e16, 2.65e-10, 85.4678),
                sp("Cs", 3.84e16, 2.98e-10, 132.905_451_96),
            ],
            temperature: TABLE_TEMPERATURE,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut c = self.clone();
        for s in &mut c.species {
            s.density *= factor;
        }
        c
    }
}

/// Thermal collision rate of `target` with every species of the vapour.
pub fn collision_rate(vapor: &VaporComposition, target: &str) -> Result<CollisionRates> {
    vapor.validate()?;
    let t = vapor
        .species
        .iter()
        .find(|s| s.name == target)
        .ok_or_else(|| Error::UnknownSpecies(target.into()))?;
    let mut partners = Vec::new();
    let mut total = 0.0;
    for s in &vapor.species {
        let mu = s.mass * t.mass / (s.mass + t.mass);
        let cross_section = PI * (s.radius + t.radius).powi(2);
        let relative_velocity = (8.0 * BOLTZMANN * vapor.temperature / (PI * mu)).sqrt();
        let rate = s.density * cross_section * relative_velocity;
        total += rate;
        partners.push(CollisionPartner {
            name: s.name.clone(),
            density: s.density,
            cross_section,
            relative_velocity,
            rate,
            time: 1.0 / rate,
        });
    }
    Ok(CollisionRates {
        target: target.into(),
        total_density: vapor.species.iter().map(|s| s.density).sum(),
        total,
        time: 1.0 / total,
        partners,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DopplerWidth {
    /// rms angular Doppler shift, rad/s.
    pub rms: f64,
    /// Full width at half maximum, rad/s.
    pub fwhm: f64,
}

/// One-dimensional thermal velocity spread `sqrt(k T / m)`.
pub fn thermal_velocity(temperature: f64, mass: f64) -> Result<f64> {
    positive("temperature", temperature)?;
    positive("mass", mass)?;
    Ok((BOLTZMANN * temperature / mass).sqrt())
}

pub fn doppler_rms(temperature: f64, mass: f64, k0: f64) -> Result<DopplerWidth> {
    positive("k0", k0)?;
    let rms = k0 * thermal_velocity(temperature, mass)?;
    Ok(DopplerWidth {
        rms,
        fwhm: 2.0 * (2.0 * 2f64.ln()).sqrt() * rms,
    })
}
