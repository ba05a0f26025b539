//! Demodulated 1QC/2QC spectra: harmonic selection, Doppler averaging, bulk
//! rescaling and polarisation anisotropy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::engine::{ClassifiedTerm, Peak};
use crate::error::{invalid, Error, Result};
use crate::faddeeva::faddeeva;
use crate::species::Species;
use crate::C64;

/// Keeps the terms whose modulation harmonic is `kappa` times the
/// difference frequency.
pub fn demodulate_select(terms: &[ClassifiedTerm], kappa: i32) -> Result<Vec<ClassifiedTerm>> {
    if kappa != 1 && kappa != 2 {
        return Err(Error::Harmonic(kappa));
    }
    Ok(terms.iter().filter(|t| t.kappa == kappa).cloned().collect())
}

/// A Lorentzian `A / (Gamma + i (omega - nu * center))` before Doppler averaging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakTerm {
    pub peak: Peak,
    pub order: usize,
    pub amplitude: C64,
    pub center: f64,
    pub gamma_tau: f64,
    pub nu: i32,
}

impl PeakTerm {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_tau > 0.0) {
            return Err(invalid("gamma_tau", format!("{} must be positive", self.gamma_tau)));
        }
        if self.nu != 1 && self.nu != 2 {
            return Err(invalid("nu", format!("{} not in {{1, 2}}", self.nu)));
        }
        Ok(())
    }

    /// Bare Lorentzian at the unshifted centre `center` (no Doppler shift).
    pub fn lorentzian(&self, omega: f64) -> C64 {
        self.amplitude / C64::new(self.gamma_tau, omega - self.center)
    }

    /// Gaussian average over the Doppler shift `Delta` (rms `doppler_rms`)
    /// of `A / (Gamma + i (omega - center - nu Delta))`:
    /// `A sqrt(pi) / (sqrt(2) nu Dbar) w(z)`,
    /// `z = (i Gamma - omega + center) / (sqrt(2) nu Dbar)`.
    pub fn doppler_averaged(&self, omega: f64, doppler_rms: f64) -> Result<C64> {
        if !(doppler_rms > 0.0) {
            return Err(invalid("doppler_rms", format!("{doppler_rms} must be positive")));
        }
        let s = std::f64::consts::SQRT_2 * self.nu as f64 * doppler_rms;
        let z = C64::new(self.center - omega, self.gamma_tau) / s;
        Ok(self.amplitude * (PI.sqrt() / s) * faddeeva(z)?)
    }

    /// Doppler-averaged profile, or the bare Lorentzian when `doppler_rms` is `None`.
    pub fn profile(&self, omega: f64, doppler_rms: Option<f64>) -> Result<C64> {
        match doppler_rms {
            Some(d) => self.doppler_averaged(omega, d),
            None => Ok(self.lorentzian(omega)),
        }
    }
}

/// Returns the profile of one term as a closure of the angular frequency.
pub fn doppler_average(term: &PeakTerm, doppler_rms: f64) -> Result<impl Fn(f64) -> Result<C64> + '_> {
    term.validate()?;
    if !(doppler_rms > 0.0) {
        return Err(invalid("doppler_rms", format!("{doppler_rms} must be positive")));
    }
    Ok(move |omega| term.doppler_averaged(omega, doppler_rms))
}

/// Bulk-vapour weights of the scattering orders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rescaling {
    pub n_det: f64,
    /// m^-1.
    pub k0: f64,
    /// m.
    pub r_bar: f64,
    /// Value of `k0 r` at which the engine evaluated the coupling.
    pub u_eval: f64,
}

/// Below this `k0 r` the far-field picture is questionable.
pub const FAR_FIELD_WARNING: f64 = 10.0;

impl Rescaling {
    /// Weights for amplitudes computed at `u_eval = k0 r_bar`.
    pub fn new(n_det: f64, k0: f64, r_bar: f64) -> Self {
        Rescaling {
            n_det,
            k0,
            r_bar,
            u_eval: k0 * r_bar,
        }
    }

    /// Weights that leave the engine amplitudes untouched.
    pub fn identity() -> Self {
        Rescaling {
            n_det: 1.0,
            k0: 1.0,
            r_bar: 1.0,
            u_eval: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_det >= 1.0) {
            return Err(invalid("n_det", format!("{} must be at least 1", self.n_det)));
        }
        for (name, v) in [("k0", self.k0), ("r_bar", self.r_bar), ("u_eval", self.u_eval)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn u(&self) -> f64 {
        self.k0 * self.r_bar
    }

    pub fn far_field_warning(&self) -> bool {
        self.u() < FAR_FIELD_WARNING
    }

    /// `N_det^{s} (u_eval / k0 r_bar)^{order}` with `s = order / 2 + 1`.
    ///
    /// Engine amplitudes already carry `u_eval^{-order}` from the envelope,
    /// so this equals `N_det^s / (k0 r_bar)^order` times the amplitude with
    /// the envelope stripped.
    pub fn factor(&self, order: usize) -> f64 {
        let s = (order / 2 + 1) as i32;
        self.n_det.powi(s) * (self.u_eval / self.u()).powi(order as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    pub kappa: i32,
    pub rescaling: Rescaling,
    /// rms Doppler shift, rad/s; `None` keeps the bare Lorentzians.
    pub doppler_rms: Option<f64>,
    /// Angular frequencies, rad/s, strictly increasing.
    pub grid: Vec<f64>,
    /// Doubles the 2D1 and 2D2 amplitudes to match the four-pulse scheme.
    pub four_pulse_equivalence: bool,
    /// Divides every value by this magnitude.
    pub normalization: Option<f64>,
}

impl SpectrumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa != 1 && self.kappa != 2 {
            return Err(Error::Harmonic(self.kappa));
        }
        self.rescaling.validate()?;
        if let Some(d) = self.doppler_rms {
            if !(d > 0.0) {
                return Err(invalid("doppler_rms", format!("{d} must be positive")));
            }
        }
        if self.grid.is_empty() {
            return Err(invalid("grid", "empty"));
        }
        if self.grid.iter().any(|w| !w.is_finite()) || self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("grid", "must be finite and strictly increasing"));
        }
        if let Some(n) = self.normalization {
            if !(n > 0.0 && n.is_finite()) {
                return Err(invalid("normalization", format!("{n} must be positive")));
            }
        }
        Ok(())
    }
}

/// `n` points spanning `[kappa w1 - 10 kappa D, kappa w2 + 10 kappa D]`.
pub fn default_grid(species: &Species, kappa: i32, doppler_rms: f64, n: usize) -> Vec<f64> {
    let k = kappa as f64;
    let lo = k * species.omega1() - 10.0 * k * doppler_rms;
    let hi = k * species.omega2() + 10.0 * k * doppler_rms;
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakAmplitude {
    pub peak: Peak,
    /// rad/s.
    pub center: f64,
    /// `|spectrum|` at the centre.
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub kappa: i32,
    pub omega: Vec<f64>,
    pub values: Vec<C64>,
    pub peaks: Vec<PeakAmplitude>,
    pub terms: Vec<PeakTerm>,
}

/// Applies the order weights and the four-pulse factor.
pub fn rescale_terms(terms: &[ClassifiedTerm], cfg: &SpectrumConfig) -> Result<Vec<PeakTerm>> {
    let selected = demodulate_select(terms, cfg.kappa)?;
    let mut out = Vec::with_capacity(selected.len());
    for t in selected {
        let mut a = t.amplitude * cfg.rescaling.factor(t.order);
        if cfg.four_pulse_equivalence && matches!(t.peak, Peak::TwoD1 | Peak::TwoD2) {
            a *= 2.0;
        }
        let p = PeakTerm {
            peak: t.peak,
            order: t.order,
            amplitude: a,
            center: t.center,
            gamma_tau: t.gamma_tau,
            nu: t.nu,
        };
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

fn evaluate(terms: &[PeakTerm], omega: f64, cfg: &SpectrumConfig) -> Result<C64> {
    let mut v = C64::new(0.0, 0.0);
    for t in terms {
        v += t.profile(omega, cfg.doppler_rms)?;
    }
    Ok(match cfg.normalization {
        Some(n) => v / n,
        None => v,
    })
}

pub fn rescale_and_assemble(terms: &[ClassifiedTerm], cfg: &SpectrumConfig) -> Result<Spectrum> {
    cfg.validate()?;
    let peak_terms = rescale_terms(terms, cfg)?;
    let values = cfg
        .grid
        .iter()
        .map(|&w| evaluate(&peak_terms, w, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut peaks: Vec<PeakAmplitude> = Vec::new();
    for p in Peak::ALL {
        if let Some(t) = peak_terms.iter().find(|t| t.peak == p) {
            peaks.push(PeakAmplitude {
                peak: p,
                center: t.center,
                amplitude: evaluate(&peak_terms, t.center, cfg)?.norm(),
            });
        }
    }
    Ok(Spectrum {
        kappa: cfg.kappa,
        omega: cfg.grid.clone(),
        values,
        peaks,
        terms: peak_terms,
    })
}

impl Spectrum {
    pub fn peak(&self, p: Peak) -> Option<&PeakAmplitude> {
        self.peaks.iter().find(|a| a.peak == p)
    }

    /// Grid indices of the local maxima of `|spectrum|` above `threshold`
    /// times the global maximum.
    pub fn local_maxima(&self, threshold: f64) -> Vec<usize> {
        let mag: Vec<f64> = self.values.iter().map(|v| v.norm()).collect();
        let top = mag.iter().cloned().fold(0.0, f64::max);
        (1..mag.len().saturating_sub(1))
            .filter(|&i| mag[i] >= mag[i - 1] && mag[i] > mag[i + 1] && mag[i] > threshold * top)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyRatio {
    pub peak: Peak,
    pub a_x: f64,
    pub a_y: f64,
    pub ratio: f64,
}

/// `A_y / A_x` per peak from two spectra differing only in the polarisation.
pub fn anisotropy(x: &Spectrum, y: &Spectrum) -> Result<Vec<AnisotropyRatio>> {
    if x.kappa != y.kappa || x.omega != y.omega {
        return Err(Error::MismatchedRuns("spectra differ in kappa or grid".into()));
    }
    let mut out = Vec::new();
    for px in &x.peaks {
        let py = y
            .peak(px.peak)
            .ok_or_else(|| Error::MismatchedRuns(format!("peak {} missing in the y run", px.peak)))?;
        out.push(AnisotropyRatio {
            peak: px.peak,
            a_x: px.amplitude,
            a_y: py.amplitude,
            ratio: py.amplitude / px.amplitude,
        });
    }
    Ok(out)
}

/// Full width at half maximum of `|f|` around its largest sample, with linear
/// interpolation between grid points.
pub fn fwhm(omega: &[f64], values: &[f64]) -> Option<f64> {
    let (imax, &vmax) = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = vmax / 2.0;
    let cross = |i: usize, j: usize| omega[i] + (half - values[i]) * (omega[j] - omega[i]) / (values[j] - values[i]);
    let mut lo = None;
    for i in (0..imax).rev() {
        if values[i] <= half {
            lo = Some(cross(i, i + 1));
            break;
        }
    }
    let mut hi = None;
    for i in imax + 1..values.len() {
        if values[i] <= half {
            hi = Some(cross(i - 1, i));
            break;
        }
    }
    Some(hi? - lo?)
}
