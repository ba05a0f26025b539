//! Run configuration: TOML with one section per concern, units spelled out.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mqc_core::engine::CouplingSpec;
use mqc_core::kernel::InteractionMode;
use mqc_core::liouville::{detection_tensor, DetectionTensor, DetectorShape};
use mqc_core::quadrature::SphereQuadrature;
use mqc_core::species::{ExcitedSpec, Species, SpeciesSpec};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::units::*;

pub const PRESETS: &[(&str, &str)] = &[
    ("fig2", include_str!("../presets/fig2.toml")),
    ("fig3", include_str!("../presets/fig3.toml")),
    ("tableII", include_str!("../presets/tableII.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("validate-small", include_str!("../presets/validate-small.toml")),
];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub species: SpeciesSection,
    pub detector: Option<DetectorSection>,
    pub pulses: Option<PulseSection>,
    pub interaction: Option<InteractionSection>,
    pub spectrum: Option<SpectrumSection>,
    pub anisotropy: Option<AnisotropySection>,
    pub estimate: Option<EstimateSection>,
    pub emission: Option<EmissionSection>,
    pub oracle: Option<OracleSection>,
    #[serde(default)]
    pub output: OutputSection,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    /// `K39` or `test_J0_J1`.
    pub preset: Option<String>,
    pub custom: Option<CustomSpecies>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpecies {
    pub name: String,
    pub ground_j: f64,
    pub excited: Vec<CustomManifold>,
    pub dipole: Dipole,
    pub lifetime: Time,
    pub mass: Mass,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomManifold {
    pub j: f64,
    pub frequency: AngularFrequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cone,
    Point,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    /// Unit vector; the x and y pump polarisations are the lab axes.
    pub direction: [f64; 3],
    pub solid_angle: SolidAngle,
    pub shape: Shape,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    /// Pulse area in radians, shared by both lines.
    pub area: f64,
    /// Outer delays of the four-pulse experiment; recorded, not simulated.
    pub t01: Option<Time>,
    pub t23: Option<Time>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Off,
    Full,
    Near,
    NearElectrostatic,
    Far,
}

impl ModeName {
    pub fn interaction(self) -> Option<InteractionMode> {
        match self {
            ModeName::Off => None,
            ModeName::Full => Some(InteractionMode::Full),
            ModeName::Near => Some(InteractionMode::NearOnly { electrostatic: false }),
            ModeName::NearElectrostatic => Some(InteractionMode::near_electrostatic()),
            ModeName::Far => Some(InteractionMode::FarOnly),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModeName::Off => "off",
            ModeName::Full => "full",
            ModeName::Near => "near",
            ModeName::NearElectrostatic => "near-electrostatic",
            ModeName::Far => "far",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSection {
    pub mode: ModeName,
    pub order_max: usize,
    pub spectator: bool,
    /// `k0 r` at which the coupling is evaluated; defaults to `k0 r_bar` of
    /// the spectrum section.
    pub separation: Option<f64>,
    /// Gauss-Legendre by trapezoid points of the pair-orientation average.
    #[serde(default = "default_quadrature")]
    pub quadrature: [usize; 2],
}

fn default_quadrature() -> [usize; 2] {
    [8, 16]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub n_det: f64,
    pub k0: Wavenumber,
    pub r_bar: Length,
    /// Either the rms Doppler shift or the vapour temperature.
    pub doppler_rms: Option<AngularFrequency>,
    pub temperature: Option<Temperature>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub four_pulse_equivalence: bool,
    /// Divide by the y-polarised 1QC D2 peak.
    pub normalize: bool,
}

fn default_grid_points() -> usize {
    4001
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnisotropySection {
    pub modes: Vec<ModeName>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub intensity: Intensity,
    pub pulse_duration: Time,
    pub dipole: Dipole,
    pub v_bar: Velocity,
    pub wavelength: Length,
    pub tau_spont: Time,
    pub n0: Density,
    /// Allowed displacement during one lifetime, as fractions of the wavelength.
    pub displacement_fractions: Vec<f64>,
    pub temperature: Temperature,
    pub target: String,
    pub vapor: Vec<VaporEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaporEntry {
    pub name: String,
    pub density: Density,
    pub radius: Length,
    pub mass: Mass,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionSection {
    pub theta_points: usize,
    pub cases: Vec<EmissionCase>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionCase {
    pub label: String,
    /// Index of the excited manifold, 1 for the lowest.
    pub manifold: usize,
    /// Sublevel populations, ascending m.
    pub populations: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// `k0 r` of the atom pair.
    pub separation: f64,
    pub trials: usize,
    pub phase_steps: usize,
    pub cycles: usize,
    /// Modulation frequencies of the two pulses in units of the cycle-train bin.
    pub bins: [i64; 2],
    /// Cycle period in excited-state lifetimes.
    pub cycle_lifetimes: f64,
    /// Delays in excited-state lifetimes.
    pub taus_lifetimes: Vec<f64>,
    pub tolerance: f64,
    pub max_standard_errors: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

fn default_dir() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

pub fn preset(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|p| p.0 == name)
        .map(|p| p.1)
        .ok_or_else(|| anyhow!("unknown preset `{name}`; available: {:?}", PRESETS.iter().map(|p| p.0).collect::<Vec<_>>()))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))?;
        cfg.species()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn species(&self) -> Result<Species> {
        match (&self.species.preset, &self.species.custom) {
            (Some(name), None) => Ok(Species::preset(name)?),
            (None, Some(c)) => Ok(Species::new(&SpeciesSpec {
                name: c.name.clone(),
                ground_j: c.ground_j,
                excited: c
                    .excited
                    .iter()
                    .map(|m| ExcitedSpec {
                        j: m.j,
                        omega: m.frequency.0,
                    })
                    .collect(),
                dipole: c.dipole.0,
                gamma: 1.0 / c.lifetime.0,
                mass: c.mass.0,
            })
            .context("species.custom")?),
            _ => bail!("species: give exactly one of `preset` and `custom`"),
        }
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value.as_ref().ok_or_else(|| anyhow!("missing [{name}] section"))
    }

    pub fn detector(&self) -> Result<DetectionTensor> {
        let d = self.section(&self.detector, "detector")?;
        let dir = Vector3::from(d.direction);
        if (dir.norm() - 1.0).abs() > 1e-9 {
            bail!("detector.direction must be a unit vector, got norm {}", dir.norm());
        }
        let shape = match d.shape {
            Shape::Cone => DetectorShape::Cone,
            Shape::Point => DetectorShape::Point,
        };
        detection_tensor(&dir, d.solid_angle.0, shape).context("detector")
    }

    /// Coupling for `mode`, evaluated at the configured separation.
    pub fn coupling(&self, mode: ModeName) -> Result<Option<CouplingSpec>> {
        let i = self.section(&self.interaction, "interaction")?;
        let Some(m) = mode.interaction() else {
            return Ok(None);
        };
        let u = match i.separation {
            Some(u) => u,
            None => {
                let s = self.section(&self.spectrum, "spectrum")?;
                s.k0.0 * s.r_bar.0
            }
        };
        if !(u > 0.0 && u.is_finite()) {
            bail!("interaction.separation must be positive, got {u}");
        }
        Ok(Some(CouplingSpec {
            spectator: i.spectator,
            ..CouplingSpec::new(m, u)
        }))
    }

    pub fn quadrature(&self) -> Result<SphereQuadrature> {
        let q = self.section(&self.interaction, "interaction")?.quadrature;
        SphereQuadrature::new(q[0], q[1]).context("interaction.quadrature")
    }

    pub fn doppler_rms(&self, species: &Species) -> Result<f64> {
        let s = self.section(&self.spectrum, "spectrum")?;
        match (s.doppler_rms, s.temperature) {
            (Some(d), None) => Ok(d.0),
            (None, Some(t)) => Ok(mqc_core::estimators::doppler_rms(t.0, species.mass, species.k0())?.rms),
            _ => bail!("spectrum: give exactly one of `doppler_rms` and `temperature`"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for (name, text) in PRESETS {
            RunConfig::parse(text).unwrap_or_else(|e| panic!("{name}: {e:#}"));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{}\n[extra]\nx = 1\n", preset("fig4").unwrap());
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
        let text = preset("fig2").unwrap().replace("n_det = 1e9", "n_det = 1e9\nndet = 2");
        assert!(RunConfig::parse(&text).unwrap_err().to_string().contains("ndet"));
    }

    #[test]
    fn units_are_required() {
        let text = preset("fig2").unwrap().replace("\"7.5 mm\"", "\"7.5\"");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("r_bar") && err.contains("no unit"), "{err}");
    }

    #[test]
    fn fig2_separation_follows_rescaling() {
        let cfg = RunConfig::parse(preset("fig2").unwrap()).unwrap();
        let c = cfg.coupling(ModeName::Full).unwrap().unwrap();
        assert!((c.u - 8.18e4 * 7.5e-3).abs() < 1e-9);
        assert!(cfg.coupling(ModeName::Off).unwrap().is_none());
    }
}
