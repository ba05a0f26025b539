//! Retarded dipole-dipole interaction tensor and its orientation averages.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::SphereQuadrature;
use crate::C64;

/// Which parts of the interaction tensor are retained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionMode {
    /// All of `1/u`, `1/u^2` and `1/u^3` terms with the retardation phase.
    Full,
    /// Only the `1/u^3` term. With `electrostatic` the `e^{iu}` factor is dropped.
    NearOnly { electrostatic: bool },
    /// Only the transverse `1/u` term.
    FarOnly,
}

impl InteractionMode {
    /// Whether the coupling carries the pair phase `e^{i k0 r}`.
    pub fn carries_position_phase(self) -> bool {
        !matches!(self, InteractionMode::NearOnly { electrostatic: true })
    }

    pub fn near_electrostatic() -> Self {
        InteractionMode::NearOnly {
            electrostatic: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairGeometry {
    /// Distance, m.
    pub r: f64,
    /// Unit vector pointing from one atom of the pair to the other.
    pub n_hat: Vector3<f64>,
    /// Resonant wavenumber, 1/m.
    pub k0: f64,
}

impl PairGeometry {
    pub fn new(r: f64, n_hat: Vector3<f64>, k0: f64) -> Result<Self> {
        let g = PairGeometry { r, n_hat, k0 };
        g.validate()?;
        Ok(g)
    }

    /// Geometry with a prescribed dimensionless separation `u = k0 r`.
    pub fn from_u(u: f64, n_hat: Vector3<f64>) -> Result<Self> {
        PairGeometry::new(u, n_hat, 1.0)
    }

    pub fn u(&self) -> f64 {
        self.k0 * self.r
    }

    fn validate(&self) -> Result<()> {
        let u = self.u();
        if !(u > 0.0) || !u.is_finite() {
            return Err(Error::InvalidGeometry(format!("k0 r = {u} must be positive")));
        }
        if (self.n_hat.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidGeometry(format!(
                "|n| = {} is not a unit vector",
                self.n_hat.norm()
            )));
        }
        Ok(())
    }
}

fn projectors(n: &Vector3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let nn = n * n.transpose();
    let id = Matrix3::identity();
    (id - nn, id - nn * 3.0)
}

/// Scalar coefficients `(a, b)` such that the phase-stripped tensor is
/// `a (I - nn) + b (I - 3 nn)`, in units where the prefactor is `3 gamma / 4`.
fn envelope_coefficients(u: f64, mode: InteractionMode) -> (C64, C64) {
    let i = C64::i();
    match mode {
        InteractionMode::Full => (C64::new(1.0 / u, 0.0), (i / u - 1.0 / (u * u)) / u),
        InteractionMode::FarOnly => (C64::new(1.0 / u, 0.0), C64::new(0.0, 0.0)),
        InteractionMode::NearOnly { .. } => (C64::new(0.0, 0.0), C64::new(-1.0 / (u * u * u), 0.0)),
    }
}

/// Phase-stripped interaction tensor: `green_tensor = e^{iu} * envelope`
/// whenever the mode carries the retardation phase; for the electrostatic
/// near field the two coincide.
pub fn envelope_tensor(geometry: &PairGeometry, gamma: f64, mode: InteractionMode) -> Result<Matrix3<C64>> {
    geometry.validate()?;
    let (a, b) = envelope_coefficients(geometry.u(), mode);
    let (transverse, near) = projectors(&geometry.n_hat);
    let pref = 0.75 * gamma;
    Ok(transverse.map(|x| C64::new(x, 0.0)) * (a * pref) + near.map(|x| C64::new(x, 0.0)) * (b * pref))
}

/// The dipole-dipole interaction tensor `T_kl`.
pub fn green_tensor(geometry: &PairGeometry, gamma: f64, mode: InteractionMode) -> Result<Matrix3<C64>> {
    let m = envelope_tensor(geometry, gamma, mode)?;
    if mode.carries_position_phase() {
        Ok(m * C64::from_polar(1.0, geometry.u()))
    } else {
        Ok(m)
    }
}

/// Uniform average of `contraction(n)` over directions on the unit sphere.
pub fn pair_orientation_average<F>(quadrature: &SphereQuadrature, mut contraction: F) -> C64
where
    F: FnMut(&Vector3<f64>) -> C64,
{
    quadrature.average(|n| contraction(n))
}

/// Second moment `W_ab = <M_a conj(M_b)>` of the envelope tensor over
/// orientations, with `a, b` flattened row-major indices, decomposed as
/// `W = sum_i lambda_i v_i v_i^dagger`.
///
/// Averages of any expression bilinear in `M` and `conj(M)` follow by
/// substituting `M -> v_i`, `conj(M) -> conj(v_i)` and summing with weights
/// `lambda_i`. For a real envelope (electrostatic mode) the `v_i` are real,
/// so expressions quadratic in `M` are covered as well.
#[derive(Clone, Debug)]
pub struct OrientationModes {
    pub modes: Vec<(f64, Matrix3<C64>)>,
}

pub fn orientation_modes(
    u: f64,
    gamma: f64,
    mode: InteractionMode,
    quadrature: &SphereQuadrature,
) -> Result<OrientationModes> {
    let mut w = DMatrix::<C64>::zeros(9, 9);
    for (n, weight) in quadrature.points() {
        let g = PairGeometry::from_u(u, *n)?;
        let m = envelope_tensor(&g, gamma, mode)?;
        for a in 0..9 {
            for b in 0..9 {
                w[(a, b)] += m[(a / 3, a % 3)] * m[(b / 3, b % 3)].conj() * *weight;
            }
        }
    }
    let scale = w.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(OrientationModes { modes: Vec::new() });
    }
    // Eigen-decomposition in a normalised frame keeps the tolerance relative.
    let w = w / C64::new(scale, 0.0);
    let mut modes = Vec::new();
    if mode.carries_position_phase() {
        let eig = w.symmetric_eigen();
        for (k, lambda) in eig.eigenvalues.iter().enumerate() {
            if *lambda > 1e-13 {
                let v = eig.eigenvectors.column(k);
                modes.push((lambda * scale, Matrix3::from_fn(|r, c| v[3 * r + c])));
            }
        }
    } else {
        // Real envelope: a real eigenbasis also represents <M (x) M>.
        let eig = w.map(|x| x.re).symmetric_eigen();
        for (k, lambda) in eig.eigenvalues.iter().enumerate() {
            if *lambda > 1e-13 {
                let v = eig.eigenvectors.column(k);
                modes.push((lambda * scale, Matrix3::from_fn(|r, c| C64::new(v[3 * r + c], 0.0))));
            }
        }
    }
    Ok(OrientationModes { modes })
}
