//! Gauss–Legendre rules and a product rule on the unit sphere.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Product rule: Gauss–Legendre in `cos(theta)` times a uniform grid in `phi`.
///
/// Weights are normalised to one, so [`SphereQuadrature::average`] returns the
/// uniform average over directions.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    pub n_theta: usize,
    pub n_phi: usize,
    points: Vec<(Vector3<f64>, f64)>,
}

/// Smallest rule that integrates spherical polynomials of degree 8 exactly.
pub const MIN_THETA_NODES: usize = 5;
pub const MIN_PHI_NODES: usize = 9;

impl SphereQuadrature {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < MIN_THETA_NODES || n_phi < MIN_PHI_NODES {
            return Err(Error::QuadratureOrder(format!(
                "{n_theta}x{n_phi} nodes cannot integrate degree-8 polynomials \
                 (need at least {MIN_THETA_NODES}x{MIN_PHI_NODES})"
            )));
        }
        let (xs, ws) = gauss_legendre(n_theta);
        let mut points = Vec::with_capacity(n_theta * n_phi);
        for (x, w) in xs.iter().zip(&ws) {
            let s = (1.0 - x * x).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = 2.0 * PI * k as f64 / n_phi as f64;
                let dir = Vector3::new(s * phi.cos(), s * phi.sin(), *x);
                points.push((dir, w / (2.0 * n_phi as f64)));
            }
        }
        Ok(SphereQuadrature {
            n_theta,
            n_phi,
            points,
        })
    }

    pub fn points(&self) -> &[(Vector3<f64>, f64)] {
        &self.points
    }

    pub fn average<T, F>(&self, mut f: F) -> T
    where
        F: FnMut(&Vector3<f64>) -> T,
        T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
    {
        self.points
            .iter()
            .fold(T::default(), |acc, (n, w)| acc + f(n) * *w)
    }
}

impl Default for SphereQuadrature {
    fn default() -> Self {
        SphereQuadrature::new(16, 32).expect("default order is valid")
    }
}
