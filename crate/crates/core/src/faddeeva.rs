//! Faddeeva function `w(z) = exp(-z^2) erfc(-i z)`.
//!
//! Weideman's rational expansion in the upper half plane, a Laplace continued
//! fraction far from the origin, and the reflection formula below the real axis.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::C64;

const TERMS: usize = 64;
const FAR: f64 = 12.0;

struct Weideman {
    l: f64,
    coeffs: Vec<f64>,
}

fn weideman() -> &'static Weideman {
    static TABLE: OnceLock<Weideman> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = TERMS;
        let m = 2 * n;
        let m2 = 2 * m;
        let l = (n as f64 / 2f64.sqrt()).sqrt();
        // f on the shifted grid k = -m + 1 .. m - 1, with f[0] = 0.
        let mut f = vec![0.0; m2];
        for (j, fj) in f.iter_mut().enumerate().skip(1) {
            let k = j as f64 - m as f64;
            let theta = k * PI / m as f64;
            let t = l * (theta / 2.0).tan();
            *fj = (-t * t).exp() * (l * l + t * t);
        }
        // a_n = Re(fft(fftshift(f)))[n] / m2, by direct summation.
        let mut coeffs = Vec::with_capacity(n);
        for k in 1..=n {
            let mut acc = 0.0;
            for (j, _) in f.iter().enumerate() {
                let src = f[(j + m) % m2];
                let ang = -2.0 * PI * (j * k % m2) as f64 / m2 as f64;
                acc += src * ang.cos();
            }
            coeffs.push(acc / m2 as f64);
        }
        Weideman { l, coeffs }
    })
}

fn upper_rational(z: C64) -> C64 {
    let tab = weideman();
    let i = C64::i();
    let denom = C64::new(tab.l, 0.0) - i * z;
    let zz = (C64::new(tab.l, 0.0) + i * z) / denom;
    let mut p = C64::new(0.0, 0.0);
    for c in tab.coeffs.iter().rev() {
        p = p * zz + c;
    }
    2.0 * p / (denom * denom) + 1.0 / (PI.sqrt() * denom)
}

fn upper_continued_fraction(z: C64) -> C64 {
    // w(z) = (i/sqrt(pi)) / (z - (1/2)/(z - 1/(z - (3/2)/(z - ...))))
    let mut t = z;
    for k in (1..=40).rev() {
        t = z - (k as f64 / 2.0) / t;
    }
    C64::i() / (PI.sqrt() * t)
}

/// `w(z)` for any finite complex argument.
pub fn faddeeva(z: C64) -> Result<C64> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::NonFinite);
    }
    if z.im >= 0.0 {
        Ok(upper(z))
    } else {
        // w(z) = 2 exp(-z^2) - w(-z)
        Ok(2.0 * (-z * z).exp() - upper(-z))
    }
}

fn upper(z: C64) -> C64 {
    if z.norm() > FAR {
        upper_continued_fraction(z)
    } else {
        upper_rational(z)
    }
}
