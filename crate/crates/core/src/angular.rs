//! Angular-momentum algebra.
//!
//! All coefficients follow the Condon–Shortley phase convention. This is the
//! only place where that convention is fixed; every sign in the dipole
//! operators derives from [`clebsch_gordan`].

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A half-integer quantum number stored as twice its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);
    pub const HALF: HalfInt = HalfInt(1);
    pub const ONE: HalfInt = HalfInt(2);
    pub const THREE_HALVES: HalfInt = HalfInt(3);

    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub fn from_f64(value: f64) -> Result<Self> {
        let twice = 2.0 * value;
        if !twice.is_finite() || (twice - twice.round()).abs() > 1e-9 {
            return Err(Error::InvalidQuantumNumber(value));
        }
        Ok(HalfInt(twice.round() as i32))
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        0.5 * self.0 as f64
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// Projections `-j, -j+1, ..., j` in ascending order.
    pub fn projections(self) -> impl Iterator<Item = HalfInt> {
        let j = self.0;
        (0..=j.max(-1)).map(move |k| HalfInt(-j + 2 * k)).take_while(move |m| m.0 <= j)
    }

    /// Number of projections, `2j + 1`.
    pub fn multiplicity(self) -> usize {
        (self.0 + 1).max(0) as usize
    }
}

impl std::ops::Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 + rhs.0)
    }
}

impl std::ops::Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 - rhs.0)
    }
}

impl std::ops::Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

impl From<i32> for HalfInt {
    fn from(value: i32) -> Self {
        HalfInt(2 * value)
    }
}

impl TryFrom<f64> for HalfInt {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        HalfInt::from_f64(value)
    }
}

impl From<HalfInt> for f64 {
    fn from(value: HalfInt) -> f64 {
        value.value()
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

fn factorial(n: i32) -> i128 {
    debug_assert!(n >= 0);
    (1..=n as i128).product()
}

/// Exact square of the Clebsch–Gordan coefficient together with its sign.
///
/// Returns `(sign, square)`; `square` is zero whenever selection rules fail.
pub fn clebsch_gordan_squared(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j: HalfInt,
    m: HalfInt,
) -> Result<(i32, Ratio<i128>)> {
    for (jj, mm) in [(j1, m1), (j2, m2), (j, m)] {
        if jj.0 < 0 || mm.0.abs() > jj.0 || (jj.0 - mm.0) % 2 != 0 {
            return Err(Error::InconsistentAngularMomenta {
                j: jj.value(),
                m: mm.value(),
            });
        }
    }
    let zero = Ratio::from_integer(0);
    if m1.0 + m2.0 != m.0 {
        return Ok((1, zero));
    }
    // Triangle rule (also catches integer/half-integer parity mismatch).
    if j.0 < (j1.0 - j2.0).abs() || j.0 > j1.0 + j2.0 || (j1.0 + j2.0 + j.0) % 2 != 0 {
        return Ok((1, zero));
    }

    // Integer arguments of the Racah formula, all in units of 1.
    let a = (j1.0 + j2.0 - j.0) / 2;
    let b = (j1.0 - j2.0 + j.0) / 2;
    let c = (-j1.0 + j2.0 + j.0) / 2;
    let d = (j1.0 + j2.0 + j.0) / 2 + 1;
    let prefactor = Ratio::new(
        (j.0 as i128 + 1) * factorial(a) * factorial(b) * factorial(c),
        factorial(d),
    );
    let p1 = (j1.0 + m1.0) / 2;
    let q1 = (j1.0 - m1.0) / 2;
    let p2 = (j2.0 + m2.0) / 2;
    let q2 = (j2.0 - m2.0) / 2;
    let p = (j.0 + m.0) / 2;
    let q = (j.0 - m.0) / 2;
    let radicand = prefactor
        * Ratio::from_integer(
            factorial(p1) * factorial(q1) * factorial(p2) * factorial(q2) * factorial(p) * factorial(q),
        );

    // Alternating sum over k with all factorial arguments nonnegative.
    let e = (j.0 - j2.0 + m1.0) / 2;
    let f = (j.0 - j1.0 - m2.0) / 2;
    let k_min = 0.max(-e).max(-f);
    let k_max = a.min(q1).min(p2);
    let mut sum: i128 = 0;
    let mut denominators = Vec::new();
    for k in k_min..=k_max {
        denominators.push((
            k,
            factorial(k) * factorial(a - k) * factorial(q1 - k) * factorial(p2 - k) * factorial(e + k) * factorial(f + k),
        ));
    }
    let lcm = denominators
        .iter()
        .fold(1i128, |acc, &(_, den)| num_integer_lcm(acc, den));
    for &(k, den) in &denominators {
        let term = lcm / den;
        sum += if k % 2 == 0 { term } else { -term };
    }
    let sum = Ratio::new(sum, lcm);
    let square = radicand * sum * sum;
    let sign = if sum < zero { -1 } else { 1 };
    Ok((sign, square))
}

fn num_integer_lcm(a: i128, b: i128) -> i128 {
    fn gcd(mut a: i128, mut b: i128) -> i128 {
        while b != 0 {
            let t = a % b;
            a = b;
            b = t;
        }
        a.abs()
    }
    a / gcd(a, b) * b
}

/// Clebsch–Gordan coefficient `<j1 m1, j2 m2 | j m>`.
pub fn clebsch_gordan(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j: HalfInt,
    m: HalfInt,
) -> Result<f64> {
    let (sign, square) = clebsch_gordan_squared(j1, m1, j2, m2, j, m)?;
    let value = (*square.numer() as f64 / *square.denom() as f64).sqrt();
    Ok(sign as f64 * value)
}
