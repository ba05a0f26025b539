//! Physical quantities written as `"<number> <unit>"` strings, stored in SI.

use std::f64::consts::PI;
use std::fmt;

use mqc_core::constants::ATOMIC_MASS_UNIT;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

/// Splits `"7.5 mm"` into the number and the unit text.
fn split(s: &str) -> Result<(f64, &str), String> {
    let s = s.trim();
    let end = s.find(char::is_whitespace).ok_or_else(|| format!("`{s}` has no unit"))?;
    let value: f64 = s[..end].parse().map_err(|_| format!("`{}` is not a number", &s[..end]))?;
    if !value.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok((value, s[end..].trim()))
}

macro_rules! quantity {
    ($(#[$doc:meta])* $name:ident, $si:literal, [$(($unit:literal, $conv:expr)),+ $(,)?]) => {
        $(#[$doc])*
        #[derive(Clone, Copy, Debug, PartialEq)]
        pub struct $name(pub f64);

        impl $name {
            pub const SI: &'static str = $si;
            pub const UNITS: &'static [&'static str] = &[$($unit),+];

            pub fn parse(s: &str) -> Result<Self, String> {
                let (v, unit) = split(s)?;
                let compact: String = unit.split_whitespace().collect::<Vec<_>>().join(" ");
                $(
                    if compact == $unit {
                        let f: fn(f64) -> f64 = $conv;
                        return Ok($name(f(v)));
                    }
                )+
                Err(format!("unknown unit `{unit}`; expected one of {:?}", Self::UNITS))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:e} {}", self.0, $si)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                $name::parse(&s).map_err(de::Error::custom)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }
    };
}

quantity!(Length, "m", [
    ("m", |v| v),
    ("cm", |v| v * 1e-2),
    ("mm", |v| v * 1e-3),
    ("um", |v| v * 1e-6),
    ("nm", |v| v * 1e-9),
    ("pm", |v| v * 1e-12),
]);

quantity!(Time, "s", [
    ("s", |v| v),
    ("ms", |v| v * 1e-3),
    ("us", |v| v * 1e-6),
    ("ns", |v| v * 1e-9),
    ("ps", |v| v * 1e-12),
    ("fs", |v| v * 1e-15),
]);

quantity!(
    /// Angular frequency. Hz-family units are cycle frequencies and get a factor 2 pi.
    AngularFrequency, "rad/s", [
    ("rad/s", |v| v),
    ("Hz", |v| 2.0 * PI * v),
    ("kHz", |v| 2.0 * PI * v * 1e3),
    ("MHz", |v| 2.0 * PI * v * 1e6),
    ("GHz", |v| 2.0 * PI * v * 1e9),
    ("THz", |v| 2.0 * PI * v * 1e12),
]);

quantity!(Intensity, "W/m^2", [
    ("W/m^2", |v| v),
    ("W/cm^2", |v| v * 1e4),
    ("kW/cm^2", |v| v * 1e7),
    ("MW/cm^2", |v| v * 1e10),
    ("GW/cm^2", |v| v * 1e13),
]);

quantity!(Density, "m^-3", [
    ("m^-3", |v| v),
    ("cm^-3", |v| v * 1e6),
]);

quantity!(Wavenumber, "1/m", [
    ("1/m", |v| v),
    ("m^-1", |v| v),
    ("1/cm", |v| v * 1e2),
    ("cm^-1", |v| v * 1e2),
]);

quantity!(SolidAngle, "sr", [("sr", |v| v)]);

quantity!(Velocity, "m/s", [
    ("m/s", |v| v),
    ("km/s", |v| v * 1e3),
]);

quantity!(Temperature, "K", [
    ("K", |v| v),
    ("C", |v| v + 273.15),
]);

quantity!(Dipole, "C m", [
    ("C m", |v| v),
    ("D", |v| v * 3.335_640_95e-30),
    ("e a0", |v| v * 8.478_353_6e-30),
]);

quantity!(Mass, "kg", [
    ("kg", |v| v),
    ("u", |v| v * ATOMIC_MASS_UNIT),
]);
