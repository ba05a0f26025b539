//! Simulation of one- and two-quantum coherence fluorescence spectra of dilute
//! thermal alkali vapours coupled by the retarded dipole-dipole interaction.
//!
//! The crate is organised bottom-up:
//!
//! * [`angular`], [`species`]: level schemes and dipole operators;
//! * [`kernel`]: the interaction tensor and orientation averages;
//! * [`liouville`]: pulses, decay, coupling and detection generators;
//! * [`engine`]: phase-tagged propagation and the perturbative detection integral;
//! * [`spectra`]: demodulation, Doppler averaging and bulk rescaling;
//! * [`estimators`]: vapour-cell estimates (pulse area, collision rates, ...);
//! * [`oracle`]: brute-force lock-in simulation used to validate the engine.

pub mod angular;
pub mod constants;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod faddeeva;
pub mod kernel;
pub mod liouville;
pub mod operator;
pub mod oracle;
pub mod quadrature;
pub mod species;
pub mod spectra;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
