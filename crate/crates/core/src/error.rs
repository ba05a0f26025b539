use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not a half-integer")]
    InvalidQuantumNumber(f64),
    #[error("inconsistent angular momentum pair j = {j}, m = {m}")]
    InconsistentAngularMomenta { j: f64, m: f64 },
    #[error("invalid species: {0}")]
    InvalidSpecies(String),
    #[error("manifold {index} is not an excited manifold")]
    NotExcited { index: usize },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("quadrature order too low: {0}")]
    QuadratureOrder(String),
    #[error("invalid solid angle {0} sr")]
    InvalidSolidAngle(f64),
    #[error("atom index {index} out of range for {atoms} atoms")]
    UnknownAtom { index: usize, atoms: usize },
    #[error("a pair needs two distinct atoms, got {0} twice")]
    SameAtomPair(usize),
    #[error("unsupported atom count {0} (1..=3 supported)")]
    AtomCount(usize),
    #[error("unsupported perturbative order {0} (0, 2 or 4)")]
    UnsupportedOrder(usize),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("internal grading violation: {0}")]
    Grading(String),
    #[error("demodulation harmonic {0} not supported (1 or 2)")]
    Harmonic(i32),
    #[error("non-finite argument")]
    NonFinite,
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("unknown species `{0}`")]
    UnknownSpecies(String),
    #[error("mismatched runs: {0}")]
    MismatchedRuns(String),
    #[error("integrator failed: {0}")]
    Integrator(String),
    #[error("aliasing: {0}")]
    Aliasing(String),
    #[error("degenerate sampler: {0}")]
    DegenerateSampler(String),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
