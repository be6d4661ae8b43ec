//! Error type shared across the crate.

/// Errors surfaced by constructors, validation and propagation.
///
/// Pure operator algebra (kron, commutators, partial traces) panics on
/// dimension mismatch instead: dimensions are validated once at construction
/// or config time, so a mismatch further in is a programming error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("state vector is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("wavepacket not normalized on the grid (|xi|^2 mass = {mass}, expected {expected})")]
    UnnormalizedPacket { mass: f64, expected: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("horizon truncation: w_{k}(t) < {floor:e} at t = {t}")]
    HorizonTruncated { k: usize, t: f64, floor: f64 },

    #[error("invariant violated at t = {t}: {what}")]
    InvariantViolation { t: f64, what: String },

    #[error("jump requested while intensity is below floor (nu = {nu:e}) at t = {t}")]
    EmptyField { nu: f64, t: f64 },

    #[error("measurement record does not match the configured grid: {0}")]
    RecordMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(
        "{failed} of {total} trajectories failed; first failure at index {index}: {message}"
    )]
    EnsembleFailures { failed: usize, total: usize, index: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
