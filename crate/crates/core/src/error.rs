use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("matrix is not symmetric (max deviation {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("`{name}` out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),
    #[error("row {0} is not unit norm")]
    NotUnitNorm(usize),
    #[error("singular value {index} is zero; direction cannot be projected")]
    ZeroSingularValue { index: usize },
    #[error("time {t} below minimum {t_min}")]
    TimeBelowMinimum { t: f64, t_min: f64 },
    #[error("vanishing denominator in score conversion at t = {0}")]
    VanishingDenominator(f64),
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("modes overlap: minimum separation {min_distance} <= {required}")]
    OverlappingModes { min_distance: f64, required: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
}
