use thiserror::Error;

/// Errors raised across the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AfdmError {
    #[error("N = {n} is below the diversity bound (l_max+1)(2 alpha_max+1) = {bound}")]
    FrameTooSmall { n: usize, bound: usize },
    #[error("c2 = {c2} must lie in (0, 1/(2N)) = (0, {limit})")]
    InvalidC2 { c2: f64, limit: f64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dense size guard exceeded: {size} > {limit}")]
    SizeGuard { size: usize, limit: usize },
    #[error("delay {delay} outside [0, {l_max}]")]
    DelayOutOfRange { delay: usize, l_max: usize },
    #[error("Doppler {doppler} outside [-{limit}, {limit}]")]
    DopplerOutOfRange { doppler: f64, limit: f64 },
    #[error("antenna index out of range: {0}")]
    AntennaIndex(String),
    #[error("frame overflow: first data slot {m_d} >= N = {n}")]
    FrameOverflow { m_d: usize, n: usize },
    #[error("coordinate ({m}, {m_prime}) lies outside the channel band")]
    OutsideBand { m: usize, m_prime: usize },
    #[error("fractional Doppler {0} not allowed here")]
    FractionalDoppler(f64),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("ML search space {size} exceeds the {limit}-candidate guard")]
    SearchSpace { size: f64, limit: f64 },
    #[error("not enough points with non-zero BER in window: {0}")]
    InsufficientPoints(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, AfdmError>;
