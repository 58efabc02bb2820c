use thiserror::Error;

/// Errors raised across the hierarchy solver, sampler and front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("state space of {entries} entries exceeds cap of {cap}")]
    StateSpaceTooLarge { entries: usize, cap: usize },

    #[error("invalid transport specification: {0}")]
    InvalidTransport(String),

    #[error("operator requires a velocity grid")]
    MissingVelocityGrid,

    #[error("operator is not defined on a velocity grid; use the Klein-Kramers generator")]
    UnexpectedVelocityGrid,

    #[error("invalid reaction: {0}")]
    InvalidReaction(String),

    #[error("invalid exchange model: {0}")]
    InvalidExchange(String),

    #[error("no open face on the domain boundary")]
    NoOpenFace,

    #[error("time step {dt} exceeds stability bound {bound}")]
    StabilityBound { dt: f64, bound: f64 },

    #[error("non-finite value detected at t = {time}")]
    NonFinite { time: f64 },

    #[error("level {level} is not permutation symmetric (defect {defect:e})")]
    NotSymmetric { level: usize, defect: f64 },

    #[error("stationary problem has a non-unique null space (pivot ratio {pivot_ratio:e})")]
    NonUniqueNullSpace { pivot_ratio: f64 },

    #[error("particle {id} left the domain at {position:?}")]
    ParticleEscaped { id: u64, position: [f64; 3] },

    #[error("reduction requires well-mixed rates: {0}")]
    NotWellMixed(String),

    #[error("matrix exponential overflow: {0}")]
    Overflow(String),

    #[error("config error in [{section}] key `{key}`: {reason}")]
    Config {
        section: String,
        key: String,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
