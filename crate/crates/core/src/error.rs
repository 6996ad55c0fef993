use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("velocity must be positive, got {0}")]
    NonPositiveVelocity(f64),

    #[error("solver did not reach tolerance {tolerance:e} within {max_steps} steps (last estimate {estimate:e})")]
    NonConvergence {
        tolerance: f64,
        max_steps: usize,
        estimate: f64,
    },

    #[error("step {step} um is too coarse for wavenumber {wavenumber} um^-1")]
    StepTooCoarse { step: f64, wavenumber: f64 },

    #[error("both profiles vanish at x = {0}: asymptotic region")]
    AsymptoticRegion(f64),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("wave packet is clipped by the grid (edge/peak ratio {0:e})")]
    PacketClipped(f64),

    #[error("time step {dt} us violates the stability bound (phase {phase} rad per substep)")]
    StabilityBound { dt: f64, phase: f64 },

    #[error("quantum jump requested from an empty excited channel")]
    EmptyExcitedChannel,

    #[error("resource bound exceeded: {0}")]
    ResourceBound(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
