use thiserror::Error;

use crate::dynamics::{EventKind, FlowState};

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("disc radius must satisfy 1/2 < rho < 1/sqrt(2), got rho = {rho}")]
    RhoOutOfRange { rho: f64 },

    #[error("penetration length must satisfy 0 < delta < (1 - lambda)/2 = {max}, got delta = {delta}")]
    DeltaOutOfRange { delta: f64, max: f64 },

    #[error("piston energy must satisfy 0 < ep < 1/2, got ep = {ep}")]
    PistonEnergyOutOfRange { ep: f64 },

    #[error("invalid energy pair (eb = {eb}, ep = {ep}): energies must be nonnegative with a positive sum")]
    InvalidEnergyPair { eb: f64, ep: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no positive event time from state {state:?}")]
    NoEvent { state: FlowState },

    #[error("ambiguous corner hit from state {state:?}: {first:?} at {t_first} and {second:?} at {t_second}")]
    CornerAmbiguity {
        state: FlowState,
        first: EventKind,
        t_first: f64,
        second: EventKind,
        t_second: f64,
    },

    #[error("event rate cap exceeded: {events} events within flight time {window} ending at state {state:?}")]
    EventRateCap {
        events: u64,
        window: f64,
        state: FlowState,
    },

    #[error("state is not on the {kind:?} surface (residual {residual:e})")]
    NotOnSurface { kind: EventKind, residual: f64 },

    #[error("trajectory exceeded {max_events} events without a ball-piston collision")]
    TrajectoryTimeout { max_events: u64 },

    #[error("rejection sampler acceptance {acceptance:e} is below 1e-4")]
    DegenerateConfiguration { acceptance: f64 },

    #[error("quadrature did not converge: estimate {value}, error {error:e} after {intervals} intervals")]
    QuadratureNonConvergence {
        value: f64,
        error: f64,
        intervals: usize,
    },

    #[error("jump rate underflow at eb = {eb}, ep = {ep}")]
    RateUnderflow { eb: f64, ep: f64 },

    #[error("time step {dt} violates the stability bound dt * max rate < 1/2 (max rate {max_rate})")]
    StabilityBound { dt: f64, max_rate: f64 },

    #[error("insufficient events: need at least {needed} of kind {kind}, found {found}")]
    InsufficientEvents {
        kind: &'static str,
        needed: u64,
        found: u64,
    },

    #[error("reference density is not positive ({value}) on populated bin [{left}, {right}] of branch {sigma}")]
    NonPositiveReference {
        sigma: i8,
        left: f64,
        right: f64,
        value: f64,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// A parameter lies outside its mathematical domain.
    Domain,
    /// A numerical procedure failed at run time.
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::RhoOutOfRange { .. }
            | Error::DeltaOutOfRange { .. }
            | Error::PistonEnergyOutOfRange { .. }
            | Error::InvalidEnergyPair { .. }
            | Error::InvalidArgument(_)
            | Error::InsufficientEvents { .. }
            | Error::StabilityBound { .. } => ErrorCategory::Domain,
            _ => ErrorCategory::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
