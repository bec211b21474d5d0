use thiserror::Error;

/// Errors raised by the corridor design, analysis and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("mu is singular at z = {z} (|z| within {eps})")]
    MuSingularity { z: f64, eps: f64 },

    #[error("divided difference points {a} and {b} coincide within tolerance")]
    DegeneratePoints { a: f64, b: f64 },

    #[error("linear system is singular or ill-conditioned (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("rate constants {0} and {1} are not distinct")]
    NotDistinct(f64, f64),

    #[error("{value} is outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("dose target {target} is unreachable: nonlinearity spans [{lo}, {hi}] on the bracket")]
    UnreachableDose { target: f64, lo: f64, hi: f64 },

    #[error("no extremum of the periodic output found on (0, {period})")]
    NoExtrema { period: f64 },

    #[error("degenerate cycle: z_max - z_min = {width:e}")]
    DegenerateCycle { width: f64 },

    #[error("corridor unreachable on the period range: best ratio residual {residual:.4e} exceeds cap {cap}")]
    CorridorUnreachable { residual: f64, cap: f64 },

    #[error("design point saturates the {which} modulation ({value} against bounds [{lo}, {hi}])")]
    SaturatedDesignPoint {
        which: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("slope sign violates the monotonicity requirement: {0}")]
    SlopeSign(String),

    #[error("no stabilizing slopes on the search grid (best spectral radius {best_rho:.4})")]
    NoStabilizingSlopes { best_rho: f64 },

    #[error("simulation aborted at event {index}: {reason}")]
    SimulationAbort { index: usize, reason: String },

    #[error("internal numerical error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
