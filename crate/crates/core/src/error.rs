use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped by the pipeline stage that raises them. Numeric
/// payloads carry the offending location or margin so that callers (and the
/// CLI's structured error output) can say exactly what went wrong.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid weight function `{label}`: {reason}")]
    InvalidWeight { label: String, reason: String },
    #[error("quadrature failed to converge on [{lo}, {hi}] (estimate {estimate}, error {error})")]
    QuadratureDivergence {
        lo: f64,
        hi: f64,
        estimate: f64,
        error: f64,
    },
    #[error("moment divergence: {0}")]
    MomentDivergence(String),

    #[error("flow table cannot be extended to x = {requested} (limit {limit})")]
    RangeExtensionFailure { requested: f64, limit: f64 },

    #[error("criterion `{criterion}` violated{} (margin {margin})", at.map(|v| format!(" at {v}")).unwrap_or_default())]
    CriterionViolated {
        criterion: String,
        at: Option<f64>,
        margin: f64,
    },
    #[error("no entrance boundary: s(0+) diverges")]
    EntranceBoundaryAbsent,
    #[error("A h / h appears unbounded above (increasing over the last decade of probes, last value {last})")]
    UnboundedAbove { last: f64 },

    #[error("thinning majorant {majorant} exceeds the overflow guard")]
    MajorantOverflow { majorant: f64 },
    #[error("rejection sampler stalled at x = {x} after {proposals} proposals")]
    RejectionStall { x: f64, proposals: u64 },
    #[error("explosion guard: {0}")]
    ExplosionGuard(String),
    #[error("negative killing rate q({x}) = {q}; b is not an upper bound of A h / h")]
    KillingRateNegative { x: f64, q: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no admissible time step: CFL bound {dt} is below 1e-12")]
    CflUnsatisfiable { dt: f64 },
    #[error("time step {dt} violates the CFL bound {bound}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("negative mass {mass} in cell {cell}")]
    NegativeMass { cell: usize, mass: f64 },

    #[error("operator is reducible: sparsity graph is not strongly connected")]
    Reducible,
    #[error("power iteration did not converge after {iterations} iterations (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("lambda0 = {lambda0} exceeds the bound lambda2 = {lambda2} beyond tolerance {tolerance}")]
    BoundViolated {
        lambda0: f64,
        lambda2: f64,
        tolerance: f64,
    },
    #[error("fitted decay slope {slope} is not negative: no spectral gap visible")]
    RatePositive { slope: f64, r_squared: f64 },
    #[error("not enough checkpoints after burn-in: {available} < {required}")]
    TooFewCheckpoints { available: usize, required: usize },

    #[error("eta estimate inconsistent between probe times: drift {drift}")]
    InconsistentEta { drift: f64 },
    #[error("particle system went extinct")]
    Extinction,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short machine-readable name, used as the `error` key of CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DomainError",
            Error::InvalidModel(_) => "InvalidModel",
            Error::InvalidKernel(_) => "InvalidKernel",
            Error::InvalidWeight { .. } => "InvalidWeight",
            Error::QuadratureDivergence { .. } => "QuadratureDivergence",
            Error::MomentDivergence(_) => "MomentDivergence",
            Error::RangeExtensionFailure { .. } => "RangeExtensionFailure",
            Error::CriterionViolated { .. } => "CriterionViolated",
            Error::EntranceBoundaryAbsent => "EntranceBoundaryAbsent",
            Error::UnboundedAbove { .. } => "UnboundedAbove",
            Error::MajorantOverflow { .. } => "MajorantOverflow",
            Error::RejectionStall { .. } => "RejectionStall",
            Error::ExplosionGuard(_) => "ExplosionGuard",
            Error::KillingRateNegative { .. } => "KillingRateNegative",
            Error::Unsupported(_) => "Unsupported",
            Error::CflUnsatisfiable { .. } => "CFLUnsatisfiable",
            Error::CflViolation { .. } => "CFLViolation",
            Error::NegativeMass { .. } => "NegativeMass",
            Error::Reducible => "Reducible",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::BoundViolated { .. } => "BoundViolated",
            Error::RatePositive { .. } => "RatePositive",
            Error::TooFewCheckpoints { .. } => "TooFewCheckpoints",
            Error::InconsistentEta { .. } => "InconsistentEta",
            Error::Extinction => "Extinction",
        }
    }
}
