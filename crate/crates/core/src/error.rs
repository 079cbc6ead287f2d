use thiserror::Error;

/// Errors raised by the numerical machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kick law: {0}")]
    InvalidLaw(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kick density undefined: b[{0}] = 0 on a resolved coordinate")]
    DensityUndefined(usize),

    #[error("non-finite state: {0}")]
    NonFinite(String),

    #[error("state blow-up{}: |coeff| = {value:e}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    BlowUp { step: Option<usize>, value: f64 },

    #[error("partition misses the image of cell {0} (empty kernel row)")]
    EmptyRow(usize),

    #[error("power iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("eigenfunction not positive at cell {0}")]
    NonPositive(usize),

    #[error("kernel not uniformly irreducible up to power {0}")]
    NotIrreducible(usize),

    #[error("window overflow: need {needed} states, trajectory has {len}")]
    WindowOverflow { needed: usize, len: usize },

    #[error("measures live in different spaces: {0}")]
    SpaceMismatch(String),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("theta grid too narrow: maximiser on the boundary at every level")]
    ThetaRange,

    #[error("degenerate Monte Carlo variance: all batches identical")]
    DegenerateVariance,

    #[error("no decaying range found in the mixing profile")]
    NoDecay,

    #[error("marginal inconsistency between levels {lower} and {upper}: gap {gap:e}")]
    MarginalInconsistency { lower: usize, upper: usize, gap: f64 },

    #[error("aggregated rates not monotone in m at level {level}")]
    NotMonotone { level: usize },

    #[error("squeezing factor {gamma} exceeds 1/2 for N = {n}: needs larger N")]
    NeedsLargerN { n: usize, gamma: f64 },

    #[error("history window leaves the box: {0}")]
    OutOfBox(String),

    #[error("inconsistent reduction input: {0}")]
    Inconsistent(String),

    #[error("certificate failure: {lhs} vs {rhs}")]
    Certificate { lhs: f64, rhs: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
