use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spatial dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("grid too coarse: spacing {h} does not resolve radius {r} (need h <= r/4)")]
    GridTooCoarse { h: f64, r: f64 },

    #[error("projection breakdown at cell {cell}: |v| = {norm:.3e}")]
    ProjectionBreakdown { cell: usize, norm: f64 },

    #[error("window exceeds recorded range: {0}")]
    RangeViolation(String),

    #[error("window rejected: masked fraction {0:.3} exceeds 0.05")]
    MaskedFraction(f64),

    #[error("window grid mismatch")]
    GridMismatch,

    #[error("invalid scales: need r1 > r2 > 0, got r1 = {r1}, r2 = {r2}")]
    BadScales { r1: f64, r2: f64 },

    #[error("unsupported analytic field: kind {kind} with m = {m}")]
    UnsupportedField { kind: String, m: usize },

    #[error("empty candidate dictionary for m = {m}, j = {j}")]
    EmptyDictionary { m: usize, j: usize },

    #[error("scale bit-vector parameter mismatch")]
    ParamMismatch,

    #[error("unresolvable scale {scale:.3e} on grid with spacing {h:.3e}")]
    UnresolvableScale { scale: f64, h: f64 },

    #[error("cone-splitting hypothesis violated: {0}")]
    ConeSplitHypothesis(String),

    #[error("quasistatic hypothesis violated: need s <= T - (2 gamma)^2, got s = {s}, T = {t}, gamma = {gamma}")]
    QuasistaticHypothesis { s: f64, t: f64, gamma: f64 },

    #[error("need at least 4 usable radii for a slope fit, got {0}")]
    TooFewRadii(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("shooting failed: {0}")]
    Shooting(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl Error {
    /// Process exit code per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::ProjectionBreakdown { .. } | Error::Shooting(_) => 3,
            Error::Invariant(_) => 4,
            _ => 2,
        }
    }
}
