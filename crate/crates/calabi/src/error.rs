use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed polytope spec: {0}")]
    MalformedSpec(String),

    #[error("facet {facet} normal is not primitive (gcd {gcd})")]
    NonPrimitiveNormal { facet: usize, gcd: i64 },

    #[error("polytope is unbounded")]
    Unbounded,

    #[error("polytope has empty interior")]
    EmptyInterior,

    #[error("quadrature grid is empty (h or delta too large)")]
    GridEmpty,

    #[error("grid too coarse: need at least {need} points per axis, got {got}")]
    GridTooCoarse { need: usize, got: usize },

    #[error("point {0:?} is outside the margin region")]
    OutsideMargin(Vec<f64>),

    #[error("point {0:?} is not strictly interior")]
    NotInterior(Vec<f64>),

    #[error("Hessian not positive definite at {0:?}")]
    NotPositiveDefinite(Vec<f64>),

    #[error("Newton iteration for the Legendre inverse did not converge")]
    NewtonDidNotConverge,

    #[error("target gradient lies outside the attainable image on the margin region")]
    OutsideGradientImage,

    #[error("time step underflow (stiffness failure) at dt = {dt}")]
    StepUnderflow { dt: f64 },

    #[error("geodesic step size underflow near the boundary")]
    GeodesicStepUnderflow,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("identical points p = q")]
    CoincidentPoints,

    #[error("lemma hypotheses unsatisfiable: {0}")]
    HypothesisUnsatisfiable(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("unknown lemma id: {0}")]
    UnknownLemma(String),

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("singular linear system")]
    SingularSystem,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
