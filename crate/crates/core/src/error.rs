use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("gradient at operator singularity")]
    SingularGradient,
    #[error("perturbation exceeds cell (eta = {eta}, period = {period})")]
    PerturbationExceedsCell { eta: f64, period: f64 },
    #[error("no dynamics")]
    NoDynamics,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrector iteration diverged (lambda = {lambda}, tau = {tau}, residual = {residual})")]
    CorrectorDiverged { lambda: f64, tau: f64, residual: f64 },
    #[error("corrector not converged (residual {residual:e} > tol {tol:e})")]
    NotConverged { residual: f64, tol: f64 },
    #[error("effective table is partial: direction {theta} is not covered")]
    UncoveredDirection { theta: f64 },
    #[error("grid too coarse for eps: h = {h} > {limit}")]
    GridTooCoarse { h: f64, limit: f64 },
    #[error("CFL precondition violated: {0}")]
    Cfl(String),
    #[error("buffer too thin: {width} < required {required}")]
    BufferTooThin { width: f64, required: f64 },
    #[error("outside closed-form regime: r = {r} <= t + 3h = {limit}")]
    OutsideClosedForm { r: f64, limit: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("linear solver failed: {0}")]
    LinearSolver(String),
    #[error("sweep aborted at eps = {eps}: {source}")]
    SweepAborted { eps: f64, source: Box<GeomError> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GeomError>;

impl GeomError {
    /// Numerical non-convergence, as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        match self {
            GeomError::NotConverged { .. } | GeomError::CorrectorDiverged { .. } | GeomError::LinearSolver(_) => true,
            GeomError::SweepAborted { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
