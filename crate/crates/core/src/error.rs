use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (deviation {deviation:e})")]
    NotSkew { deviation: f64 },

    #[error("matrix is not symmetric (deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },

    #[error("matrix is not a rotation (orthogonality error {orthogonality:e}, det {det})")]
    NotRotation { orthogonality: f64, det: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inertia pair J, J_d is inconsistent (deviation {deviation:e})")]
    InconsistentInertia { deviation: f64 },

    #[error("inertia matrix is singular or not positive definite")]
    SingularInertia,

    #[error("gradient undefined at a CSG tie point")]
    GradientUndefined,

    #[error("shape is unbounded")]
    UnboundedShape,

    #[error("composite centroid {offset:?} is off the origin (tolerance {tolerance:e})")]
    OffOriginCentroid { offset: [f64; 3], tolerance: f64 },

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("Newton solver did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonNonConvergence { iterations: usize, residual: f64 },

    #[error("rotation solver precondition violated: {0}")]
    SolverPrecondition(String),

    #[error("grazing contact: impulse multiplier {lambda:e} is below threshold")]
    Grazing { lambda: f64 },

    #[error("contact is separating (normal rate {rate:e}); no impulse applies")]
    Separating { rate: f64 },

    #[error("bisection exhausted {iterations} iterations (phi {phi:e})")]
    BisectionExhausted { iterations: usize, phi: f64 },

    #[error("impact is not bracketed: phi(start) = {start:e}, phi(end) = {end:e}")]
    NoBracket { start: f64, end: f64 },

    #[error("initial state is inadmissible (phi = {phi:e})")]
    Inadmissible { phi: f64 },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("malformed trajectory file: {0}")]
    Trajectory(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
