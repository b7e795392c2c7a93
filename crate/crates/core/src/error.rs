use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The input matrix is numerically rank-deficient at the requested rank:
    /// sigma_r fell below 1e-12 * sigma_1.
    #[error("rank-deficient input: sigma_{rank} = {sigma_r:.3e} < {threshold:.3e}")]
    DegenerateRank {
        rank: usize,
        sigma_r: f64,
        threshold: f64,
    },

    /// The GL(r) alignment solver exited without certifying the first-order
    /// condition; the iterate likely left the basin where the optimal
    /// alignment exists.
    #[error(
        "GL(r) alignment diverged: balance residual {residual:.3e} > tol {tol:.3e} after {iters} iterations"
    )]
    AlignmentDiverged {
        residual: f64,
        tol: f64,
        iters: usize,
    },

    /// The loss was constructed without registering the truth, so the
    /// population gradient (and hence the noise gradient) is undefined.
    #[error("population gradient unavailable: loss built without truth registration")]
    PopulationUnavailable,

    #[error("invalid curvature bounds: beta = {beta} < alpha = {alpha}")]
    InvalidCurvature { alpha: f64, beta: f64 },

    /// A descent step produced a non-finite entry; the step size is too
    /// large for this instance.
    #[error("non-finite update at iteration {iter}")]
    NonFiniteUpdate { iter: usize },

    #[error("Hessian dimension {dim} exceeds dense eigen-decomposition limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    /// The trajectory has too few points above the plateau to fit a decay
    /// rate; the initialization was too close to the noise floor.
    #[error("insufficient decay window: {have} points above 3x floor, need {need}")]
    InsufficientDecay { have: usize, need: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
