use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point {point:?} lies outside the domain of chart `{chart}`")]
    OutOfDomain { chart: String, point: Vec<f64> },
    #[error("metric of chart `{chart}` is not positive definite at {point:?} (min eigenvalue {min_eig:e})")]
    SingularMetric {
        chart: String,
        point: Vec<f64>,
        min_eig: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("tangent vectors are attached to different base points")]
    BasePointMismatch,
    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),
    #[error("frame is not orthonormal (defect {0:e})")]
    NotOrthonormal(f64),
    #[error("unknown catalog entry `{0}`")]
    UnknownCatalog(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("curve is not horizontal (residual {0:e})")]
    NotHorizontal(f64),
    #[error("chart mismatch: {0}")]
    ChartMismatch(String),
    #[error("curvature difference vanishes (|kappa - kappa_hat| = {0:e})")]
    RhoSingular(f64),
    #[error("integration stopped at t = {t}: {reason}")]
    ChartExit { t: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, GeomError>;
