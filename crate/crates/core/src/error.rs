use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point lies behind camera (depth {depth})")]
    PointBehindCamera { depth: f64 },

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("no visible point found after {attempts} consecutive rejections")]
    VisibilityExhausted { attempts: u64 },

    #[error("at least 6 correspondences required, got {0}")]
    InsufficientPoints(usize),

    #[error("degenerate point configuration (singular value ratio {ratio:e})")]
    DegenerateConfiguration { ratio: f64 },

    #[error("feature {feature} has no 3D measurement{}", camera.map(|c| format!(" in camera {c}")).unwrap_or_default())]
    MissingCorrespondence { feature: u32, camera: Option<u32> },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("analytic and numeric jacobians disagree at ({row}, {col}): {analytic} vs {numeric}")]
    JacobianMismatch {
        row: usize,
        col: usize,
        analytic: f64,
        numeric: f64,
    },

    #[error("normal equations could not be factorized")]
    SingularSystem,

    #[error("non-finite cost encountered")]
    NonFiniteCost,

    #[error("no 3D correspondences available")]
    NoCorrespondences,

    #[error("no 2D observations available")]
    NoObservations,

    #[error("camera {0} is the gauge camera; its translation is zero")]
    GaugeCamera(u32),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{0}")]
    Format(String),
}
