use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("item {item_id}: missing annotation file {}", path.display())]
    MissingAnnotation { item_id: String, path: PathBuf },

    #[error("item {item_id}: parse label {value} out of range (must be < 18)")]
    InvalidParse { item_id: String, value: u8 },

    #[error("dense-pose label {value} out of range (must be < 25)")]
    InvalidDensePose { value: u8 },

    #[error("label {value} out of range (must be < {classes})")]
    LabelOutOfRange { value: u32, classes: usize },

    #[error("malformed dataset: {0}")]
    Layout(String),

    #[error("singular thin-plate-spline system (theta = {theta:?})")]
    SingularSystem { theta: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[cfg(feature = "nn")]
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 2,
            Error::MissingAnnotation { .. }
            | Error::InvalidParse { .. }
            | Error::InvalidDensePose { .. }
            | Error::LabelOutOfRange { .. }
            | Error::Layout(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Json(_)
            | Error::MissingCheckpoint(_) => 3,
            Error::SingularSystem { .. } | Error::Numerical(_) => 4,
            Error::Shape(_) => 1,
            #[cfg(feature = "nn")]
            Error::Tensor(_) => 1,
        }
    }
}
