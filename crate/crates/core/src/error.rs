use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("gradient root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite function value at coordinate {coordinate} (input {input})")]
    NonFinite { input: usize, coordinate: usize },

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("unknown scene '{name}' (valid: {valid})")]
    UnknownScene { name: String, valid: String },

    #[error("{file}: {field}: {message}")]
    Dataset {
        file: PathBuf,
        field: String,
        message: String,
    },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("density control removed every Gaussian (pruned {pruned} of {total})")]
    EmptyScene { pruned: usize, total: usize },

    #[error("mesh has no triangles; cannot sample surface points")]
    EmptyMesh,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::NonScalarRoot(_) => "non_scalar_root",
            Self::ShapeMismatch { .. } => "shape_mismatch",
            Self::NonFinite { .. } => "non_finite",
            Self::NonFiniteLoss { .. } => "non_finite_loss",
            Self::UnknownScene { .. } => "unknown_scene",
            Self::Dataset { .. } => "dataset",
            Self::Checkpoint { .. } => "checkpoint",
            Self::Config(_) => "config",
            Self::EmptyScene { .. } => "empty_scene",
            Self::EmptyMesh => "empty_mesh",
            Self::Io(_) => "io",
            Self::Json(_) => "json",
            Self::Toml(_) => "toml",
            Self::Image(_) => "image",
        }
    }
}
