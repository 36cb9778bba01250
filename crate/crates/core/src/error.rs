use std::path::PathBuf;

/// Errors produced by the solvers, the transform machinery and the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure at iteration {iteration}: {context}")]
    Numerical { iteration: usize, context: String },

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("degenerate image {index}: {reason}")]
    DegenerateImage { index: usize, reason: String },

    #[error("ill-conditioned jacobian for image {image} (condition number {condition:.3e})")]
    IllConditionedJacobian { image: usize, condition: f64 },

    #[error("excessive motion: only {valid_fraction:.1}% of pixels are valid in every image")]
    ExcessiveMotion { valid_fraction: f64 },

    #[error("pixel {pixel} is valid in no column")]
    MaskedPixel { pixel: usize },

    #[error("invalid roi: {0}")]
    InvalidRoi(String),

    #[error("background roi has zero standard deviation")]
    DegenerateBackground,

    #[error("snr undefined for feature roi {roi}: mean {mean} is not positive")]
    UndefinedSnr { roi: usize, mean: f64 },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("dimension mismatch: {first} is {first_dims:?} but {second} is {second_dims:?}")]
    DimensionMismatch {
        first: String,
        first_dims: (usize, usize),
        second: String,
        second_dims: (usize, usize),
    },

    #[error("outer iteration {iteration}: {source}")]
    Outer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Io {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Tags the error with the pipeline stage it came from. Errors that
    /// already carry a stage keep it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
