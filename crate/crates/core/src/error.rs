use std::path::PathBuf;

use thiserror::Error;

/// Stage of the mask-alignment procedure at which a failure occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignStage {
    Keypoints,
    Similarity,
    Foreground,
    Center,
    Relocate,
}

impl std::fmt::Display for AlignStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AlignStage::Keypoints => "keypoint extraction",
            AlignStage::Similarity => "similarity matching",
            AlignStage::Foreground => "foreground extraction",
            AlignStage::Center => "center search",
            AlignStage::Relocate => "mask relocation",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("step index {step} out of range for a schedule of {steps} steps")]
    StepOutOfRange { step: usize, steps: usize },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("degenerate descriptor at keypoint ({x}, {y})")]
    DegenerateDescriptor { x: usize, y: usize },

    #[error("image has no texture to match against (constant intensity)")]
    FlatImage,

    #[error("alignment failed during {stage}: {source}")]
    Alignment {
        stage: AlignStage,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("not enough samples: {0}")]
    InsufficientSamples(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error ({path}): {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("image error ({path}): {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("I/O error ({path}): {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: AlignStage) -> Self {
        match self {
            e @ Error::Alignment { .. } => e,
            e => Error::Alignment {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Coarse category used for process exit codes.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::Architecture(_) => 3,
            Error::Dataset(_) | Error::Image { .. } | Error::Io { .. } => 4,
            Error::Checkpoint { .. } => 5,
            Error::InsufficientSamples(_) => 6,
            _ => 7,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
