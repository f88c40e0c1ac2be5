use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage an error was raised in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Detect,
    Normalize,
    Illumination,
    Features,
    FilterSelection,
    Subspace,
    Match,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::Detect => "eye detection",
            Stage::Normalize => "geometric normalization",
            Stage::Illumination => "illumination compensation",
            Stage::Features => "feature extraction",
            Stage::FilterSelection => "filter selection",
            Stage::Subspace => "subspace fit",
            Stage::Match => "matching",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image header: {0}")]
    CorruptHeader(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("duplicate manifest path: {0}")]
    DuplicatePath(PathBuf),
    #[error("eye coordinates swapped for {0}: eye_left.x must be < eye_right.x")]
    SwappedEyes(PathBuf),
    #[error("subject {0} has too few images (need at least 3)")]
    TooFewImages(String),

    #[error("template has zero variance")]
    DegenerateTemplate,
    #[error("template ({template_w}x{template_h}) does not fit image ({image_w}x{image_h})")]
    TemplateTooLarge {
        template_w: usize,
        template_h: usize,
        image_w: usize,
        image_h: usize,
    },
    #[error("eyes not found (best scores: left {left:.3}, right {right:.3}; threshold {threshold:.3})")]
    EyesNotFound { left: f64, right: f64, threshold: f64 },
    #[error("degenerate eye pair: {0}")]
    DegenerateEyes(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("filter bank kernels have unequal sizes")]
    UnequalKernelSizes,
    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),
    #[error("eigensolver failed to converge")]
    ConvergenceFailure,
    #[error("invalid selection criterion: {0}")]
    InvalidCriterion(String),
    #[error("requested {requested} components but only {available} are available")]
    RankDeficient { requested: usize, available: usize },

    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("target dimension {requested} exceeds the limit {limit}")]
    TargetDimTooLarge { requested: usize, limit: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("scatter computation needs at least two classes")]
    SingleClass,
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("within-class scatter is singular; use a positive ridge")]
    SingularScatter,
    #[error("LDA dimension {requested} exceeds c-1 = {max}")]
    RankExceeded { requested: usize, max: usize },

    #[error("gallery is empty")]
    EmptyGallery,
    #[error("unsupported model format version {0}")]
    VersionMismatch(u32),
    #[error("model checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("model serialization error: {0}")]
    Serialization(String),
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage} failed{}: {source}", .path.as_ref().map(|p| format!(" for {}", p.display())).unwrap_or_default())]
    Stage {
        stage: Stage,
        path: Option<PathBuf>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at(self, stage: Stage, path: Option<PathBuf>) -> Error {
        Error::Stage {
            stage,
            path,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
