use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: String,
        left: usize,
        right: usize,
    },

    #[error("dimension mismatch: model expects {expected} features, video `{video}` has {found}")]
    DimensionMismatch {
        video: String,
        expected: usize,
        found: usize,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("video `{video}`: label `{label}` is not in the class mapping")]
    UnknownLabel { video: String, label: String },

    #[error("video `{video}`: {features} feature rows but {labels} label lines")]
    FrameCountMismatch {
        video: String,
        features: usize,
        labels: usize,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("unknown video `{0}`")]
    UnknownVideo(String),

    #[error("video `{0}` has no ground-truth labels")]
    MissingGroundTruth(String),

    #[error("budget exceeded: {needed} labels needed, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("no outstanding request for video `{video}` frame {frame}")]
    UnknownRequest { video: String, frame: usize },

    #[error("frame {frame} of video `{video}` is already labeled")]
    DuplicateLabel { video: String, frame: usize },

    #[error("class id {class} is out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },

    #[error("no outstanding queries")]
    NoOutstandingQueries,

    #[error("annotation failed: {0}")]
    Annotation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
