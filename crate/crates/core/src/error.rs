use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("non-finite loss term `{term}`")]
    NonFiniteLoss { term: String },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("value {value} outside domain [{lo}, {hi}] for {what}")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("reference solver became unstable at step {step} (t = {time} s)")]
    Unstable { step: usize, time: f64 },

    #[error("segment {segment} diverged: {source}")]
    SegmentDiverged {
        segment: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("task {task} in segment {segment} diverged: {source}")]
    TaskDiverged {
        segment: usize,
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_segment(self, segment: usize) -> Self {
        Error::SegmentDiverged {
            segment,
            source: Box::new(self),
        }
    }

    pub fn in_task(self, segment: usize, task: usize) -> Self {
        Error::TaskDiverged {
            segment,
            task,
            source: Box::new(self),
        }
    }
}
