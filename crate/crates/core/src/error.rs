use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("masked_softmax: row {row} has no unmasked entry")]
    DegenerateMask { row: usize },

    #[error("backward already ran on this graph; run a new forward pass first")]
    AlreadyBackpropagated,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    InputLength { needed: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("vote resolution reached stage {stage} but the {vote} vote is missing")]
    MissingVote { stage: u8, vote: &'static str },

    #[error("insufficient samples for {category}: requested {requested}, available {available}")]
    InsufficientSamples {
        category: String,
        requested: usize,
        available: usize,
    },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for failures caused by bad configuration or inputs rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidArgument { .. }
                | Error::Shape { .. }
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Empty(_)
                | Error::MissingVote { .. }
                | Error::InsufficientSamples { .. }
                | Error::InputLength { .. }
                | Error::Format(_)
                | Error::Io(_)
                | Error::Wav(_)
        )
    }
}
