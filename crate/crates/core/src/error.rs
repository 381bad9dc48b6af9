use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("slot length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{op}: depth budget exceeded (needs {required}, budget {budget})")]
    DepthBudget {
        op: &'static str,
        required: u32,
        budget: u32,
    },

    #[error("{count} values do not fit in {slot_count} slots")]
    TooManyValues { count: usize, slot_count: usize },

    #[error("chebyshev input {value} at slot {slot} is outside [-1, 1]")]
    Domain { slot: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range for block dimension {block_dim}")]
    IndexOutOfRange { index: usize, block_dim: usize },

    #[error("layout: {0}")]
    Layout(String),

    #[error("privacy parameters: {0}")]
    Privacy(String),

    #[error("data: {0}")]
    Data(String),

    #[error("round {round}: {source}")]
    Round { round: u32, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_round(self, round: u32) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}
