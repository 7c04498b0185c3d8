use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value for `{0}`")]
    NonFinite(&'static str),

    #[error("invalid task {id}: {reason}")]
    InvalidTask { id: u64, reason: String },

    #[error("operation spec needs at least one parameter")]
    EmptyParams,

    #[error("unknown operation type `{0}`")]
    UnknownOpType(String),

    #[error("position {position} out of range (queue admits 0..={max})")]
    PositionOutOfRange { position: usize, max: usize },

    #[error("existing task index {index} out of range for batch of {len}")]
    ExistingOutOfRange { index: usize, len: usize },

    #[error("duplicate task id {0}")]
    DuplicateTask(u64),

    #[error("task {id} arrives at {arrival} but the engine clock is at {now}")]
    ClockMismatch { id: u64, arrival: f64, now: f64 },

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("trace line {line}, column {column} (`{field}`): {message}")]
    TraceParse {
        line: usize,
        column: usize,
        field: &'static str,
        message: String,
    },

    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
