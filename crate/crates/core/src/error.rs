use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model has zero total FLOP, cannot calibrate a device against it")]
    DegenerateModel,

    #[error("policy has {got} entries but the model has {expected} layers")]
    LengthMismatch { expected: usize, got: usize },

    #[error("exhaustive search over {layers} layers exceeds the limit of {limit}")]
    OracleTooLarge { layers: usize, limit: usize },

    #[error("DP table of {cells} cells exceeds the limit of {limit}")]
    TableTooLarge { cells: u128, limit: u128 },

    #[error("request {request} (demand {demand}) can never be admitted with capacity {capacity}")]
    HeadOfLineBlocked {
        request: usize,
        demand: f64,
        capacity: f64,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
