use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid poll: {0}")]
    InvalidPoll(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("logit undefined for vote share {0} (must lie strictly inside (0, 1))")]
    Domain(f64),

    #[error("degenerate likelihood: poll {poll} has zero total variance")]
    DegenerateLikelihood { poll: usize },

    #[error("parameter state does not match model and data: {0}")]
    InconsistentParams(String),

    #[error("dataset has no polls inside the analysis window")]
    EmptyDataset,

    #[error("target density is not finite at the initial state (chain {chain}): {detail}")]
    Initialization { chain: usize, detail: String },

    #[error("sampler stalled in chain {chain}: {param} accepted no proposals during warmup (final scale {scale:e})")]
    SamplerStalled {
        chain: usize,
        param: String,
        scale: f64,
    },

    #[error("filter failure in contest {contest}: {detail}")]
    Filter { contest: String, detail: String },

    #[error("degenerate posterior: {0}")]
    Degenerate(String),

    #[error("matrix is not positive definite after jitter (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("missing election results for: {}", format_pairs(.0))]
    MissingResults(Vec<(String, i32)>),

    #[error("missing required columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),

    #[error("column mapping error: {0}")]
    Mapping(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_pairs(pairs: &[(String, i32)]) -> String {
    pairs
        .iter()
        .map(|(s, y)| format!("{s} {y}"))
        .collect::<Vec<_>>()
        .join(", ")
}
