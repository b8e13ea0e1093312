use thiserror::Error;

/// Config loading and validation failures. Every variant names the key at
/// fault where one exists.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("malformed config document: {0}")]
    Malformed(String),
    #[error("cannot tell model, hardware or scenario config apart")]
    UnknownKind,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{key}` must be a {expected}")]
    WrongType {
        key: &'static str,
        expected: &'static str,
    },
    #[error("field `{key}` must be strictly positive")]
    NonPositive { key: &'static str },
    #[error("field `{key}` out of range: {reason}")]
    OutOfRange { key: &'static str, reason: String },
    #[error(
        "layer counts disagree: num_dense_layers ({num_dense_layers}) + \
         num_moe_layers ({num_moe_layers}) != num_layers ({num_layers})"
    )]
    LayerMismatch {
        num_layers: u32,
        num_dense_layers: u32,
        num_moe_layers: u32,
    },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// The gap budget consumes the whole run-batch latency.
    #[error("no stage budget left: run-batch latency {run_batch_latency}s <= gap {t_gap}s")]
    NonPositiveBudget { run_batch_latency: f64, t_gap: f64 },
    /// No attention node survives discrete down-scaling.
    #[error("degenerate scaling: floor(sigma * n_a) = 0 for sigma={sigma}, n_a={n_a}")]
    DegenerateScale { sigma: f64, n_a: f64 },
    #[error("{mode} expects {expected} micro-batches, got {got}")]
    MicrobatchCount {
        mode: &'static str,
        expected: u32,
        got: u32,
    },
    #[error("invalid input `{name}`: {reason}")]
    InvalidInput { name: &'static str, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidInput {
        name,
        reason: reason.into(),
    }
}
