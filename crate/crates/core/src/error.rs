//! Error type shared across the toolkit.

use thiserror::Error;

/// Everything that can go wrong while building graphs, simulating
/// environments, fitting models, or running experiments.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Backward pass requested from a non-scalar node.
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    /// An optimizer step was taken before gradients were populated.
    #[error("parameter `{name}` has no gradient; run backward first")]
    MissingGradient { name: String },

    /// A graph handle referred to a node from a different graph.
    #[error("invalid node handle {index} (graph has {len} nodes)")]
    InvalidHandle { index: usize, len: usize },

    /// Unknown environment name passed to the registry.
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    /// Bad construction arguments (tree depth, probability tables, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An action outside `0..action_count`.
    #[error("action {action} out of range for {action_count} actions")]
    InvalidAction { action: usize, action_count: usize },

    /// Stepping an episode that has already terminated.
    #[error("cannot step a terminal state (t = {t})")]
    TerminalStep { t: usize },

    /// Behavior policy puts zero probability on an action the target
    /// policy can take, so importance weights are undefined.
    #[error("support violation: behavior probability is 0 where the evaluated policy acts ({detail})")]
    SupportViolation { detail: String },

    /// Policy training finished without reaching the requested return.
    #[error("policy training missed the return threshold {threshold}: achieved {achieved}")]
    ThresholdNotReached { threshold: f64, achieved: f64 },

    /// Model training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    /// Serialized artifact could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Serialized artifact has an unsupported schema version.
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("enumeration size {size} exceeds cap {cap}")]
    EnumerationTooLarge { size: u128, cap: u128 },

    /// An estimator was asked for something its inputs cannot provide.
    #[error("estimator `{name}` failed: {detail}")]
    Estimator { name: String, detail: String },

    /// Unknown estimator or model name in a configuration.
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    /// Dataset operations on malformed or empty inputs.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
