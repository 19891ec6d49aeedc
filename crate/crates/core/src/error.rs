use thiserror::Error;

/// Errors raised anywhere in the pretraining stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op} expects a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("layer_norm needs at least 2 features per vector, got {0}")]
    DegenerateNorm(usize),
    #[error("layer_norm eps must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("cross entropy needs at least one active position")]
    NoActivePositions,
    #[error("label {label} at position {position} is outside vocabulary of size {vocab}")]
    LabelOutOfRange {
        position: usize,
        label: usize,
        vocab: usize,
    },
    #[error("graph was already back-propagated; build a fresh graph per forward pass")]
    GraphConsumed,
    #[error("invalid parameter name {0:?}")]
    InvalidParamName(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("objective is not deterministic: {first} then {second} at identical parameters")]
    NonDeterministic { first: f64, second: f64 },
    #[error("finite difference step must be positive, got {0}")]
    InvalidStep(f64),

    #[error("token id {id} at position {position} is outside vocabulary of size {vocab}")]
    TokenOutOfRange {
        position: usize,
        id: usize,
        vocab: usize,
    },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("every attention key is blocked in sequence {sequence}")]
    AllKeysBlocked { sequence: usize },

    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sequence has no maskable tokens")]
    NoMaskableTokens,
    #[error("corpus has {lines} usable lines, fewer than one batch of {batch}")]
    CorpusTooSmall { lines: usize, batch: usize },
    #[error("invalid masking policy: {0}")]
    InvalidPolicy(String),
    #[error("seq_len must be at least 3, got {0}")]
    SeqLenTooShort(usize),

    #[error("invalid unmasking schedule: {0}")]
    InvalidSchedule(String),
    #[error("mix probability must lie in [0, 1], got {0}")]
    InvalidMixProb(f64),

    #[error("config line {line}: key {key:?}: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient for parameter {0:?}")]
    NonFiniteGradient(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint still contains decoder or pretraining-head parameters ({0}); export the encoder first")]
    NotEncoderOnly(String),
    #[error("invalid finetune task: {0}")]
    InvalidTask(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
