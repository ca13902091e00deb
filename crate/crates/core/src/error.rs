use std::fmt;

use thiserror::Error;

/// Location of a block record inside a bitstream, used to point at the failing unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordId {
    pub layer: u32,
    pub unit: RecordUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordUnit {
    /// Block type record, keyed by type id.
    Block(u16),
    /// Standalone record for a tensor not covered by any block type (ordinal within the layer).
    Tensor(u16),
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.unit {
            RecordUnit::Block(t) => write!(f, "(layer {}, type {})", self.layer, t),
            RecordUnit::Tensor(k) => write!(f, "(layer {}, tensor #{})", self.layer, k),
        }
    }
}

fn at(rec: &Option<RecordId>) -> String {
    match rec {
        Some(r) => format!(" at {r}"),
        None => String::new(),
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse error: {0}")]
    ManifestParse(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in tensor `{tensor}` of layer {layer}")]
    NonFiniteValue { layer: usize, tensor: String },
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("unsupported dtype `{0}` (only f32 is supported)")]
    UnsupportedDtype(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("block axis {axis} out of range for tensor `{tensor}` with {ndim} dims")]
    AxisOutOfRange { tensor: String, axis: usize, ndim: usize },
    #[error("block count mismatch: {0}")]
    BlockCountMismatch(String),
    #[error("incomplete block set: expected {expected} blocks, got {got}")]
    IncompleteBlockSet { expected: usize, got: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("not a bijection: {0}")]
    NotBijection(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("non-finite matrix entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("lehmer digit {digit} at position {pos} exceeds bound {bound}")]
    DigitOutOfRange { pos: usize, digit: u32, bound: u32 },
    #[error("corrupt stream{}: {reason}", at(.record))]
    CorruptStream { record: Option<RecordId>, reason: String },
    #[error("invalid cdf: {0}")]
    CdfInvalid(String),
    #[error("symbol {0} outside the model support")]
    OutOfSupport(i64),
    #[error("missing prediction for a predictive context")]
    MissingPrediction,

    #[error("empty quantizer group {0}")]
    EmptyGroup(usize),
    #[error("code {code} exceeds clip range {q_max}")]
    CodeOutOfRange { code: i32, q_max: u32 },

    #[error("unknown block type {0}")]
    UnknownType(u16),
    #[error("layer index {0} out of range")]
    LayerIndexOutOfRange(usize),
    #[error("non-finite training loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("record order violated: {0}")]
    RecordCountMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("zero variance in targets")]
    ZeroVariance,
    #[error("zero target energy")]
    ZeroEnergy,
    #[error("no break-even: per-deployment load saving is {0} s")]
    NoBreakEven(f64),
}

impl Error {
    pub(crate) fn corrupt(reason: impl Into<String>) -> Self {
        Error::CorruptStream { record: None, reason: reason.into() }
    }

    /// Report a record-level decode failure as a corrupt stream at `rec`; grammar
    /// violations and already located errors pass through.
    pub(crate) fn at_record(self, rec: RecordId) -> Self {
        match self {
            Error::CorruptStream { record: None, reason } => Error::CorruptStream { record: Some(rec), reason },
            e @ (Error::CorruptStream { .. } | Error::RecordCountMismatch(_)) => e,
            other => Error::CorruptStream { record: Some(rec), reason: other.to_string() },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
