//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (left {left_rows}x{left_cols}, right {right_rows}x{right_cols})")]
    DimensionMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("matrix is singular: pivot {pivot:.3e} below threshold {threshold:.3e} at column {col}")]
    SingularMatrix {
        pivot: f64,
        threshold: f64,
        col: usize,
    },

    #[error("matrix is not orthogonal: max |G^T G - I| = {residual:.3e} exceeds 1e-12")]
    NotOrthogonal { residual: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("malformed container header: {0}")]
    MalformedHeader(String),

    #[error("unsupported tensor dtype {dtype:?} for tensor {tensor}")]
    UnsupportedDtype { tensor: String, dtype: String },

    #[error("value {value:.6e} in tensor {tensor} overflows storage dtype {dtype}")]
    NarrowingOverflow {
        tensor: String,
        value: f64,
        dtype: &'static str,
    },

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("unexpected tensor {0} not in the canonical schema")]
    UnexpectedTensor(String),

    #[error("tensor {tensor}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("unknown adapter site name in tensor {0}")]
    UnknownSite(String),

    #[error("adapter tensor {0} has no lora_A/lora_B suffix")]
    MalformedAdapterName(String),

    #[error("adapter rank inconsistency: {context} (expected rank {expected}, found {found})")]
    RankInconsistency {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("adapter target layers.{layer}.{site} does not match base tensor: {reason}")]
    AdapterMismatch {
        layer: usize,
        site: String,
        reason: String,
    },

    #[error("gauge spec does not match this checkpoint/config: {0}")]
    SpecMismatch(String),

    #[error("gauge site {0} is not enabled in this spec")]
    SiteNotEnabled(&'static str),

    #[error("Q/K gauge refused: config declares QK normalization with learned scaling")]
    QkNormBlocksGauge,

    #[error("derived gauge spec (composed or inverted) cannot be serialized; only seed-built specs can")]
    DerivedSpecNotSerializable,

    #[error("unknown gauge site {0:?} (expected vo, mlp, or qk)")]
    UnknownGaugeSite(String),

    #[error("tuned weight matrix is singular; the evasion construction requires its inverse")]
    SingularTunedWeights,

    #[error("no invertible safe point found after {0} attempts")]
    NoInvertibleSafePoint(usize),

    #[error("safe subspace basis is rank deficient: element {0} is dependent on earlier elements")]
    RankDeficientBasis(usize),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
