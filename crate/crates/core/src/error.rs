use thiserror::Error;

use crate::attack::AttackTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("distribution supports do not match")]
    SupportMismatch,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("unknown atom `{0}`")]
    UnknownAtom(String),

    /// A zero prior or kernel entry makes the log-ratio leakage unbounded.
    #[error("unbounded leakage: zero probability at param `{param}`, data `{data}`")]
    UnboundedLeakage { param: String, data: String },

    /// gamma is a ratio over the aggregated TV distance, undefined when that is zero.
    #[error("gamma undefined: aggregated total variation is zero")]
    GammaUndefined,

    #[error("majority-gap assumption violated for client {client}")]
    AssumptionViolated { client: usize },

    #[error("attack diverged after {} iterations", trace.len())]
    Diverged { trace: Box<AttackTrace> },

    #[error("unimplemented mechanism: {0}")]
    UnimplementedMechanism(&'static str),

    #[error("degenerate probes: {0}")]
    DegenerateProbes(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for parse and validation failures, looking through context wrappers.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config { .. } | Error::ConfigParse(_) => true,
            Error::Context { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub(crate) fn ensure_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
