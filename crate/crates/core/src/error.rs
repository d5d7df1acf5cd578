use thiserror::Error;

pub type Result<T, E = CdcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CdcError {
    #[error("input shape error: {0}")]
    InputShape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("singular configuration: {0}")]
    Singularity(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no feasible size: best BER {best_ber:.3e} does not meet target {target:.3e}")]
    NoFeasibleSize { best_ber: f64, target: f64 },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CdcError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Self::InputShape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Self::Parameter(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Self::Format {
            what,
            detail: detail.into(),
        }
    }
}
