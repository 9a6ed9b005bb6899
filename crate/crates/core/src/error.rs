use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside the valid domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("order {order} out of range 0..={max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("target {target} is not bracketed by [{lo}, {hi}]")]
    Bracket { target: f64, lo: f64, hi: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("curvature vector not in the Garding cone of order {order} (margin {margin})")]
    Cone { order: usize, margin: f64 },

    #[error("H_{order} <= 0 at {} node(s), first indices {:?}", nodes.len(), &nodes[..nodes.len().min(8)])]
    ConeNodes { order: usize, nodes: Vec<usize> },

    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("step rejected: {0}")]
    StepRejected(String),

    #[error("corpus rejection budget exhausted: accepted {accepted} of {requested} after {attempts} attempts (acceptance rate {rate:.3})")]
    Budget {
        accepted: usize,
        requested: usize,
        attempts: usize,
        rate: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::OrderOutOfRange { .. } => "order",
            Error::Bracket { .. } => "bracket",
            Error::Numeric(_) => "numeric",
            Error::Cone { .. } | Error::ConeNodes { .. } => "cone",
            Error::Hypothesis(_) => "hypothesis",
            Error::Invalid(_) => "invalid",
            Error::StepRejected(_) => "step",
            Error::Budget { .. } => "budget",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Config(_) => "config",
        }
    }
}
