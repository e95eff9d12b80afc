use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its constraint. `field` is a dotted key path.
    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// An operation was called outside its precondition.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("similarity graph is degenerate: no measured off-diagonal range")]
    DegenerateGraph,

    #[error("public-node selection infeasible: {0}")]
    MergeInfeasible(String),

    #[error("matrix completion infeasible: row/column {0} has no observed entry")]
    CompletionInfeasible(usize),

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),

    #[error("map merge left clusters unreachable from the reference: {stranded:?}")]
    PartialMap { stranded: Vec<usize> },

    #[error("range graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("patch {patch} shares only {shared} nodes with the growing map (need 4)")]
    Stitch { patch: usize, shared: usize },

    #[error("channel not detected")]
    Undetected,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short stable tag used in result files.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Usage(_) => "usage",
            Error::DegenerateGraph => "degenerate-graph",
            Error::MergeInfeasible(_) => "merge-infeasible",
            Error::CompletionInfeasible(_) => "completion-infeasible",
            Error::DegenerateAlignment(_) => "degenerate-alignment",
            Error::PartialMap { .. } => "partial-map",
            Error::Disconnected { .. } => "disconnected",
            Error::Stitch { .. } => "stitch",
            Error::Undetected => "undetected",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}
