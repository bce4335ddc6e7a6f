use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A (step, state, action) cell; steps are zero-based.
pub type Cell = (usize, usize, usize);

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid MDP: {} violation(s), first: {}", .0.len(), .0[0])]
    InvalidMdp(Vec<crate::mdp::Violation>),

    #[error("behavior policy has zero probability at observed (h={}, s={}, a={})", .0.0, .0.1, .0.2)]
    BehaviorSupport(Cell),

    #[error("target occupancy is positive on {} state-action pair(s) with zero behavior occupancy: {:?}", .0.len(), .0)]
    UnsupportedStateActions(Vec<Cell>),

    #[error("rank-deficient matrix: rank {rank} < dimension {dim}")]
    RankDeficient { rank: usize, dim: usize },

    #[error("ill-conditioned matrix: condition number {0:.3e} exceeds 1e12")]
    IllConditioned(f64),

    #[error("non-finite regression target at step {0}")]
    NonFinite(usize),

    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("policy enumeration needs {count} policies, cap is {cap}")]
    PolicyCap { count: f64, cap: usize },

    #[error("environment contract violation: {0}")]
    Environment(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    MalformedHeader(String),
    IndexOutOfRange { field: &'static str, value: usize, bound: usize },
    TruncatedRecord(String),
    BadValue(String),
    UnexpectedEof(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::MalformedHeader(m) => write!(f, "malformed header: {m}"),
            ParseErrorKind::IndexOutOfRange { field, value, bound } => {
                write!(f, "{field} = {value} out of range (bound {bound})")
            }
            ParseErrorKind::TruncatedRecord(m) => write!(f, "truncated record: {m}"),
            ParseErrorKind::BadValue(m) => write!(f, "bad value: {m}"),
            ParseErrorKind::UnexpectedEof(m) => write!(f, "unexpected end of input: {m}"),
        }
    }
}

pub(crate) fn parse_err(line: usize, kind: ParseErrorKind) -> Error {
    Error::Parse { line, kind }
}
