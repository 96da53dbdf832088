use std::path::PathBuf;

use crate::tree::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node} is at depth {depth}, expected {expected}")]
    WrongDepth {
        node: NodeId,
        depth: usize,
        expected: String,
    },
    #[error("cannot open a new branch below depth-{0} leaf {1}")]
    NewBranchAtLeaf(usize, NodeId),
    #[error("leaf {0} holds no data")]
    EmptyLeaf(NodeId),
    #[error("expected {expected} fragment sequences, got {got}")]
    FragmentCount { expected: usize, got: usize },
    #[error("fragment {index} sums to {total}, expected 1")]
    UnnormalizedFragment { index: usize, total: f64 },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("divergence function is singular at level {level} (horizon {horizon})")]
    Singularity { level: usize, horizon: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyData,
    #[error("node {0} has no parameter; sample node parameters first")]
    MissingPhi(NodeId),
    #[error("no pair of data points shares a class label")]
    NoSameClassPairs,
    #[error("holdout fraction {0} leaves an empty test set")]
    EmptyTestSet(f64),
    #[error("no posterior states supplied")]
    NoStates,
    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },
    #[error("newick parse error at byte {offset}: {message}")]
    Newick { offset: usize, message: String },
    #[error("{0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonPositive { name, value })
    }
}
