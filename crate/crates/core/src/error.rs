//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by dataset loading, graph construction, optimization and
/// the consensus pipeline.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },

    #[error("column index {index} out of range for {width} columns")]
    ColumnOutOfRange { index: usize, width: usize },

    #[error("dataset needs at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },

    #[error("dataset has no feature columns left after column extraction")]
    NoFeatures,

    #[error("labels are not a contiguous class set: class {missing} never occurs")]
    NonContiguousLabels { missing: u32 },

    #[error("embedding has {rows} rows but the dataset has {expected}")]
    RowCountMismatch { rows: usize, expected: usize },

    #[error("non-finite embedding coordinate at row {row}, column {col}")]
    NonFiniteCoordinate { row: usize, col: usize },

    #[error("embedding is degenerate: all rows identical, nothing to scale")]
    DegenerateEmbedding,

    #[error("embedding is not standardized (run standardization first)")]
    NotStandardized,

    #[error("requested {requested} components but achievable rank is {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("requested dims={dims} exceeds min(n-1, p) = {max}")]
    TooManyComponents { dims: usize, max: usize },

    #[error("power iteration failed to converge within {max_iters} iterations")]
    PowerIterationDiverged { max_iters: usize },

    #[error("neighbor count m={m} must be below the point count n={n}")]
    NeighborCountTooLarge { m: usize, n: usize },

    #[error("k={k} exceeds the candidate neighbor count m={m}")]
    KExceedsCandidates { k: usize, m: usize },

    #[error("only {available} non-neighbors per point, need at least {needed} to sample")]
    TooFewNonNeighbors { available: usize, needed: usize },

    #[error("pair ratio must be positive, got {value}")]
    NonPositiveRatio { value: f64 },

    #[error("dataset id mismatch: expected {expected}, got {got}")]
    DatasetMismatch { expected: String, got: String },

    #[error("weight matrices were built over different adjacencies or gamma values")]
    AdjacencyMismatch,

    #[error("alignment pair list is empty")]
    EmptyFarPairs,

    #[error("need at least two non-missing concept values, got {present}")]
    TooFewConcepts { present: usize },

    #[error("concept values have zero variance")]
    ZeroConceptVariance,

    #[error("no far pair has both concept values present")]
    NoEligibleConceptPair,

    #[error("{what} requires a reference PCA projection")]
    MissingReference { what: String },

    #[error("{what} requires per-point concept values")]
    MissingConcepts { what: String },

    #[error("non-finite loss at iteration {iteration}")]
    OptimizeAborted { iteration: usize },

    #[error("ensemble is empty: grid and seed lists must be non-empty")]
    EmptyEnsemble,

    #[error("every ensemble member failed: first failure: {first}")]
    AllMembersFailed { first: String },

    #[error("calibration set is empty")]
    EmptyCalibrationSet,

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("Rashomon set has {got} members, need at least {min} for a calibration/test split")]
    TooFewMembers { got: usize, min: usize },

    #[error("edge ({i}, {j}) is not in the candidate graph")]
    UnknownEdge { i: usize, j: usize },

    #[error("scale constant gamma must be positive, got {value}")]
    NonPositiveGamma { value: f64 },

    #[error("margin lists must hold at least 2 entries, got {got}")]
    TooFewMarginSamples { got: usize },

    #[error("margin lists have different lengths: {left} vs {right}")]
    MarginLengthMismatch { left: usize, right: usize },

    #[error("confidence level must lie in (0, 1), got {value}")]
    InvalidConfidence { value: f64 },

    #[error("bound constant {bound} is below the largest observed margin {max_observed}")]
    BoundTooSmall { bound: f64, max_observed: f64 },

    #[error("bound constant must be nonnegative, got {bound}")]
    NegativeBound { bound: f64 },

    #[error("need at least {min} classes, got {got}")]
    TooFewClasses { got: usize, min: usize },

    #[error("labels must cover every point for this metric")]
    IncompleteLabels,

    #[error("kernel is degenerate: median pairwise distance is zero")]
    DegenerateKernel,

    #[error("invalid metric parameter: {msg}")]
    InvalidMetricParameter { msg: String },

    #[error("{msg}")]
    InvalidInput { msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
