use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("sub-region {subregion} has {available} UAV(s), quota requires {required}")]
    EmptySubregion {
        subregion: u32,
        available: usize,
        required: usize,
    },

    #[error("UAV and base station positions coincide")]
    CoincidentPositions,

    #[error("link rate is zero; transfer time is unbounded")]
    ZeroRate,

    #[error("round cost requested for an empty cohort")]
    EmptyCohort,

    #[error("UAV {uav_id}: battery {battery_j} J cannot fund {required_j} J")]
    InsufficientBattery {
        uav_id: u32,
        battery_j: f64,
        required_j: f64,
    },

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("need at least 2 samples to score diversity, got {0}")]
    TooFewSamples(usize),

    #[error("dataset was already deduplicated")]
    AlreadyDeduplicated,

    #[error("only {alive} alive UAV(s), cohort needs {needed}")]
    CohortInfeasible { alive: usize, needed: usize },

    #[error("exhaustive selection is limited to {limit} UAVs, got {got}")]
    InstanceTooLarge { got: usize, limit: usize },

    #[error("shard is empty")]
    EmptyShard,

    #[error("non-finite gradient at epoch {epoch}, batch {batch} (|grad|max = {max_abs})")]
    NonFiniteGradient {
        epoch: usize,
        batch: usize,
        max_abs: f64,
    },

    #[error("parameter vectors differ in length: {expected} vs {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("no updates to aggregate")]
    EmptyUpdateSet,

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("bad manifest header: expected `path,label,subregion,uav`, got `{0}`")]
    BadHeader(String),

    #[error("{path}: not a binary PGM (P5) file")]
    BadPgmMagic { path: PathBuf },

    #[error("malformed PGM {path}: {reason}")]
    BadPgm { path: PathBuf, reason: String },

    #[error("label {0} out of range (expected 0 or 1)")]
    LabelOutOfRange(i64),

    #[error("manifest line {line}: {reason}")]
    BadManifestRow { line: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::InvariantViolation(msg.into())
    }
}
