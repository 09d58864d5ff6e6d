use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("missing required column `{column}`")]
    MissingColumn { column: String },

    #[error("duplicate observation ({entity_id}, {period}) on lines {first_line} and {second_line}")]
    DuplicateKey {
        entity_id: String,
        period: i32,
        first_line: u64,
        second_line: u64,
    },

    #[error("line {line}, column `{column}`: cannot parse `{value}` as a finite number")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("mixed currencies in input: `{first}` and `{other}` (line {line})")]
    MixedCurrency {
        first: String,
        other: String,
        line: u64,
    },

    #[error("estimation sample is empty after removing unusable rows")]
    EmptySample,

    #[error("design is numerically rank deficient at column {column}")]
    Rank { column: usize },

    #[error("alternating projections did not converge after {iterations} sweeps")]
    Convergence { iterations: usize },

    #[error("dummy-variable design needs {required} effect columns (limit {limit}); use the within estimator")]
    Size { required: usize, limit: usize },

    #[error("cluster-robust covariance needs at least 2 clusters, got {clusters}")]
    ClusterCount { clusters: usize },

    #[error("non-positive variance for coefficient {index}")]
    Covariance { index: usize },

    #[error("total variation of the dependent variable is zero")]
    UndefinedFit,

    #[error("invalid distribution parameters: {0}")]
    Domain(String),

    #[error("models are not nested: {0}")]
    Nesting(String),

    #[error("test is degenerate: {0}")]
    DegenerateTest(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("no observations in the selected years")]
    EmptyExport,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("entity {entity} has no rows after {retries} missingness redraws")]
    EmptyEntity { entity: usize, retries: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
