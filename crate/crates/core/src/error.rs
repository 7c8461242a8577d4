use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("KL divergence undefined: q[{index}] = 0 but p[{index}] = {p} > 0")]
    SupportMismatch { index: usize, p: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("accumulator has no {0} samples")]
    EmptyAccumulator(&'static str),

    #[error("matrix is singular or ill-conditioned (condition number {0:.3e})")]
    SingularMatrix(f64),

    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    #[error("EMA factor {0} outside [0, 1]")]
    LambdaOutOfRange(f64),

    #[error("source class {0} has zero probability")]
    ZeroSourceClass(usize),

    #[error("gradient cache does not match the network: {0}")]
    StaleCache(String),

    #[error("discriminator output {0} outside [0, 1]")]
    OutOfRangeDiscriminatorOutput(f64),

    #[error("batch size mismatch: {0} source vs {1} target")]
    BatchSizeMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),

    #[error("class {0} is empty after subsampling")]
    EmptyClassAfterSubsample(usize),

    #[error("invalid task count {0}")]
    InvalidCount(usize),

    #[error("malformed confusion matrix: {0}")]
    MalformedConfusion(String),

    #[error("class {class} has {count} samples, need at least {min}")]
    InsufficientSamples { class: usize, count: usize, min: usize },

    #[error("minimum target class probability is zero")]
    DegenerateGamma,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
