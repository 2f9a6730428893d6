use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the harness can report. Variants map one-to-one onto the
/// error names used in the wire protocol and the CLI manifest.
#[derive(Debug, Error)]
pub enum Error {
    #[error("predicate clause references unknown task `{0}`")]
    UnknownTask(String),
    #[error("metric `{0}` is not registered")]
    UnresolvableMetric(String),
    #[error("data source `{0}` yields no points")]
    EmptyDataSource(String),
    #[error("unknown data generator `{0}`")]
    UnknownGenerator(String),
    #[error("invalid contract: {0}")]
    InvalidContract(String),
    #[error("metric `{0}` requires targets on every point")]
    MissingTargets(String),
    #[error("metric `{0}` requires a group label on every point")]
    MissingGroups(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("failed to spawn model: {0}")]
    SpawnFailure(String),
    #[error("access level 0 grants no model handle")]
    AccessLevelZero,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("timed out after {0:?} waiting for model reply")]
    Timeout(std::time::Duration),
    #[error("run budget of {budget} exhausted")]
    BudgetExhausted { budget: u64 },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("unknown builtin model `{0}`")]
    UnknownBuiltin(String),
    #[error("model reported an error: {0}")]
    ModelFailure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("certificate `{0}` cannot be graded: evidence has no data and the conclusion is not universal")]
    UngradableEvidence(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("certificate `{0}` has not been graded")]
    UngradedCertificate(String),
    #[error("training failed: {0}")]
    TrainFailure(String),
    #[error("all candidate likelihoods are zero")]
    DegenerateLikelihood,
    #[error("schema version mismatch: expected `{expected}`, found `{found}`")]
    SchemaVersionMismatch { expected: String, found: String },
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in manifests and protocol error replies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownTask(_) => "UnknownTask",
            Error::UnresolvableMetric(_) => "UnresolvableMetric",
            Error::EmptyDataSource(_) => "EmptyDataSource",
            Error::UnknownGenerator(_) => "UnknownGenerator",
            Error::InvalidContract(_) => "InvalidContract",
            Error::MissingTargets(_) => "MissingTargets",
            Error::MissingGroups(_) => "MissingGroups",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::SpawnFailure(_) => "SpawnFailure",
            Error::AccessLevelZero => "AccessLevelZero",
            Error::Protocol(_) => "ProtocolError",
            Error::Timeout(_) => "Timeout",
            Error::BudgetExhausted { .. } => "BudgetExhausted",
            Error::SchemaViolation(_) => "SchemaViolation",
            Error::Unsupported(_) => "Unsupported",
            Error::Numerical(_) => "NumericalError",
            Error::UnknownBuiltin(_) => "UnknownBuiltin",
            Error::ModelFailure(_) => "ModelFailure",
            Error::Precondition(_) => "PreconditionViolation",
            Error::UngradableEvidence(_) => "UngradableEvidence",
            Error::InsufficientData(_) => "InsufficientData",
            Error::Domain(_) => "DomainError",
            Error::UngradedCertificate(_) => "UngradedCertificate",
            Error::TrainFailure(_) => "TrainFailure",
            Error::DegenerateLikelihood => "DegenerateLikelihood",
            Error::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            Error::CorruptArchive(_) => "CorruptArchive",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
