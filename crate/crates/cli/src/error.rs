//! Command errors and their process exit codes.

use regrank::analysis::AnalysisError;
use regrank::answer::AnswerError;
use regrank::corpus::CorpusError;
use regrank::dense::DenseError;
use regrank::fusion::FusionError;
use regrank::gateway::GatewayError;
use regrank::metrics::MetricsError;
use regrank::repass::RepassError;
use regrank::reranker::RerankError;
use regrank::sparse::SparseError;
use regrank::triplet::MiningError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_REMOTE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad configuration, missing inputs, refused overwrite.
    #[error("{0}")]
    Usage(String),
    /// Inputs that exist but are malformed or inconsistent.
    #[error("{0}")]
    Data(String),
    /// The scorer sidecar failed or misbehaved.
    #[error("scorer: {0}")]
    Remote(#[from] GatewayError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Remote(_) => EXIT_REMOTE,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } | CorpusError::UnknownProfile(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}

impl From<SparseError> for CliError {
    fn from(e: SparseError) -> Self {
        match e {
            SparseError::InvalidParams { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DenseError> for CliError {
    fn from(e: DenseError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::QueryMismatch { .. } => CliError::Data(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Fusion(f) => f.into(),
            MetricsError::ZeroK => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<RerankError> for CliError {
    fn from(e: RerankError) -> Self {
        match e {
            RerankError::ScorerFailure { source, .. } => CliError::Remote(source),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AnswerError> for CliError {
    fn from(e: AnswerError) -> Self {
        match e {
            AnswerError::GeneratorFailure(g) => CliError::Remote(g),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<RepassError> for CliError {
    fn from(e: RepassError) -> Self {
        match e {
            RepassError::NliFailure(g) => CliError::Remote(g),
            RepassError::InvalidThreshold(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::GeneratorFailure(g) => CliError::Remote(g),
            AnalysisError::Scoring(r) => r.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MiningError> for CliError {
    fn from(e: MiningError) -> Self {
        match e {
            MiningError::TrainerFailure { source, .. } => CliError::Remote(source),
            MiningError::TrainerUnavailable(_) | MiningError::InvalidSchedule(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
