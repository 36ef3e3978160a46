use thiserror::Error;

use crate::corpus::TokenId;

/// Errors produced by the sanitization and attack pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown token `{token}` (not in vocabulary)")]
    UnknownToken { token: String },

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("missing embedding: {0}")]
    MissingEmbedding(String),

    #[error("embedding parse error at line {line}: {message}")]
    EmbeddingParse { line: usize, message: String },

    #[error("corpus parse error at line {line}: {message}")]
    CorpusParse { line: usize, message: String },

    #[error("invalid record {id}: {message}")]
    InvalidRecord { id: u64, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("output token {0:?} is unreachable from every input token")]
    UnreachableOutput(TokenId),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("no sensitive positions to evaluate")]
    EmptyTarget,

    #[error("search space of {size} strategies exceeds the limit of {limit}")]
    SearchSpaceTooLarge { size: f64, limit: u64 },

    #[error("context scorer failed: {0}")]
    Scorer(String),

    #[error("cannot build a paired negative sample for `{0}`: fewer than 2 candidates")]
    InsufficientCandidates(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input files or configuration, as opposed
    /// to failures while running (I/O, remote scorer, unreachable outputs).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownToken { .. }
                | Error::InvalidVocabulary(_)
                | Error::MissingEmbedding(_)
                | Error::EmbeddingParse { .. }
                | Error::CorpusParse { .. }
                | Error::InvalidRecord { .. }
                | Error::Config(_)
                | Error::NotApplicable(_)
                | Error::SearchSpaceTooLarge { .. }
                | Error::EmptyCorpus
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
