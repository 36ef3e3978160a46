//! Corpus ingestion: tokenization, vocabularies, embeddings, sentence
//! records, and token-frequency priors.

mod embeddings;
mod prior;
mod records;
mod vocab;

pub use embeddings::{load_embeddings, load_embeddings_with_vocab, EmbeddingTable, Metric};
pub use prior::{estimate_prior, AlphaKind, PriorMode, PriorModel};
pub use records::{read_corpus, write_corpus, SentenceRecord};
pub use vocab::{TokenId, Vocabulary};

/// Splits `text` on runs of whitespace, optionally lowercasing each token.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace().map(|t| if lowercase { t.to_lowercase() } else { t.to_owned() }).collect()
}
