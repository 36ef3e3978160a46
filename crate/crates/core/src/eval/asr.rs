use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{embedding_inversion, reconstruct_context_free};
use crate::context::{reconstruct_contextual, ContextScorer, ContextWindow};
use crate::corpus::{EmbeddingTable, PriorMode, PriorModel, SentenceRecord, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::mechanism::Channel;

/// Exact-match tally over attacked positions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsrCount {
    pub matched: u64,
    pub total: u64,
}

impl AsrCount {
    pub fn asr(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }

    pub fn merge(self, other: AsrCount) -> AsrCount {
        AsrCount { matched: self.matched + other.matched, total: self.total + other.total }
    }
}

/// One row of an experiment report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrReport {
    pub method: String,
    pub epsilon: f64,
    pub k: Option<usize>,
    pub shadow_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
    pub asr: f64,
    pub matched: u64,
    pub total: u64,
    pub elapsed_ms: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AsrReport {
    pub fn new(method: impl Into<String>, epsilon: f64, seed: u64, count: AsrCount) -> Self {
        AsrReport {
            method: method.into(),
            epsilon,
            k: None,
            shadow_ratio: None,
            smoothing: None,
            asr: count.asr(),
            matched: count.matched,
            total: count.total,
            elapsed_ms: 0,
            seed,
            error: None,
        }
    }

    /// A report for a cell whose computation failed.
    pub fn failed(method: impl Into<String>, epsilon: f64, seed: u64, error: &Error) -> Self {
        AsrReport { error: Some(error.to_string()), ..AsrReport::new(method, epsilon, seed, AsrCount::default()) }
    }
}

/// Counts exact matches between `originals` and `reconstructions` over the
/// positions selected by `mask`.
pub fn compute_asr<T: PartialEq>(originals: &[T], reconstructions: &[T], mask: &[bool]) -> Result<AsrCount> {
    if originals.len() != reconstructions.len() || originals.len() != mask.len() {
        return Err(Error::Config(format!(
            "misaligned inputs: {} originals, {} reconstructions, {} mask entries",
            originals.len(),
            reconstructions.len(),
            mask.len()
        )));
    }
    let mut count = AsrCount::default();
    for ((o, r), &m) in originals.iter().zip(reconstructions).zip(mask) {
        if m {
            count.total += 1;
            count.matched += u64::from(o == r);
        }
    }
    if count.total == 0 {
        return Err(Error::EmptyTarget);
    }
    Ok(count)
}

/// Attack applied independently to every sensitive token of a dataset.
#[derive(Clone, Copy)]
pub enum Attack<'a> {
    ContextFree { prior: &'a PriorModel },
    Contextual { prior: &'a PriorModel, scorer: &'a dyn ContextScorer, k: usize },
    EmbeddingInversion { embeddings: &'a EmbeddingTable },
}

impl Attack<'_> {
    fn reconstruct(
        &self,
        y: TokenId,
        window: &ContextWindow,
        channel: &Channel,
        vocab: &Vocabulary,
    ) -> Result<TokenId> {
        match *self {
            Attack::ContextFree { prior } => reconstruct_context_free(y, channel, prior),
            Attack::Contextual { prior, scorer, k } => {
                reconstruct_contextual(y, window, channel, prior, scorer, k, vocab)
            }
            Attack::EmbeddingInversion { embeddings } => {
                let candidates: Vec<TokenId> = (0..channel.n_inputs()).map(TokenId::from).collect();
                embedding_inversion(y, embeddings, &candidates)
            }
        }
    }
}

/// Reconstructs every sanitized record; non-sensitive positions are copied.
pub fn reconstruct_dataset(
    dataset: &[SentenceRecord],
    vocab: &Vocabulary,
    channel: &Channel,
    attack: Attack<'_>,
) -> Result<Vec<Vec<String>>> {
    dataset
        .par_iter()
        .map(|record| {
            let sanitized = record.sanitized.as_ref().ok_or_else(|| Error::InvalidRecord {
                id: record.id,
                message: "record has no sanitized tokens".into(),
            })?;
            record.validate()?;
            let mut out = sanitized.clone();
            for i in record.sensitive_positions() {
                let y = vocab.require(&sanitized[i])?;
                let window = ContextWindow::new(sanitized.clone(), i)?;
                let x = attack.reconstruct(y, &window, channel, vocab)?;
                out[i] = vocab.token(x).to_owned();
            }
            Ok(out)
        })
        .collect()
}

/// Tallies reconstructions against the originals of `dataset`.
pub fn score_dataset(dataset: &[SentenceRecord], reconstructions: &[Vec<String>]) -> Result<AsrCount> {
    if dataset.len() != reconstructions.len() {
        return Err(Error::Config("reconstructions do not match the dataset".into()));
    }
    let mut count = AsrCount::default();
    for (record, rec) in dataset.iter().zip(reconstructions) {
        if !record.sensitive.iter().any(|&s| s) {
            continue;
        }
        count = count.merge(compute_asr(&record.tokens, rec, &record.sensitive)?);
    }
    if count.total == 0 {
        return Err(Error::EmptyTarget);
    }
    Ok(count)
}

/// Runs `attack` over `dataset` and tallies the result. The elapsed time is
/// returned alongside so callers may report it.
pub fn attack_dataset(
    dataset: &[SentenceRecord],
    vocab: &Vocabulary,
    channel: &Channel,
    attack: Attack<'_>,
) -> Result<(AsrCount, u64)> {
    let start = Instant::now();
    let reconstructions = reconstruct_dataset(dataset, vocab, channel, attack)?;
    let elapsed = start.elapsed().as_millis() as u64;
    Ok((score_dataset(dataset, &reconstructions)?, elapsed))
}

fn require_exact(prior: &PriorModel) -> Result<()> {
    if prior.mode() != PriorMode::Exact {
        return Err(Error::Config("bounds are defined with the exact prior".into()));
    }
    Ok(())
}

/// Context-free bound: ASR of the optimal attack with the exact prior.
pub fn context_free_bound(
    dataset: &[SentenceRecord],
    vocab: &Vocabulary,
    channel: &Channel,
    prior: &PriorModel,
) -> Result<AsrCount> {
    require_exact(prior)?;
    Ok(attack_dataset(dataset, vocab, channel, Attack::ContextFree { prior })?.0)
}

/// Contextual `K` bound, relative to `scorer`.
pub fn contextual_k_bound(
    dataset: &[SentenceRecord],
    vocab: &Vocabulary,
    channel: &Channel,
    prior: &PriorModel,
    scorer: &dyn ContextScorer,
    k: usize,
) -> Result<AsrCount> {
    require_exact(prior)?;
    Ok(attack_dataset(dataset, vocab, channel, Attack::Contextual { prior, scorer, k })?.0)
}
