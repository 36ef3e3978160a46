//! Contextual reconstruction.
//!
//! The contextual attack rescores the top-`K` context-free candidates by a
//! context term proportional to `Pr(c|x', y)`, where `c` is the sanitized
//! sentence with the attacked position removed. That term is supplied by a
//! [`ContextScorer`]; `Pr(c|y)` is constant in `x'` and never computed.

mod detector;
mod exact;
mod ngram;
mod samples;

pub use detector::{DetectorClient, DetectorScorer, TrainResponse, DETECTOR_URL_ENV, MAX_SCORE_BATCH};
pub use exact::ExactJointScorer;
pub use ngram::{ngram_train, NgramScorer};
pub use samples::{build_detector_samples, read_detector_samples, write_detector_samples, DetectorSample};

use crate::attack::{ranked_candidates, PosteriorScore};
use crate::corpus::{PriorModel, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::mechanism::Channel;

/// A sanitized sentence and the index of the token under attack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextWindow {
    sentence: Vec<String>,
    position: usize,
}

impl ContextWindow {
    pub fn new(sentence: Vec<String>, position: usize) -> Result<Self> {
        if position >= sentence.len() {
            return Err(Error::Config(format!(
                "position {position} out of range for a sentence of {} tokens",
                sentence.len()
            )));
        }
        Ok(ContextWindow { sentence, position })
    }

    pub fn sentence(&self) -> &[String] {
        &self.sentence
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// The sanitized token at the attacked position.
    pub fn observed(&self) -> &str {
        &self.sentence[self.position]
    }

    /// The context `c`: every token except the attacked one.
    pub fn context(&self) -> impl Iterator<Item = &str> {
        self.sentence.iter().enumerate().filter(move |(i, _)| *i != self.position).map(|(_, t)| t.as_str())
    }

    /// `f(c, t)`: the sentence with the attacked position replaced by `t`.
    pub fn substitute(&self, t: &str) -> Vec<String> {
        let mut out = self.sentence.clone();
        out[self.position] = t.to_owned();
        out
    }
}

/// Source of the context term `∝ Pr(c | x', y)`.
///
/// Scores must be finite and non-negative. Only ratios between candidates
/// matter; multiplying every score by a positive constant changes nothing.
pub trait ContextScorer: Send + Sync {
    fn score(&self, window: &ContextWindow, candidate: &str, observed: &str) -> Result<f64>;

    /// Scores several candidates for the same window. Remote scorers override
    /// this to batch requests.
    fn score_many(&self, window: &ContextWindow, candidates: &[&str], observed: &str) -> Result<Vec<f64>> {
        candidates.iter().map(|c| self.score(window, c, observed)).collect()
    }
}

/// Returns the same score for everything, which reduces the contextual
/// attack to the context-free one.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl Default for ConstantScorer {
    fn default() -> Self {
        ConstantScorer(1.0)
    }
}

impl ContextScorer for ConstantScorer {
    fn score(&self, _: &ContextWindow, _: &str, _: &str) -> Result<f64> {
        Ok(self.0)
    }
}

/// Contextual reconstruction of output `y` seen at `window`.
///
/// Candidates are the `k` best context-free tokens; among them the winner
/// maximizes `Pr(y|x')·mass(x')·score(c, x', y)`, ties to the lower id.
/// `inputs` names the input tokens handed to the scorer.
pub fn reconstruct_contextual(
    y: TokenId,
    window: &ContextWindow,
    channel: &Channel,
    prior: &PriorModel,
    scorer: &dyn ContextScorer,
    k: usize,
    inputs: &Vocabulary,
) -> Result<TokenId> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if y.index() >= channel.n_outputs() {
        return Err(Error::Config(format!("output {y} outside the channel")));
    }
    if channel.column(y).is_empty() {
        return Err(Error::UnreachableOutput(y));
    }
    let mut ranked = ranked_candidates(y, channel, prior);
    ranked.truncate(k);
    let names: Vec<&str> = ranked.iter().map(|s| inputs.token(s.token)).collect();
    let context_scores = scorer.score_many(window, &names, window.observed())?;
    if context_scores.len() != ranked.len() {
        return Err(Error::Scorer(format!("expected {} scores, got {}", ranked.len(), context_scores.len())));
    }
    let mut rescored = Vec::with_capacity(ranked.len());
    for (cand, s) in ranked.iter().zip(context_scores) {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Scorer(format!("invalid score {s} for {:?}", inputs.token(cand.token))));
        }
        rescored.push(PosteriorScore { log_score: cand.log_score + s.ln(), ..*cand });
    }
    Ok(rescored.into_iter().min_by(PosteriorScore::rank_cmp).expect("k >= 1").token)
}
