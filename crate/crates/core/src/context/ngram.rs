use std::collections::HashMap;

use super::{ContextScorer, ContextWindow};
use crate::error::{Error, Result};

const UNKNOWN: u32 = u32::MAX;

/// Additive-smoothed n-gram model used as a context scorer.
///
/// `P(w | h) = (count(h, w) + k) / (count(h) + k·V)` with `V` the number of
/// distinct training tokens plus one unknown bucket. Sentences carry no
/// boundary markers: the first token uses the unigram estimate and the
/// next ones use as much history as is available, so a single-token
/// sentence is scored by its unigram probability.
#[derive(Clone, Debug)]
pub struct NgramScorer {
    order: usize,
    smoothing: f64,
    ids: HashMap<String, u32>,
    grams: HashMap<Vec<u32>, u64>,
    histories: HashMap<Vec<u32>, u64>,
    total: u64,
}

/// Trains an n-gram scorer of `order` 2 or 3 on token sequences.
pub fn ngram_train<I, S>(corpus: I, order: usize, smoothing: f64) -> Result<NgramScorer>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[String]>,
{
    if !(2..=3).contains(&order) {
        return Err(Error::Config(format!("n-gram order must be 2 or 3, got {order}")));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!("smoothing constant must be positive, got {smoothing}")));
    }
    let mut model = NgramScorer {
        order,
        smoothing,
        ids: HashMap::new(),
        grams: HashMap::new(),
        histories: HashMap::new(),
        total: 0,
    };
    let mut seq = Vec::new();
    for sentence in corpus {
        seq.clear();
        for token in sentence.as_ref() {
            let next = model.ids.len() as u32;
            seq.push(*model.ids.entry(token.clone()).or_insert(next));
        }
        model.count(&seq);
    }
    if model.total == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(model)
}

impl NgramScorer {
    fn count(&mut self, seq: &[u32]) {
        for j in 0..seq.len() {
            self.total += 1;
            *self.grams.entry(vec![seq[j]]).or_default() += 1;
            for len in 1..self.order.min(j + 1) {
                let history = &seq[j - len..j];
                *self.histories.entry(history.to_vec()).or_default() += 1;
                *self.grams.entry(seq[j - len..=j].to_vec()).or_default() += 1;
            }
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn vocab_size(&self) -> f64 {
        (self.ids.len() + 1) as f64
    }

    fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.ids.get(t).copied().unwrap_or(UNKNOWN)).collect()
    }

    fn log_prob_at(&self, seq: &[u32], j: usize) -> f64 {
        let k = self.smoothing;
        let v = self.vocab_size();
        let start = (j + 1).saturating_sub(self.order);
        let gram = &seq[start..=j];
        let count = self.grams.get(gram).copied().unwrap_or(0) as f64;
        let denom = if gram.len() == 1 {
            self.total as f64
        } else {
            self.histories.get(&seq[start..j]).copied().unwrap_or(0) as f64
        };
        ((count + k) / (denom + k * v)).ln()
    }

    /// Log-likelihood of a whole sequence.
    pub fn log_likelihood(&self, tokens: &[String]) -> f64 {
        let seq = self.encode(tokens);
        (0..seq.len()).map(|j| self.log_prob_at(&seq, j)).sum()
    }

    /// Log-likelihood restricted to the terms that involve `position`; it
    /// differs from [`NgramScorer::log_likelihood`] by an amount that does not
    /// depend on the token at `position`.
    pub fn local_log_likelihood(&self, tokens: &[String], position: usize) -> f64 {
        let seq = self.encode(tokens);
        let end = (position + self.order).min(seq.len());
        (position..end).map(|j| self.log_prob_at(&seq, j)).sum()
    }
}

impl ContextScorer for NgramScorer {
    /// Likelihood of `f(c, candidate)`, up to a factor constant across
    /// candidates; the observed token is ignored.
    fn score(&self, window: &ContextWindow, candidate: &str, _observed: &str) -> Result<f64> {
        let seq = window.substitute(candidate);
        Ok(self.local_log_likelihood(&seq, window.position()).exp())
    }
}
