//! Context-free reconstruction.
//!
//! The optimal context-free attack picks `argmax_x Pr(y|x)·Pr(x)`; the
//! practical variant uses a shadow-smoothed prior `Pr(x) + 1/alpha`. Both are
//! the same computation here, selected by the [`PriorModel`]'s mode. The
//! marginal `Pr(y)` is constant in `x` and never computed.

use std::cmp::Ordering;

use crate::corpus::{EmbeddingTable, PriorModel, TokenId};
use crate::error::{Error, Result};
use crate::mechanism::Channel;

/// Unnormalized posterior mass `Pr(y|x)·mass(x)` for one candidate, in log space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorScore {
    pub token: TokenId,
    pub log_score: f64,
    /// Whether `Pr(y|token) > 0`.
    pub reachable: bool,
}

impl PosteriorScore {
    pub fn score(&self) -> f64 {
        self.log_score.exp()
    }

    /// Descending score; reachable before unreachable on equal scores; then
    /// lower token id.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .log_score
            .total_cmp(&self.log_score)
            .then(other.reachable.cmp(&self.reachable))
            .then(self.token.cmp(&other.token))
    }
}

/// Scores every input token for output `y`, best first.
pub fn ranked_candidates(y: TokenId, channel: &Channel, prior: &PriorModel) -> Vec<PosteriorScore> {
    debug_assert!(prior.len() >= channel.n_inputs());
    let mut scores: Vec<PosteriorScore> = (0..channel.n_inputs())
        .map(|x| PosteriorScore { token: TokenId::from(x), log_score: f64::NEG_INFINITY, reachable: false })
        .collect();
    for &(x, lp) in channel.column(y) {
        let s = &mut scores[x.index()];
        s.log_score = lp + prior.log_mass(x);
        s.reachable = true;
    }
    scores.sort_by(PosteriorScore::rank_cmp);
    scores
}

fn best_reachable(y: TokenId, channel: &Channel, prior: &PriorModel) -> Result<PosteriorScore> {
    channel
        .column(y)
        .iter()
        .map(|&(x, lp)| PosteriorScore { token: x, log_score: lp + prior.log_mass(x), reachable: true })
        .min_by(PosteriorScore::rank_cmp)
        .ok_or(Error::UnreachableOutput(y))
}

/// `argmax_x Pr(y|x)·mass(x)`, ties to the lower token id.
pub fn reconstruct_context_free(y: TokenId, channel: &Channel, prior: &PriorModel) -> Result<TokenId> {
    if y.index() >= channel.n_outputs() {
        return Err(Error::Config(format!("output {y} outside the channel")));
    }
    best_reachable(y, channel, prior).map(|s| s.token)
}

/// The `k` highest-scoring input tokens for `y`, best first.
pub fn topk_candidates(y: TokenId, k: usize, channel: &Channel, prior: &PriorModel) -> Vec<TokenId> {
    assert!(k >= 1, "k must be positive");
    let mut ranked = ranked_candidates(y, channel, prior);
    ranked.truncate(k);
    ranked.into_iter().map(|s| s.token).collect()
}

/// Candidate whose embedding is closest (Euclidean) to `y`'s, ties to the
/// lower token id.
pub fn embedding_inversion(y: TokenId, embeddings: &EmbeddingTable, candidates: &[TokenId]) -> Result<TokenId> {
    candidates
        .iter()
        .map(|&x| (embeddings.distance(x, y), x))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, x)| x)
        .ok_or_else(|| Error::Config("embedding inversion needs a non-empty candidate set".into()))
}
