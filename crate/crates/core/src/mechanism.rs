//! Exponential-mechanism sanitization channels `Pr(y|x)`.
//!
//! Both supported defenses share one sampler, `Pr(y|x) ∝ exp(-ε·d(x,y)/2)`,
//! and differ only in the candidate set: the whole vocabulary, or the
//! `adjacency_size` nearest tokens of `x` (which always include `x`).

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, Metric, SentenceRecord, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::position_rng;

pub const DEFAULT_ADJACENCY_SIZE: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    FullVocab,
    Adjacency,
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-vocab" => Ok(MechanismKind::FullVocab),
            "adjacency" => Ok(MechanismKind::Adjacency),
            other => Err(Error::Config(format!("unknown mechanism kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub epsilon: f64,
    pub kind: MechanismKind,
    #[serde(default = "default_adjacency_size")]
    pub adjacency_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metric: Metric,
}

fn default_adjacency_size() -> usize {
    DEFAULT_ADJACENCY_SIZE
}

impl MechanismConfig {
    pub fn new(epsilon: f64, kind: MechanismKind) -> Self {
        MechanismConfig { epsilon, kind, adjacency_size: DEFAULT_ADJACENCY_SIZE, seed: 0, metric: Metric::Euclidean }
    }

    pub fn full_vocab(epsilon: f64) -> Self {
        Self::new(epsilon, MechanismKind::FullVocab)
    }

    pub fn adjacency(epsilon: f64, adjacency_size: usize) -> Self {
        MechanismConfig { adjacency_size, ..Self::new(epsilon, MechanismKind::Adjacency) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive and finite, got {}", self.epsilon)));
        }
        if self.kind == MechanismKind::Adjacency && (self.adjacency_size == 0 || self.adjacency_size > vocab_size) {
            return Err(Error::Config(format!(
                "adjacency size {} must be between 1 and the vocabulary size {vocab_size}",
                self.adjacency_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Row {
    candidates: Vec<TokenId>,
    logprobs: Vec<f64>,
    cdf: Vec<f64>,
}

impl Row {
    fn new(candidates: Vec<TokenId>, logprobs: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cdf = logprobs
            .iter()
            .map(|lp| {
                acc += lp.exp();
                acc
            })
            .collect();
        Row { candidates, logprobs, cdf }
    }
}

/// The conditional distribution `Pr(Y|X)` of a sanitization mechanism.
///
/// Inputs and outputs are token ids; for corpus channels both index the same
/// vocabulary, but synthetic channels may have `|X| != |Y|`.
#[derive(Clone, Debug)]
pub struct Channel {
    config: Option<MechanismConfig>,
    kind: MechanismKind,
    n_outputs: usize,
    rows: Vec<Row>,
    // y -> (x, log Pr(y|x)) for every x that can emit y, ascending in x
    columns: Vec<Vec<(TokenId, f64)>>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn by_distance(d: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b))
}

/// Builds the channel for `config` over all tokens of `embeddings`.
pub fn build_channel(embeddings: &EmbeddingTable, config: &MechanismConfig) -> Result<Channel> {
    let n = embeddings.len();
    config.validate(n)?;
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|x| {
            let xid = TokenId::from(x);
            let d: Vec<f64> = (0..n).map(|y| embeddings.distance_with(config.metric, xid, TokenId::from(y))).collect();
            let candidates: Vec<usize> = match config.kind {
                MechanismKind::FullVocab => (0..n).collect(),
                MechanismKind::Adjacency => {
                    let mut others: Vec<usize> = (0..n).filter(|&y| y != x).collect();
                    others.sort_by(by_distance(&d));
                    let mut chosen = vec![x];
                    chosen.extend(others.into_iter().take(config.adjacency_size - 1));
                    chosen.sort_by(by_distance(&d));
                    chosen
                }
            };
            let logits: Vec<f64> = candidates.iter().map(|&y| -config.epsilon * d[y] / 2.0).collect();
            let norm = log_sum_exp(&logits);
            let logprobs = logits.iter().map(|l| l - norm).collect();
            Row::new(candidates.into_iter().map(TokenId::from).collect(), logprobs)
        })
        .collect();
    Ok(Channel::assemble(Some(config.clone()), config.kind, n, rows))
}

impl Channel {
    fn assemble(config: Option<MechanismConfig>, kind: MechanismKind, n_outputs: usize, rows: Vec<Row>) -> Self {
        let mut columns = vec![Vec::new(); n_outputs];
        for (x, row) in rows.iter().enumerate() {
            for (&y, &lp) in row.candidates.iter().zip(&row.logprobs) {
                if lp > f64::NEG_INFINITY {
                    columns[y.index()].push((TokenId::from(x), lp));
                }
            }
        }
        Channel { config, kind, n_outputs, rows, columns }
    }

    /// A full-vocabulary channel from an explicit `|X| x |Y|` probability
    /// matrix. Rows must be non-negative and sum to 1 within 1e-9.
    pub fn from_matrix(matrix: &[Vec<f64>], config: Option<MechanismConfig>) -> Result<Self> {
        let n_outputs = matrix.first().map_or(0, Vec::len);
        if n_outputs == 0 {
            return Err(Error::Config("channel matrix must be non-empty".into()));
        }
        let mut rows = Vec::with_capacity(matrix.len());
        for (x, probs) in matrix.iter().enumerate() {
            if probs.len() != n_outputs {
                return Err(Error::Config(format!(
                    "channel row {x} has {} entries, expected {n_outputs}",
                    probs.len()
                )));
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Config(format!("channel row {x} has an invalid probability")));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("channel row {x} sums to {total}")));
            }
            rows.push(Row::new((0..n_outputs).map(TokenId::from).collect(), probs.iter().map(|p| p.ln()).collect()));
        }
        Ok(Channel::assemble(config, MechanismKind::FullVocab, n_outputs, rows))
    }

    /// Dense `|X| x |Y|` probability matrix.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.n_outputs];
                for (y, lp) in row.candidates.iter().zip(&row.logprobs) {
                    dense[y.index()] = lp.exp();
                }
                dense
            })
            .collect()
    }

    pub fn config(&self) -> Option<&MechanismConfig> {
        self.config.as_ref()
    }

    pub fn kind(&self) -> MechanismKind {
        self.kind
    }

    pub fn n_inputs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn candidates(&self, x: TokenId) -> &[TokenId] {
        &self.rows[x.index()].candidates
    }

    pub fn logprobs(&self, x: TokenId) -> &[f64] {
        &self.rows[x.index()].logprobs
    }

    /// Inputs that emit `y` with non-zero probability, with `log Pr(y|x)`.
    pub fn column(&self, y: TokenId) -> &[(TokenId, f64)] {
        &self.columns[y.index()]
    }

    pub fn log_prob(&self, x: TokenId, y: TokenId) -> f64 {
        match self.column(y).binary_search_by_key(&x, |(x, _)| *x) {
            Ok(i) => self.columns[y.index()][i].1,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn prob(&self, x: TokenId, y: TokenId) -> f64 {
        self.log_prob(x, y).exp()
    }
}

/// Draws one output for `x` from the channel row.
pub fn sample_output<R: Rng + ?Sized>(channel: &Channel, x: TokenId, rng: &mut R) -> TokenId {
    let row = &channel.rows[x.index()];
    let total = *row.cdf.last().expect("channel rows are non-empty");
    let u = rng.random::<f64>() * total;
    let i = row.cdf.partition_point(|&c| c <= u).min(row.candidates.len() - 1);
    row.candidates[i]
}

/// Sanitizes every sensitive position of `record` independently.
///
/// Position `i` of sentence `id` draws from the stream `(seed ^ id, i)`, so the
/// output does not depend on processing order.
pub fn sanitize_sentence(
    record: &SentenceRecord,
    vocab: &Vocabulary,
    channel: &Channel,
    seed: u64,
) -> Result<SentenceRecord> {
    if record.sanitized.is_some() {
        return Err(Error::InvalidRecord { id: record.id, message: "record is already sanitized".into() });
    }
    record.validate()?;
    if channel.n_outputs() > vocab.len() {
        return Err(Error::Config("channel outputs exceed the vocabulary".into()));
    }
    let mut sanitized = Vec::with_capacity(record.len());
    for (i, (token, &sensitive)) in record.tokens.iter().zip(&record.sensitive).enumerate() {
        if !sensitive {
            sanitized.push(token.clone());
            continue;
        }
        let x = vocab.require(token)?;
        if x.index() >= channel.n_inputs() {
            return Err(Error::UnknownToken { token: token.clone() });
        }
        let y = sample_output(channel, x, &mut position_rng(seed, record.id, i));
        sanitized.push(vocab.token(y).to_owned());
    }
    Ok(SentenceRecord { sanitized: Some(sanitized), ..record.clone() })
}

/// Sanitizes a corpus in parallel; output order matches input order.
pub fn sanitize_corpus(
    records: &[SentenceRecord],
    vocab: &Vocabulary,
    channel: &Channel,
    seed: u64,
) -> Result<Vec<SentenceRecord>> {
    records.par_iter().map(|r| sanitize_sentence(r, vocab, channel, seed)).collect()
}

/// Worst-case metric-DP violation of a full-vocabulary channel:
/// `max_{x1,x2,y} log Pr(y|x1) - log Pr(y|x2) - ε·d(x1,x2)`.
///
/// A correct mechanism yields a value `<= 1e-9` (pairs with `x1 == x2`
/// contribute exactly zero).
pub fn dp_ratio_check(channel: &Channel, embeddings: &EmbeddingTable) -> Result<f64> {
    let config =
        channel.config().ok_or_else(|| Error::NotApplicable("channel carries no mechanism configuration".into()))?;
    if channel.kind() != MechanismKind::FullVocab {
        return Err(Error::NotApplicable(
            "the ratio guarantee only holds within shared candidate sets (adjacency kind)".into(),
        ));
    }
    if embeddings.len() < channel.n_inputs() {
        return Err(Error::Config("embeddings do not cover the channel inputs".into()));
    }
    let dense: Vec<Vec<f64>> = (0..channel.n_inputs())
        .map(|x| {
            let mut row = vec![f64::NEG_INFINITY; channel.n_outputs()];
            let x = TokenId::from(x);
            for (y, lp) in channel.candidates(x).iter().zip(channel.logprobs(x)) {
                row[y.index()] = *lp;
            }
            row
        })
        .collect();
    let margin = (0..dense.len())
        .into_par_iter()
        .map(|x1| {
            let mut worst = f64::NEG_INFINITY;
            for x2 in 0..dense.len() {
                let bound =
                    config.epsilon * embeddings.distance_with(config.metric, TokenId::from(x1), TokenId::from(x2));
                for (a, b) in dense[x1].iter().zip(&dense[x2]) {
                    let m = if *a == f64::NEG_INFINITY {
                        continue;
                    } else if *b == f64::NEG_INFINITY {
                        f64::INFINITY
                    } else {
                        a - b - bound
                    };
                    worst = worst.max(m);
                }
            }
            worst
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(margin)
}
