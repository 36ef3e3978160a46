//! Synthetic corpora with a known generating process.
//!
//! Token `w{i}` has Zipf rank `i`. Each token owns one fixed successor; a
//! sentence starts with a Zipf draw and each later token is the previous
//! token's successor with probability `coherence`, otherwise a fresh Zipf
//! draw. Embeddings are isotropic Gaussians, optionally grouped around
//! `clusters` centers so that each token has a few close neighbors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, SentenceRecord, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    pub dim: usize,
    /// Typical distance between two embeddings is about `scale·√2`.
    pub embedding_scale: f64,
    /// Number of embedding clusters; 0 leaves embeddings unclustered.
    pub clusters: usize,
    /// Spread of a cluster relative to `embedding_scale`.
    pub cluster_spread: f64,
    pub zipf_exponent: f64,
    pub coherence: f64,
    /// Probability that a position is marked sensitive.
    pub sensitive_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 300,
            sentences: 400,
            sentence_len: 12,
            dim: 16,
            embedding_scale: 1.0,
            clusters: 20,
            cluster_spread: 0.5,
            zipf_exponent: 1.0,
            coherence: 0.7,
            sensitive_rate: 1.0,
            seed: 0,
        }
    }
}

pub struct SynthCorpus {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub records: Vec<SentenceRecord>,
    /// The Zipf distribution sentences start from.
    pub zipf: Vec<f64>,
    /// `successor[i]` is the token that tends to follow `w{i}`.
    pub successor: Vec<usize>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.sentences == 0 || self.sentence_len == 0 || self.dim == 0 {
            return Err(Error::Config("synthetic corpus sizes must be positive (vocabulary >= 2)".into()));
        }
        if !(self.embedding_scale > 0.0 && self.embedding_scale.is_finite()) {
            return Err(Error::Config("embedding scale must be positive".into()));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::Config("cluster spread must be positive".into()));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Config("zipf exponent must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.coherence) || !(0.0..=1.0).contains(&self.sensitive_rate) {
            return Err(Error::Config("coherence and sensitive rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let n = config.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = Vocabulary::new((0..n).map(|i| format!("w{i}")))?;

    let sd = config.embedding_scale / (config.dim as f64).sqrt();
    let normal = Normal::new(0.0, sd).expect("positive sd");
    let vectors = if config.clusters == 0 {
        (0..n).map(|_| (0..config.dim).map(|_| normal.sample(&mut rng)).collect()).collect()
    } else {
        let centers: Vec<Vec<f64>> =
            (0..config.clusters).map(|_| (0..config.dim).map(|_| normal.sample(&mut rng)).collect()).collect();
        let spread = Normal::new(0.0, sd * config.cluster_spread).expect("positive sd");
        (0..n)
            .map(|_| {
                let center = &centers[rng.random_range(0..config.clusters)];
                center.iter().map(|c| c + spread.sample(&mut rng)).collect()
            })
            .collect()
    };
    let embeddings = EmbeddingTable::from_vectors(vectors)?;

    let zipf_dist = Zipf::new(n as f64, config.zipf_exponent).map_err(|e| Error::Config(e.to_string()))?;
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-config.zipf_exponent)).collect();
    let total: f64 = weights.iter().sum();
    let zipf = weights.iter().map(|w| w / total).collect();
    let successor: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();

    let draw = |rng: &mut ChaCha8Rng| (zipf_dist.sample(rng) as usize).clamp(1, n) - 1;
    let mut records = Vec::with_capacity(config.sentences);
    for id in 0..config.sentences {
        let mut ids = Vec::with_capacity(config.sentence_len);
        ids.push(draw(&mut rng));
        while ids.len() < config.sentence_len {
            let prev = *ids.last().expect("non-empty");
            let next = if rng.random::<f64>() < config.coherence { successor[prev] } else { draw(&mut rng) };
            ids.push(next);
        }
        let mask = (0..config.sentence_len).map(|_| rng.random::<f64>() < config.sensitive_rate).collect();
        let tokens = ids.iter().map(|&i| vocab.tokens()[i].clone()).collect();
        records.push(SentenceRecord::with_mask(id as u64, tokens, mask)?);
    }
    Ok(SynthCorpus { vocab, embeddings, records, zipf, successor })
}
