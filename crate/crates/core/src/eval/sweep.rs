use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::asr::{attack_dataset, AsrCount, AsrReport, Attack};
use crate::context::{
    build_detector_samples, ngram_train, ConstantScorer, ContextScorer, DetectorClient, DetectorScorer,
    DETECTOR_URL_ENV,
};
use crate::corpus::{estimate_prior, read_corpus, AlphaKind, EmbeddingTable, PriorMode, SentenceRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::mechanism::{
    build_channel, sanitize_corpus, Channel, MechanismConfig, MechanismKind, DEFAULT_ADJACENCY_SIZE,
};
use crate::rng::{derive_seed, replication_seed};

const SPLIT_STREAM: u64 = 1;
const MISALIGNED_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

/// Default number of detector training epochs.
pub const DETECTOR_EPOCHS: u32 = 3;
/// Default detector learning rate.
pub const DETECTOR_LEARNING_RATE: f64 = 5e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMethod {
    /// Context-free attack with the exact prior (the context-free bound).
    Optimal,
    /// Contextual attack with the exact prior (the contextual `K` bound).
    ContextualBound,
    /// Context-free attack with the smoothed shadow prior.
    Bayes,
    /// Contextual attack with the smoothed shadow prior.
    ContextualBayes,
    EmbeddingInversion,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Optimal => "optimal",
            AttackMethod::ContextualBound => "contextual-bound",
            AttackMethod::Bayes => "bayes",
            AttackMethod::ContextualBayes => "contextual-bayes",
            AttackMethod::EmbeddingInversion => "embedding-inversion",
        }
    }

    pub fn is_contextual(self) -> bool {
        matches!(self, AttackMethod::ContextualBound | AttackMethod::ContextualBayes)
    }

    pub fn is_smoothed(self) -> bool {
        matches!(self, AttackMethod::Bayes | AttackMethod::ContextualBayes)
    }
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown attack method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    #[default]
    Ngram,
    Constant,
    Detector,
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown scorer {s:?}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShadowSource {
    /// Drawn from the held-out half of the attacked corpus.
    #[default]
    Aligned,
    /// Drawn from a separate corpus file.
    Misaligned(PathBuf),
}

/// How to obtain a context scorer from a shadow corpus.
#[derive(Clone, Debug)]
pub struct ScorerOptions {
    pub kind: ScorerKind,
    pub ngram_order: usize,
    pub ngram_smoothing: f64,
    pub train_replications: usize,
    pub detector_url: Option<String>,
}

impl Default for ScorerOptions {
    fn default() -> Self {
        ScorerOptions {
            kind: ScorerKind::Ngram,
            ngram_order: default_ngram_order(),
            ngram_smoothing: default_ngram_smoothing(),
            train_replications: default_train_replications(),
            detector_url: None,
        }
    }
}

/// Builds a scorer from `shadow`, sanitizing it with `channel` as needed.
pub fn train_scorer(
    options: &ScorerOptions,
    shadow: &[SentenceRecord],
    vocab: &Vocabulary,
    channel: &Channel,
    seed: u64,
) -> Result<Box<dyn ContextScorer>> {
    let seed = derive_seed(seed, TRAIN_STREAM);
    let reps = options.train_replications;
    match options.kind {
        ScorerKind::Constant => Ok(Box::new(ConstantScorer::default())),
        ScorerKind::Ngram => {
            let mut sequences = Vec::new();
            for rep in 0..reps {
                let sanitized = sanitize_corpus(shadow, vocab, channel, replication_seed(seed, rep))?;
                sequences.extend(sanitized.into_iter().filter_map(|r| r.sanitized));
            }
            Ok(Box::new(ngram_train(&sequences, options.ngram_order, options.ngram_smoothing)?))
        }
        ScorerKind::Detector => {
            let url = options
                .detector_url
                .clone()
                .or_else(|| std::env::var(DETECTOR_URL_ENV).ok().filter(|u| !u.is_empty()))
                .ok_or_else(|| Error::Config("the detector scorer needs a detector URL".into()))?;
            let client = DetectorClient::new(&url);
            let prior = estimate_prior(shadow, vocab, PriorMode::ShadowSmoothed)?;
            let samples = build_detector_samples(shadow, vocab, channel, &prior, reps, seed)?;
            let trained = client.train(&samples, DETECTOR_EPOCHS, DETECTOR_LEARNING_RATE)?;
            log::info!("detector model {} trained, accuracy {:.3}", trained.model_id, trained.train_accuracy);
            Ok(Box::new(DetectorScorer::new(client, trained.model_id)))
        }
    }
}

fn default_ks() -> Vec<usize> {
    vec![10]
}
fn default_ratios() -> Vec<f64> {
    vec![1.0]
}
fn default_scales() -> Vec<f64> {
    vec![1.0]
}
fn default_adjacency() -> usize {
    DEFAULT_ADJACENCY_SIZE
}
fn default_mechanism() -> MechanismKind {
    MechanismKind::FullVocab
}
fn default_ngram_order() -> usize {
    2
}
fn default_ngram_smoothing() -> f64 {
    0.1
}
fn default_replications() -> usize {
    30
}
fn default_train_replications() -> usize {
    100
}

/// Experiment grid. Every combination of the lists becomes one report row;
/// `ks` applies to contextual attacks, `smoothing_scales` to smoothed ones,
/// and `shadow_ratios` to attacks that read the shadow corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_mechanism")]
    pub mechanism: MechanismKind,
    #[serde(default = "default_adjacency")]
    pub adjacency_size: usize,
    pub epsilons: Vec<f64>,
    pub attacks: Vec<AttackMethod>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_ratios")]
    pub shadow_ratios: Vec<f64>,
    #[serde(default)]
    pub shadow: ShadowSource,
    /// Multiples of `1/alpha`; 0 disables smoothing.
    #[serde(default = "default_scales")]
    pub smoothing_scales: Vec<f64>,
    #[serde(default)]
    pub alpha: AlphaKind,
    #[serde(default)]
    pub scorer: ScorerKind,
    #[serde(default = "default_ngram_order")]
    pub ngram_order: usize,
    #[serde(default = "default_ngram_smoothing")]
    pub ngram_smoothing: f64,
    /// Sanitizations of the attacked half per cell.
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Sanitizations of the shadow corpus used to train scorers.
    #[serde(default = "default_train_replications")]
    pub train_replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Record wall-clock time per cell; off by default so reports are
    /// reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_url: Option<String>,
}

impl SweepSpec {
    pub fn new(epsilons: Vec<f64>, attacks: Vec<AttackMethod>) -> Self {
        SweepSpec {
            mechanism: default_mechanism(),
            adjacency_size: default_adjacency(),
            epsilons,
            attacks,
            ks: default_ks(),
            shadow_ratios: default_ratios(),
            shadow: ShadowSource::Aligned,
            smoothing_scales: default_scales(),
            alpha: AlphaKind::Occurrences,
            scorer: ScorerKind::Ngram,
            ngram_order: default_ngram_order(),
            ngram_smoothing: default_ngram_smoothing(),
            replications: default_replications(),
            train_replications: default_train_replications(),
            seed: 0,
            timing: false,
            detector_url: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.epsilons.is_empty() || self.attacks.is_empty() || self.ks.is_empty() {
            return fail("epsilons, attacks and ks must be non-empty");
        }
        if self.shadow_ratios.is_empty() || self.smoothing_scales.is_empty() {
            return fail("shadow_ratios and smoothing_scales must be non-empty");
        }
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return fail("epsilons must be positive and finite");
        }
        if self.ks.contains(&0) {
            return fail("ks must be positive");
        }
        if self.shadow_ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return fail("shadow ratios must lie in (0, 1]");
        }
        if self.smoothing_scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return fail("smoothing scales must be non-negative");
        }
        if self.replications == 0 || self.train_replications == 0 {
            return fail("replication counts must be positive");
        }
        if self.mechanism == MechanismKind::Adjacency && self.adjacency_size == 0 {
            return fail("adjacency size must be positive");
        }
        if !(2..=3).contains(&self.ngram_order) || self.ngram_smoothing.is_nan() || self.ngram_smoothing <= 0.0 {
            return fail("n-gram order must be 2 or 3 with a positive smoothing constant");
        }
        Ok(())
    }

    fn uses_shadow(&self, attack: AttackMethod) -> bool {
        attack.is_smoothed() || (attack.is_contextual() && self.scorer != ScorerKind::Constant)
    }

    fn scorer_options(&self) -> ScorerOptions {
        ScorerOptions {
            kind: self.scorer,
            ngram_order: self.ngram_order,
            ngram_smoothing: self.ngram_smoothing,
            train_replications: self.train_replications,
            detector_url: self.detector_url.clone(),
        }
    }

    fn mechanism_config(&self, epsilon: f64) -> MechanismConfig {
        MechanismConfig { adjacency_size: self.adjacency_size, ..MechanismConfig::new(epsilon, self.mechanism) }
            .with_seed(self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub results: Vec<AsrReport>,
}

fn shuffled(records: &[SentenceRecord], seed: u64) -> Vec<SentenceRecord> {
    let mut out: Vec<SentenceRecord> =
        records.iter().map(|r| SentenceRecord { sanitized: None, ..r.clone() }).collect();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

/// Shuffles `corpus` with `seed` and splits it into the attacked half (the
/// first `ceil(n/2)` sentences) and the pool that shadow samples come from.
pub fn split_corpus(corpus: &[SentenceRecord], seed: u64) -> Result<(Vec<SentenceRecord>, Vec<SentenceRecord>)> {
    if corpus.len() < 2 {
        return Err(Error::Config("splitting needs at least two sentences".into()));
    }
    let mut all = shuffled(corpus, derive_seed(seed, SPLIT_STREAM));
    let pool = all.split_off(corpus.len().div_ceil(2));
    Ok((all, pool))
}

/// `round(ratio * private_len)` sentences from the front of `pool`, at least one.
pub fn take_shadow(pool: &[SentenceRecord], ratio: f64, private_len: usize) -> Vec<SentenceRecord> {
    let n = ((ratio * private_len as f64).round() as usize).clamp(1, pool.len());
    pool[..n].to_vec()
}

struct Cell {
    eps: usize,
    attack: AttackMethod,
    k: Option<usize>,
    ratio: Option<usize>,
    smoothing: Option<f64>,
}

fn cells(spec: &SweepSpec) -> Vec<Cell> {
    let mut out = Vec::new();
    for eps in 0..spec.epsilons.len() {
        for &attack in &spec.attacks {
            let ks: Vec<Option<usize>> =
                if attack.is_contextual() { spec.ks.iter().copied().map(Some).collect() } else { vec![None] };
            let ratios: Vec<Option<usize>> =
                if spec.uses_shadow(attack) { (0..spec.shadow_ratios.len()).map(Some).collect() } else { vec![None] };
            let scales: Vec<Option<f64>> = if attack.is_smoothed() {
                spec.smoothing_scales.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for &k in &ks {
                for &ratio in &ratios {
                    for &smoothing in &scales {
                        out.push(Cell { eps, attack, k, ratio, smoothing });
                    }
                }
            }
        }
    }
    out
}

type Shared<T> = std::result::Result<T, String>;

fn shared<T>(r: Result<T>) -> Shared<T> {
    r.map_err(|e| e.to_string())
}

/// Runs every grid cell of `spec` over `corpus`. Failed cells are reported
/// with an `error` field instead of aborting the sweep. Rows follow grid
/// order: epsilon, attack, k, shadow ratio, smoothing scale.
pub fn run_sweep(
    spec: &SweepSpec,
    corpus: &[SentenceRecord],
    vocab: &Vocabulary,
    embeddings: &EmbeddingTable,
) -> Result<SweepReport> {
    spec.validate()?;
    let (private, pool) = split_corpus(corpus, spec.seed)?;
    let pool = match &spec.shadow {
        ShadowSource::Aligned => pool,
        ShadowSource::Misaligned(path) => {
            let other = read_corpus(BufReader::new(File::open(path)?))?;
            shuffled(&other, derive_seed(spec.seed, MISALIGNED_STREAM))
        }
    };
    if pool.is_empty() {
        return Err(Error::Config("no sentences left for the shadow corpus".into()));
    }
    let shadows: Vec<Vec<SentenceRecord>> =
        spec.shadow_ratios.iter().map(|&r| take_shadow(&pool, r, private.len())).collect();
    let exact_prior = shared(estimate_prior(&private, vocab, PriorMode::Exact));

    let channels: Vec<Shared<Channel>> =
        spec.epsilons.par_iter().map(|&e| shared(build_channel(embeddings, &spec.mechanism_config(e)))).collect();

    let sanitized: Vec<Vec<Shared<Vec<SentenceRecord>>>> = channels
        .par_iter()
        .map(|ch| {
            (0..spec.replications)
                .into_par_iter()
                .map(|rep| match ch {
                    Ok(ch) => shared(sanitize_corpus(&private, vocab, ch, replication_seed(spec.seed, rep))),
                    Err(e) => Err(e.clone()),
                })
                .collect()
        })
        .collect();

    let needs_scorer = spec.attacks.iter().any(|a| a.is_contextual());
    let options = spec.scorer_options();
    let scorers: Vec<Vec<Shared<Box<dyn ContextScorer>>>> = channels
        .iter()
        .map(|ch| {
            shadows
                .par_iter()
                .map(|shadow| match ch {
                    _ if !needs_scorer => Err("no contextual attack requested".into()),
                    Ok(ch) => shared(train_scorer(&options, shadow, vocab, ch, spec.seed)),
                    Err(e) => Err(e.clone()),
                })
                .collect()
        })
        .collect();
    let constant = ConstantScorer::default();

    let results = cells(spec)
        .into_par_iter()
        .map(|cell| {
            let epsilon = spec.epsilons[cell.eps];
            let run = || -> Shared<(AsrCount, u64)> {
                let channel = channels[cell.eps].as_ref().map_err(Clone::clone)?;
                let smoothed_prior;
                let prior = if cell.attack.is_smoothed() {
                    let shadow = &shadows[cell.ratio.expect("smoothed attacks use the shadow")];
                    smoothed_prior = shared(
                        estimate_prior(shadow, vocab, PriorMode::ShadowSmoothed)
                            .and_then(|p| p.with_smoothing(cell.smoothing.unwrap_or(1.0), spec.alpha)),
                    )?;
                    &smoothed_prior
                } else {
                    exact_prior.as_ref().map_err(Clone::clone)?
                };
                let scorer: &dyn ContextScorer = match cell.ratio {
                    Some(r) if cell.attack.is_contextual() => {
                        scorers[cell.eps][r].as_ref().map_err(Clone::clone)?.as_ref()
                    }
                    _ => &constant,
                };
                let attack = match cell.attack {
                    AttackMethod::Optimal | AttackMethod::Bayes => Attack::ContextFree { prior },
                    AttackMethod::ContextualBound | AttackMethod::ContextualBayes => {
                        Attack::Contextual { prior, scorer, k: cell.k.expect("contextual cells carry k") }
                    }
                    AttackMethod::EmbeddingInversion => Attack::EmbeddingInversion { embeddings },
                };
                let mut total = AsrCount::default();
                let mut elapsed = 0;
                for data in &sanitized[cell.eps] {
                    let data = data.as_ref().map_err(Clone::clone)?;
                    let (count, ms) = shared(attack_dataset(data, vocab, channel, attack))?;
                    total = total.merge(count);
                    elapsed += ms;
                }
                Ok((total, elapsed))
            };
            let mut report = match run() {
                Ok((count, elapsed)) => AsrReport {
                    elapsed_ms: if spec.timing { elapsed } else { 0 },
                    ..AsrReport::new(cell.attack.name(), epsilon, spec.seed, count)
                },
                Err(message) => {
                    log::warn!("cell {} at epsilon {epsilon} failed: {message}", cell.attack.name());
                    AsrReport {
                        error: Some(message),
                        ..AsrReport::new(cell.attack.name(), epsilon, spec.seed, AsrCount::default())
                    }
                }
            };
            report.k = cell.k;
            report.shadow_ratio = cell.ratio.map(|r| spec.shadow_ratios[r]);
            report.smoothing = cell.smoothing;
            report
        })
        .collect();
    Ok(SweepReport { spec: spec.clone(), results })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_report_json<W: Write>(mut sink: W, report: &SweepReport) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, report)?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    epsilon: f64,
    k: Option<usize>,
    shadow_ratio: Option<f64>,
    smoothing: Option<f64>,
    asr: f64,
    matched: u64,
    total: u64,
    elapsed_ms: u64,
    seed: u64,
    error: Option<&'a str>,
}

/// One CSV row per result; empty cells for absent values.
pub fn write_report_csv<W: Write>(sink: W, results: &[AsrReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in results {
        w.serialize(CsvRow {
            method: &r.method,
            epsilon: r.epsilon,
            k: r.k,
            shadow_ratio: r.shadow_ratio,
            smoothing: r.smoothing,
            asr: r.asr,
            matched: r.matched,
            total: r.total,
            elapsed_ms: r.elapsed_ms,
            seed: r.seed,
            error: r.error.as_deref(),
        })
        .map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}
