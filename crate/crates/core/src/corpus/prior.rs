use serde::{Deserialize, Serialize};

use super::records::SentenceRecord;
use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};

/// How a [`PriorModel`] turns counts into the mass used by the attacks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// `mass(x) = Pr(x)`; unseen tokens get zero mass.
    Exact,
    /// `mass(x) = Pr(x) + c`, with `c = 1/alpha` unless overridden.
    ShadowSmoothed,
}

/// What `alpha` counts when deriving the default smoothing constant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaKind {
    /// Total token occurrences.
    #[default]
    Occurrences,
    /// Number of distinct tokens that occur.
    Distinct,
}

/// Token prior `Pr(x)` estimated from a corpus or given as a distribution.
#[derive(Clone, Debug)]
pub struct PriorModel {
    probs: Vec<f64>,
    counts: Option<Vec<u64>>,
    alpha: u64,
    mode: PriorMode,
    constant: f64,
}

/// Counts original-token occurrences in `corpus` over `vocab`.
///
/// `alpha` is the total number of occurrences; in shadow-smoothed mode every
/// token receives the extra mass `1/alpha`.
pub fn estimate_prior(corpus: &[SentenceRecord], vocab: &Vocabulary, mode: PriorMode) -> Result<PriorModel> {
    let mut counts = vec![0u64; vocab.len()];
    for record in corpus {
        for token in &record.tokens {
            counts[vocab.require(token)?.index()] += 1;
        }
    }
    PriorModel::from_counts(counts, mode)
}

impl PriorModel {
    pub fn from_counts(counts: Vec<u64>, mode: PriorMode) -> Result<Self> {
        let alpha: u64 = counts.iter().sum();
        if alpha == 0 {
            return Err(Error::EmptyCorpus);
        }
        let probs = counts.iter().map(|&c| c as f64 / alpha as f64).collect();
        let constant = match mode {
            PriorMode::Exact => 0.0,
            PriorMode::ShadowSmoothed => 1.0 / alpha as f64,
        };
        Ok(PriorModel { probs, counts: Some(counts), alpha, mode, constant })
    }

    /// An exact-mode prior from a probability vector (sums to 1 within 1e-9).
    pub fn from_distribution(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("prior probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("prior probabilities sum to {total}, not 1")));
        }
        Ok(PriorModel { probs, counts: None, alpha: 0, mode: PriorMode::Exact, constant: 0.0 })
    }

    pub fn uniform(n: usize) -> Self {
        PriorModel { probs: vec![1.0 / n as f64; n], counts: None, alpha: 0, mode: PriorMode::Exact, constant: 0.0 }
    }

    /// Replaces the smoothing constant with `scale / alpha`. A scale of zero
    /// yields the unsmoothed (exact-mode) prior over the same counts.
    pub fn with_smoothing_scale(self, scale: f64) -> Result<Self> {
        self.with_smoothing(scale, AlphaKind::Occurrences)
    }

    /// Uses the number of distinct observed tokens as `alpha` for the
    /// smoothing constant. Has no effect in exact mode.
    pub fn with_alpha_kind(self, kind: AlphaKind) -> Self {
        if self.mode == PriorMode::ShadowSmoothed {
            self.with_smoothing(1.0, kind).expect("count-based smoothed prior")
        } else {
            self
        }
    }

    /// Sets the smoothing constant to `scale / alpha`, with `alpha` counted
    /// as `kind` says. A scale of zero selects exact mode.
    pub fn with_smoothing(mut self, scale: f64, kind: AlphaKind) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("smoothing scale must be >= 0, got {scale}")));
        }
        if self.alpha == 0 {
            return Err(Error::Config("smoothing needs a count-based prior".into()));
        }
        let alpha = match kind {
            AlphaKind::Occurrences => self.alpha,
            AlphaKind::Distinct => self.distinct() as u64,
        };
        if scale == 0.0 {
            self.mode = PriorMode::Exact;
            self.constant = 0.0;
        } else {
            self.mode = PriorMode::ShadowSmoothed;
            self.constant = scale / alpha as f64;
        }
        Ok(self)
    }

    pub fn mode(&self) -> PriorMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Total token occurrences, or 0 for a distribution-backed prior.
    pub fn alpha(&self) -> u64 {
        self.alpha
    }

    pub fn count(&self, x: TokenId) -> Option<u64> {
        self.counts.as_ref().map(|c| c[x.index()])
    }

    /// Number of tokens with non-zero probability.
    pub fn distinct(&self) -> usize {
        self.probs.iter().filter(|p| **p > 0.0).count()
    }

    pub fn smoothing_constant(&self) -> f64 {
        self.constant
    }

    /// `Pr(x)` without smoothing.
    pub fn probability(&self, x: TokenId) -> f64 {
        self.probs[x.index()]
    }

    /// The mass the attacks multiply into their scores.
    pub fn mass(&self, x: TokenId) -> f64 {
        self.probs[x.index()] + self.constant
    }

    pub fn log_mass(&self, x: TokenId) -> f64 {
        self.mass(x).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use proptest::prelude::*;

    fn corpus(lines: &[&str]) -> Vec<SentenceRecord> {
        lines.iter().enumerate().map(|(i, l)| SentenceRecord::new(i as u64, tokenize(l, false))).collect()
    }

    #[test]
    fn exact_counts() {
        let vocab = Vocabulary::new(["a", "b", "c"]).unwrap();
        let p = estimate_prior(&corpus(&["a b a", "c a"]), &vocab, PriorMode::Exact).unwrap();
        assert_eq!(p.alpha(), 5);
        assert_eq!(p.probability(TokenId(0)), 3.0 / 5.0);
        assert_eq!(p.probability(TokenId(1)), 1.0 / 5.0);
        assert_eq!(p.mass(TokenId(2)), 1.0 / 5.0);
    }

    #[test]
    fn smoothed_mass() {
        let vocab = Vocabulary::new(["a", "b", "c"]).unwrap();
        let p = estimate_prior(&corpus(&["a b a", "c a"]), &vocab, PriorMode::ShadowSmoothed).unwrap();
        assert!((p.mass(TokenId(0)) - 0.8).abs() < 1e-15);
        assert!((p.mass(TokenId(2)) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn unseen_token_gets_positive_mass() {
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        let p = estimate_prior(&corpus(&["a a"]), &vocab, PriorMode::ShadowSmoothed).unwrap();
        assert_eq!(p.mass(TokenId(1)), 0.5);
        let exact = p.clone().with_smoothing_scale(0.0).unwrap();
        assert_eq!(exact.mass(TokenId(1)), 0.0);
        assert_eq!(exact.log_mass(TokenId(1)), f64::NEG_INFINITY);
    }

    #[test]
    fn unknown_token_is_rejected() {
        let vocab = Vocabulary::new(["a"]).unwrap();
        let err = estimate_prior(&corpus(&["a q"]), &vocab, PriorMode::Exact).unwrap_err();
        assert!(err.to_string().contains("`q`"));
    }

    #[test]
    fn smoothing_scale_and_distinct_alpha() {
        let vocab = Vocabulary::new(["a", "b", "c"]).unwrap();
        let p = estimate_prior(&corpus(&["a b a", "c a"]), &vocab, PriorMode::ShadowSmoothed).unwrap();
        let p5 = p.clone().with_smoothing_scale(5.0).unwrap();
        assert!((p5.smoothing_constant() - 1.0).abs() < 1e-15);
        let pd = p.clone().with_alpha_kind(AlphaKind::Distinct);
        assert!((pd.smoothing_constant() - 1.0 / 3.0).abs() < 1e-15);
        let pd2 = p.with_smoothing(2.0, AlphaKind::Distinct).unwrap();
        assert!((pd2.smoothing_constant() - 2.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn exact_prior_sums_to_one_and_smoothed_is_positive(
            sentences in prop::collection::vec(prop::collection::vec(0usize..6, 1..8), 1..10)
        ) {
            let vocab = Vocabulary::new(["t0", "t1", "t2", "t3", "t4", "t5"]).unwrap();
            let records: Vec<_> = sentences.iter().enumerate().map(|(i, s)| {
                SentenceRecord::new(i as u64, s.iter().map(|t| format!("t{t}")).collect())
            }).collect();
            let exact = estimate_prior(&records, &vocab, PriorMode::Exact).unwrap();
            let total: f64 = vocab.ids().map(|x| exact.mass(x)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);

            let smoothed = estimate_prior(&records, &vocab, PriorMode::ShadowSmoothed).unwrap();
            let floor = 1.0 / smoothed.alpha() as f64;
            for x in vocab.ids() {
                prop_assert!(smoothed.mass(x) >= floor);
            }

            // permutation invariance over sentences and positions
            let mut shuffled: Vec<_> = records.iter().rev().cloned().collect();
            for r in &mut shuffled { r.tokens.reverse(); }
            let again = estimate_prior(&shuffled, &vocab, PriorMode::Exact).unwrap();
            for x in vocab.ids() {
                prop_assert_eq!(again.count(x), exact.count(x));
            }
        }
    }
}
