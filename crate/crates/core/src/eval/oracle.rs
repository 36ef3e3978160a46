use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::joint::JointDistribution;
use crate::attack::reconstruct_context_free;
use crate::context::reconstruct_contextual;
use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::rng::replication_seed;

/// Largest number of deterministic strategies the oracle will enumerate.
pub const SEARCH_LIMIT: u64 = 10_000_000;

/// Two values closer than this count as equal in optimality checks.
pub const OPTIMALITY_TOLERANCE: f64 = 1e-12;

/// `weights[o][x] = Pr(x, o)` for every observation `o`: outputs `y` in the
/// context-free case, `(y, c)` pairs (y-major) in the contextual case.
fn observation_weights(joint: &JointDistribution, contextual: bool) -> Vec<Vec<f64>> {
    let (nx, ny, nc) = (joint.nx(), joint.ny(), joint.nc());
    let mut out = Vec::new();
    for y in 0..ny {
        if contextual {
            for c in 0..nc {
                out.push((0..nx).map(|x| joint.prob(x, y, c)).collect());
            }
        } else {
            out.push((0..nx).map(|x| joint.px[x] * joint.channel[x][y]).collect());
        }
    }
    out
}

fn accuracy(weights: &[Vec<f64>], strategy: &[usize]) -> f64 {
    weights.iter().zip(strategy).fold(0.0, |acc, (w, &x)| acc + w[x])
}

/// Expected accuracy of a deterministic strategy, one input index per
/// observation in the order used by [`enumerate_best_strategy`].
pub fn expected_accuracy(joint: &JointDistribution, contextual: bool, strategy: &[usize]) -> f64 {
    accuracy(&observation_weights(joint, contextual), strategy)
}

/// Maximum expected accuracy over every deterministic strategy, found by
/// exhaustive enumeration.
pub fn enumerate_best_strategy(joint: &JointDistribution, contextual: bool) -> Result<f64> {
    let weights = observation_weights(joint, contextual);
    let nx = joint.nx();
    let n_obs = weights.len();
    let size = (nx as f64).powi(n_obs as i32);
    if size > SEARCH_LIMIT as f64 {
        return Err(Error::SearchSpaceTooLarge { size, limit: SEARCH_LIMIT });
    }
    let mut digits = vec![0usize; n_obs];
    let mut prefix = vec![0.0; n_obs + 1];
    for j in 0..n_obs {
        prefix[j + 1] = prefix[j] + weights[j][0];
    }
    let mut best = prefix[n_obs];
    loop {
        let mut j = n_obs;
        loop {
            if j == 0 {
                return Ok(best);
            }
            j -= 1;
            digits[j] += 1;
            if digits[j] < nx {
                break;
            }
            digits[j] = 0;
        }
        for t in j..n_obs {
            prefix[t + 1] = prefix[t] + weights[t][digits[t]];
        }
        best = best.max(prefix[n_obs]);
    }
}

/// The context-free attack's choice for every output, exact prior.
/// Unreachable outputs contribute nothing and map to input 0.
pub fn context_free_strategy(joint: &JointDistribution) -> Result<Vec<usize>> {
    let channel = joint.to_channel()?;
    let prior = joint.prior()?;
    (0..joint.ny())
        .map(|y| {
            let y = TokenId::from(y);
            match reconstruct_context_free(y, &channel, &prior) {
                Ok(x) => Ok(x.index()),
                Err(Error::UnreachableOutput(_)) => Ok(0),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// The contextual attack's choice for every `(y, c)` with the exact prior
/// and the table scorer.
pub fn contextual_strategy(joint: &JointDistribution, k: usize) -> Result<Vec<usize>> {
    let channel = joint.to_channel()?;
    let prior = joint.prior()?;
    let scorer = joint.exact_scorer()?;
    let inputs = joint.input_vocab();
    let mut out = Vec::with_capacity(joint.ny() * joint.nc());
    for y in 0..joint.ny() {
        let y = TokenId::from(y);
        for c in 0..joint.nc() {
            let window = joint.window(y, c);
            out.push(match reconstruct_contextual(y, &window, &channel, &prior, &scorer, k, &inputs) {
                Ok(x) => x.index(),
                Err(Error::UnreachableOutput(_)) => 0,
                Err(e) => return Err(e),
            });
        }
    }
    Ok(out)
}

/// Expected ASR of the context-free attack.
pub fn expected_context_free_asr(joint: &JointDistribution) -> Result<f64> {
    Ok(expected_accuracy(joint, false, &context_free_strategy(joint)?))
}

/// Expected ASR of the contextual attack with candidate size `k`.
pub fn expected_contextual_asr(joint: &JointDistribution, k: usize) -> Result<f64> {
    Ok(expected_accuracy(joint, true, &contextual_strategy(joint, k)?))
}

/// Outcome of one optimality check.
#[derive(Clone, Debug, Serialize)]
pub struct OracleTrial {
    pub trial: usize,
    pub attack: f64,
    pub best: f64,
    /// Context-free expected ASR, present for contextual trials.
    pub context_free: Option<f64>,
    pub optimal: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    pub trials: usize,
    pub optimal: usize,
    pub max_gap: f64,
    pub results: Vec<OracleTrial>,
}

/// Checks the attack against enumeration on `trials` random joints with
/// `|X| = |Y| = vocab_size` and, when `context_size > 0`, `|C| = context_size`.
pub fn run_oracle(vocab_size: usize, context_size: usize, trials: usize, seed: u64) -> Result<OracleSummary> {
    if vocab_size == 0 || trials == 0 {
        return Err(Error::Config("vocab size and trials must be positive".into()));
    }
    let contextual = context_size > 0;
    let results: Vec<OracleTrial> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, trial));
            let joint = JointDistribution::random(&mut rng, vocab_size, vocab_size, context_size.max(1));
            let best = enumerate_best_strategy(&joint, contextual)?;
            let (attack, context_free) = if contextual {
                let cf = expected_accuracy(&joint, true, &expand(&context_free_strategy(&joint)?, joint.nc()));
                (expected_contextual_asr(&joint, joint.nx())?, Some(cf))
            } else {
                (expected_context_free_asr(&joint)?, None)
            };
            let optimal = (attack - best).abs() <= OPTIMALITY_TOLERANCE
                && context_free.is_none_or(|cf| attack + OPTIMALITY_TOLERANCE >= cf);
            Ok(OracleTrial { trial, attack, best, context_free, optimal })
        })
        .collect::<Result<_>>()?;
    let optimal = results.iter().filter(|r| r.optimal).count();
    let max_gap = results.iter().map(|r| (r.attack - r.best).abs()).fold(0.0, f64::max);
    Ok(OracleSummary { trials, optimal, max_gap, results })
}

/// Repeats each per-output choice for every context value.
pub fn expand(strategy: &[usize], nc: usize) -> Vec<usize> {
    strategy.iter().flat_map(|&x| std::iter::repeat_n(x, nc)).collect()
}
