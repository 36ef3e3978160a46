use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::ranked_candidates;
use crate::corpus::{PriorModel, SentenceRecord, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::mechanism::{sanitize_corpus, Channel};
use crate::rng::replication_seed;

/// Detector training pair `(f(c, y), f(c, x'))` with label 1 iff `x'` is
/// the original token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSample {
    pub seq_a: Vec<String>,
    pub seq_b: Vec<String>,
    pub label: u8,
}

/// Sanitizes `shadow` `replications` times and emits, per sensitive
/// position, the context-free guess sample plus a partner with the opposite
/// label: the second-ranked candidate when the guess is right, the true
/// original when it is wrong. Label counts are therefore equal.
///
/// Output order is replication-major, then sentence, then position.
pub fn build_detector_samples(
    shadow: &[SentenceRecord],
    vocab: &Vocabulary,
    channel: &Channel,
    prior: &PriorModel,
    replications: usize,
    seed: u64,
) -> Result<Vec<DetectorSample>> {
    if replications == 0 {
        return Err(Error::Config("replications must be positive".into()));
    }
    if channel.n_inputs() < 2 {
        return Err(Error::InsufficientCandidates(format!(
            "{} input token(s); a paired negative needs at least 2",
            channel.n_inputs()
        )));
    }
    let mut out = Vec::new();
    for rep in 0..replications {
        let sanitized = sanitize_corpus(shadow, vocab, channel, replication_seed(seed, rep))?;
        let per_sentence: Vec<Vec<DetectorSample>> =
            sanitized.par_iter().map(|r| sentence_samples(r, vocab, channel, prior)).collect::<Result<_>>()?;
        out.extend(per_sentence.into_iter().flatten());
    }
    Ok(out)
}

fn sentence_samples(
    record: &SentenceRecord,
    vocab: &Vocabulary,
    channel: &Channel,
    prior: &PriorModel,
) -> Result<Vec<DetectorSample>> {
    let sanitized = record.sanitized.as_ref().expect("sanitized record");
    let mut out = Vec::new();
    for i in record.sensitive_positions() {
        let y = vocab.require(&sanitized[i])?;
        let original = vocab.require(&record.tokens[i])?;
        let ranked = ranked_candidates(y, channel, prior);
        if !ranked[0].reachable {
            return Err(Error::UnreachableOutput(y));
        }
        let guess = ranked[0].token;
        let with = |t: TokenId, label: u8| {
            let mut seq_b = sanitized.clone();
            seq_b[i] = vocab.token(t).to_owned();
            DetectorSample { seq_a: sanitized.clone(), seq_b, label }
        };
        if guess == original {
            out.push(with(guess, 1));
            out.push(with(ranked[1].token, 0));
        } else {
            out.push(with(guess, 0));
            out.push(with(original, 1));
        }
    }
    Ok(out)
}

pub fn write_detector_samples<W: Write>(mut sink: W, samples: &[DetectorSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut sink, s)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_detector_samples<R: BufRead>(source: R) -> Result<Vec<DetectorSample>> {
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: DetectorSample =
            serde_json::from_str(&line).map_err(|e| Error::CorpusParse { line: n + 1, message: e.to_string() })?;
        if sample.label > 1 {
            return Err(Error::CorpusParse { line: n + 1, message: format!("label {} is not 0 or 1", sample.label) });
        }
        out.push(sample);
    }
    Ok(out)
}
