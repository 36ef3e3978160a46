use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{ContextScorer, ContextWindow, DetectorSample};
use crate::error::{Error, Result};

/// Environment variable overriding the detector base URL.
pub const DETECTOR_URL_ENV: &str = "TEXTRECON_DETECTOR_URL";

/// Largest number of pairs sent in one `/score` request.
pub const MAX_SCORE_BATCH: usize = 256;

const PAYLOAD_TOO_LARGE: u16 = 413;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct TrainResponse {
    pub model_id: String,
    pub train_accuracy: f64,
}

#[derive(Serialize)]
struct TrainRequest<'a> {
    samples: &'a [DetectorSample],
    epochs: u32,
    learning_rate: f64,
}

#[derive(Serialize)]
struct Pair<'a> {
    seq_a: &'a [String],
    seq_b: &'a [String],
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    model_id: &'a str,
    pairs: &'a [Pair<'a>],
}

#[derive(Deserialize)]
struct ScoreResponse {
    probs: Vec<f64>,
}

/// HTTP client for the detector service.
#[derive(Clone, Debug)]
pub struct DetectorClient {
    base: String,
    agent: Agent,
}

impl DetectorClient {
    pub fn new(base_url: &str) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        DetectorClient { base: base_url.trim_end_matches('/').to_owned(), agent }
    }

    /// Uses `$TEXTRECON_DETECTOR_URL` when set, `fallback` otherwise.
    pub fn from_env_or(fallback: &str) -> Self {
        match std::env::var(DETECTOR_URL_ENV) {
            Ok(url) if !url.is_empty() => Self::new(&url),
            _ => Self::new(fallback),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn unreachable(&self, path: &str, e: ureq::Error) -> Error {
        Error::Scorer(format!("detector unreachable at {}: {e}", self.url(path)))
    }

    fn failure(path: &str, status: u16, resp: &mut ureq::http::Response<ureq::Body>) -> Error {
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        Error::Scorer(format!("detector {path} returned {status}: {}", body.trim()))
    }

    fn post<T: Serialize>(&self, path: &str, body: &T) -> Result<ureq::http::Response<ureq::Body>> {
        self.agent.post(&self.url(path)).send_json(body).map_err(|e| self.unreachable(path, e))
    }

    fn get_status(&self, path: &str) -> Result<u16> {
        let resp = self.agent.get(&self.url(path)).call().map_err(|e| self.unreachable(path, e))?;
        Ok(resp.status().as_u16())
    }

    /// Liveness: true when `/health` answers 200.
    pub fn health(&self) -> Result<bool> {
        Ok(self.get_status("/health")? == 200)
    }

    /// Readiness: true once a model has been trained.
    pub fn ready(&self) -> Result<bool> {
        Ok(self.get_status("/ready")? == 200)
    }

    pub fn train(&self, samples: &[DetectorSample], epochs: u32, learning_rate: f64) -> Result<TrainResponse> {
        let mut resp = self.post("/train", &TrainRequest { samples, epochs, learning_rate })?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Self::failure("/train", status, &mut resp));
        }
        resp.body_mut().read_json().map_err(|e| Error::Scorer(format!("malformed /train response: {e}")))
    }

    /// One `/score` request. `Ok(None)` means the batch was too large.
    fn score_batch(&self, model_id: &str, pairs: &[Pair<'_>]) -> Result<Option<Vec<f64>>> {
        let mut resp = self.post("/score", &ScoreRequest { model_id, pairs })?;
        let status = resp.status().as_u16();
        if status == PAYLOAD_TOO_LARGE {
            return Ok(None);
        }
        if status != 200 {
            return Err(Self::failure("/score", status, &mut resp));
        }
        let parsed: ScoreResponse =
            resp.body_mut().read_json().map_err(|e| Error::Scorer(format!("malformed /score response: {e}")))?;
        if parsed.probs.len() != pairs.len() {
            return Err(Error::Scorer(format!(
                "detector returned {} probabilities for {} pairs",
                parsed.probs.len(),
                pairs.len()
            )));
        }
        if let Some(p) = parsed.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Scorer(format!("detector probability {p} outside [0, 1]")));
        }
        Ok(Some(parsed.probs))
    }
}

/// Context scorer backed by a trained remote detector: the score of `x'` is
/// the detector's label-1 probability for `(f(c, y), f(c, x'))`.
#[derive(Debug)]
pub struct DetectorScorer {
    client: DetectorClient,
    model_id: String,
    batch: AtomicUsize,
}

impl DetectorScorer {
    pub fn new(client: DetectorClient, model_id: impl Into<String>) -> Self {
        DetectorScorer { client, model_id: model_id.into(), batch: AtomicUsize::new(MAX_SCORE_BATCH) }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Current request size; shrinks after the service answers 413.
    pub fn batch_size(&self) -> usize {
        self.batch.load(Ordering::Relaxed)
    }

    /// Scores `(seq_a, seq_b)` pairs in request order.
    pub fn score_pairs(&self, pairs: &[(Vec<String>, Vec<String>)]) -> Result<Vec<f64>> {
        let pairs: Vec<Pair<'_>> = pairs.iter().map(|(a, b)| Pair { seq_a: a, seq_b: b }).collect();
        let mut out = Vec::with_capacity(pairs.len());
        let mut start = 0;
        while start < pairs.len() {
            let size = self.batch_size().min(pairs.len() - start);
            match self.client.score_batch(&self.model_id, &pairs[start..start + size])? {
                Some(probs) => {
                    out.extend(probs);
                    start += size;
                }
                None if size > 1 => {
                    self.batch.fetch_min(size / 2, Ordering::Relaxed);
                    log::debug!("detector rejected {size} pairs, retrying with {}", size / 2);
                }
                None => return Err(Error::Scorer("detector rejected a single-pair request as too large".into())),
            }
        }
        Ok(out)
    }
}

impl ContextScorer for DetectorScorer {
    fn score(&self, window: &ContextWindow, candidate: &str, observed: &str) -> Result<f64> {
        Ok(self.score_many(window, &[candidate], observed)?[0])
    }

    fn score_many(&self, window: &ContextWindow, candidates: &[&str], _observed: &str) -> Result<Vec<f64>> {
        let seq_a = window.sentence().to_vec();
        let pairs: Vec<_> = candidates.iter().map(|c| (seq_a.clone(), window.substitute(c))).collect();
        self.score_pairs(&pairs)
    }
}
