//! HTTP client for an NLI inference service.
//!
//! Wire protocol: `POST {endpoint}/nli/score` with
//! `{"pairs": [{"premise": str, "hypothesis": str}, ...]}`, answered by
//! `{"scores": [{"entailment": f, "neutral": f, "contradiction": f}, ...]}`
//! in positional correspondence.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{check_pairs, Backend, BackendError, EntailmentScore, PremiseHypothesisPair};

pub const SCORE_PATH: &str = "/nli/score";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirePair {
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub pairs: Vec<WirePair>,
}

/// Response body. Scores are parsed unvalidated so that a bad triple can be
/// reported with its position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<RawTriple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawTriple {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl From<EntailmentScore> for RawTriple {
    fn from(s: EntailmentScore) -> Self {
        RawTriple {
            entailment: s.entailment(),
            neutral: s.neutral(),
            contradiction: s.contradiction(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub batch_size: usize,
    pub timeout: Duration,
    /// Chunks in flight at once.
    pub concurrency: usize,
    /// Attempts per chunk on transport failure.
    pub attempts: usize,
    /// Delay before the first retry; doubled for each further retry.
    pub backoff: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            batch_size: 32,
            timeout: Duration::from_secs(60),
            concurrency: 1,
            attempts: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

pub struct RemoteBackend {
    url: Url,
    config: RemoteConfig,
    agent: ureq::Agent,
}

enum Failure {
    Retryable(String),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(endpoint: &str, batch_size: usize, timeout: Duration) -> Result<Self, BackendError> {
        Self::with_config(
            endpoint,
            RemoteConfig {
                batch_size,
                timeout,
                ..RemoteConfig::default()
            },
        )
    }

    pub fn with_config(endpoint: &str, config: RemoteConfig) -> Result<Self, BackendError> {
        let invalid = || BackendError::InvalidEndpoint(endpoint.to_string());
        if config.batch_size == 0 || config.attempts == 0 {
            return Err(invalid());
        }
        let with_scheme = if endpoint.contains("://") {
            endpoint.to_string()
        } else {
            format!("http://{endpoint}")
        };
        let base = Url::parse(&with_scheme).map_err(|_| invalid())?;
        if !matches!(base.scheme(), "http" | "https") || base.host_str().is_none() {
            return Err(invalid());
        }
        let url = base
            .join(&format!("{}{}", base.path().trim_end_matches('/'), SCORE_PATH))
            .map_err(|_| invalid())?;
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Ok(RemoteBackend { url, config, agent })
    }

    pub fn url(&self) -> &Url {
        &self.url
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn score_chunk(&self, chunk: usize, pairs: &[PremiseHypothesisPair]) -> Result<Vec<EntailmentScore>, BackendError> {
        let request = ScoreRequest {
            pairs: pairs
                .iter()
                .map(|p| WirePair {
                    premise: p.premise.clone(),
                    hypothesis: p.hypothesis.clone(),
                })
                .collect(),
        };
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post(chunk, &request, pairs.len()) {
                Ok(scores) => return Ok(scores),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(message)) => {
                    if attempt >= self.config.attempts {
                        return Err(BackendError::Transport {
                            chunk,
                            attempts: attempt,
                            message,
                        });
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }

    fn post(&self, chunk: usize, request: &ScoreRequest, expected: usize) -> Result<Vec<EntailmentScore>, Failure> {
        let malformed = |message: String| Failure::Fatal(BackendError::Malformed { chunk, message });
        let response = match self.agent.post(self.url.as_str()).send_json(request) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) if code >= 500 => {
                let body = r.into_string().unwrap_or_default();
                return Err(Failure::Retryable(format!("HTTP {code}: {body}")));
            }
            Err(ureq::Error::Status(code, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(malformed(format!("service rejected request with HTTP {code}: {body}")));
            }
            Err(e @ ureq::Error::Transport(_)) => return Err(Failure::Retryable(e.to_string())),
        };
        let body: ScoreResponse = response
            .into_json()
            .map_err(|e| malformed(format!("undecodable body: {e}")))?;
        if body.scores.len() != expected {
            return Err(malformed(format!("expected {expected} scores, got {}", body.scores.len())));
        }
        body.scores
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                EntailmentScore::new(t.entailment, t.neutral, t.contradiction)
                    .map_err(|e| malformed(format!("score {i}: {e}")))
            })
            .collect()
    }
}

impl Backend for RemoteBackend {
    fn score_batch(&self, pairs: &[PremiseHypothesisPair]) -> Result<Vec<EntailmentScore>, BackendError> {
        check_pairs(pairs)?;
        let chunks: Vec<&[PremiseHypothesisPair]> = pairs.chunks(self.config.batch_size).collect();
        let workers = self.config.concurrency.clamp(1, chunks.len());
        let results: Vec<Result<Vec<EntailmentScore>, BackendError>> = if workers == 1 {
            chunks
                .iter()
                .enumerate()
                .map(|(i, c)| self.score_chunk(i, c))
                .collect()
        } else {
            let mut slots: Vec<Option<Result<Vec<EntailmentScore>, BackendError>>> =
                (0..chunks.len()).map(|_| None).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let chunks = &chunks;
                        scope.spawn(move || {
                            (w..chunks.len())
                                .step_by(workers)
                                .map(|i| (i, self.score_chunk(i, chunks[i])))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    for (i, r) in h.join().expect("chunk worker panicked") {
                        slots[i] = Some(r);
                    }
                }
            });
            slots.into_iter().map(|s| s.expect("every chunk scored")).collect()
        };
        let mut out = Vec::with_capacity(pairs.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("remote({}, batch_size={})", self.url, self.config.batch_size)
    }
}
