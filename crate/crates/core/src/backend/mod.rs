//! Entailment scoring backends.
//!
//! Every backend maps an ordered batch of (premise, hypothesis) pairs to one
//! [`EntailmentScore`] per pair, in input order. Scores are validated on the way
//! in and never renormalized.

mod fixture;
mod lexical;
mod remote;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{FixtureBackend, FixtureEntry, MissPolicy};
pub use lexical::LexicalBackend;
pub use remote::{RawTriple, RemoteBackend, RemoteConfig, ScoreRequest, ScoreResponse, WirePair, SCORE_PATH};

/// Tolerance on the sum of the three class probabilities.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("pair {index} has an empty premise or hypothesis")]
    EmptyText { index: usize },
    #[error("invalid entailment score: {0}")]
    InvalidScore(#[from] InvalidScore),
    #[error("fixture has no entry for premise {premise:?} / hypothesis {hypothesis:?}")]
    FixtureMiss { premise: String, hypothesis: String },
    #[error("chunk {chunk}: transport error after {attempts} attempt(s): {message}")]
    Transport {
        chunk: usize,
        attempts: usize,
        message: String,
    },
    #[error("chunk {chunk}: malformed response: {message}")]
    Malformed { chunk: usize, message: String },
    #[error("invalid endpoint `{0}`")]
    InvalidEndpoint(String),
    #[error("fixture file {path}: {message}")]
    FixtureFile { path: String, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvalidScore {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("components sum to {0}, not 1")]
    BadSum(f64),
}

/// Probabilities of the three NLI classes for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScore")]
pub struct EntailmentScore {
    entailment: f64,
    neutral: f64,
    contradiction: f64,
}

#[derive(Deserialize)]
struct RawScore {
    entailment: f64,
    neutral: f64,
    contradiction: f64,
}

impl TryFrom<RawScore> for EntailmentScore {
    type Error = InvalidScore;

    fn try_from(r: RawScore) -> Result<Self, Self::Error> {
        EntailmentScore::new(r.entailment, r.neutral, r.contradiction)
    }
}

impl EntailmentScore {
    pub fn new(entailment: f64, neutral: f64, contradiction: f64) -> Result<Self, InvalidScore> {
        for (name, value) in [
            ("entailment", entailment),
            ("neutral", neutral),
            ("contradiction", contradiction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(InvalidScore::OutOfRange { name, value });
            }
        }
        let sum = entailment + neutral + contradiction;
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(InvalidScore::BadSum(sum));
        }
        Ok(EntailmentScore {
            entailment,
            neutral,
            contradiction,
        })
    }

    pub fn uniform() -> Self {
        EntailmentScore {
            entailment: 1.0 / 3.0,
            neutral: 1.0 / 3.0,
            contradiction: 1.0 / 3.0,
        }
    }

    pub fn entailment(&self) -> f64 {
        self.entailment
    }

    pub fn neutral(&self) -> f64 {
        self.neutral
    }

    pub fn contradiction(&self) -> f64 {
        self.contradiction
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PremiseHypothesisPair {
    pub premise: String,
    pub hypothesis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl PremiseHypothesisPair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        PremiseHypothesisPair {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
            key: None,
        }
    }
}

/// A source of entailment probabilities.
///
/// Implementations must be safe to call from several threads at once and must
/// return exactly one score per input pair, in input order.
pub trait Backend: Send + Sync {
    fn score_batch(&self, pairs: &[PremiseHypothesisPair]) -> Result<Vec<EntailmentScore>, BackendError>;

    /// Short human-readable identity, recorded in run manifests.
    fn describe(&self) -> String;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn score_batch(&self, pairs: &[PremiseHypothesisPair]) -> Result<Vec<EntailmentScore>, BackendError> {
        (**self).score_batch(pairs)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl fmt::Debug for dyn Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Backend({})", self.describe())
    }
}

pub(crate) fn check_pairs(pairs: &[PremiseHypothesisPair]) -> Result<(), BackendError> {
    if pairs.is_empty() {
        return Err(BackendError::EmptyBatch);
    }
    if let Some(index) = pairs
        .iter()
        .position(|p| p.premise.is_empty() || p.hypothesis.is_empty())
    {
        return Err(BackendError::EmptyText { index });
    }
    Ok(())
}

pub fn score_batch(backend: &dyn Backend, pairs: &[PremiseHypothesisPair]) -> Result<Vec<EntailmentScore>, BackendError> {
    backend.score_batch(pairs)
}
