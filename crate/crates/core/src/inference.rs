//! Relation scoring, argmax classification, no-relation detection and
//! threshold tuning.
//!
//! A relation's score is its type gate times the best entailment probability
//! over its templates:
//!
//! ```text
//! P_r = δ_r(subj_type, obj_type) · max_{t ∈ T_r} P_entail(premise, verbalize(t, subj, obj))
//! ```
//!
//! and the predicted label is the highest-scoring relation, subject to one of
//! two no-relation strategies (see [`NorelMode`]).
//!
//! Ties are broken deterministically: between templates of one relation the
//! earlier template wins; between labels the lexicographically smaller label
//! wins. In threshold mode a relation is emitted iff its score is `>=` the
//! threshold.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, EntailmentScore, PremiseHypothesisPair};
use crate::evaluator::{DevScore, Prf};
use crate::schema::{RelationSchema, TemplateId};
use crate::verbalizer::{hypotheses_for, mention_text, premise_of, verbalize, Argument, RelationExample};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("template-based no-relation detection needs a norel_template in the schema")]
    MissingNorelTemplate,
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("batch size must be positive")]
    InvalidBatchSize,
    #[error("no development scores to tune on")]
    EmptyDevScores,
    #[error("example `{id}`: {source}")]
    Example {
        id: String,
        #[source]
        source: Box<InferenceError>,
    },
}

/// How the no-relation label is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NorelMode {
    /// Predict no-relation unless the best relation score reaches the threshold.
    #[default]
    Threshold,
    /// Score the schema's no-relation template as one more candidate that is
    /// never type-gated, and take the overall argmax.
    Template,
}

#[derive(Clone)]
pub struct InferenceConfig {
    pub norel_mode: NorelMode,
    pub threshold: f64,
    /// Pairs per backend call.
    pub batch_size: usize,
    /// Threads used by [`classify_batch`]; 1 keeps everything on the caller's thread.
    pub workers: usize,
    pub backend: Arc<dyn Backend>,
}

impl std::fmt::Debug for InferenceConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InferenceConfig")
            .field("norel_mode", &self.norel_mode)
            .field("threshold", &self.threshold)
            .field("batch_size", &self.batch_size)
            .field("workers", &self.workers)
            .field("backend", &self.backend.describe())
            .finish()
    }
}

impl InferenceConfig {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        InferenceConfig {
            norel_mode: NorelMode::Threshold,
            threshold: DEFAULT_THRESHOLD,
            batch_size: DEFAULT_BATCH_SIZE,
            workers: 1,
            backend,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_norel_mode(mut self, mode: NorelMode) -> Self {
        self.norel_mode = mode;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn validate(&self, schema: &RelationSchema) -> Result<(), InferenceError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(InferenceError::InvalidThreshold(self.threshold));
        }
        if self.batch_size == 0 {
            return Err(InferenceError::InvalidBatchSize);
        }
        if self.norel_mode == NorelMode::Template && schema.norel_template().is_none() {
            return Err(InferenceError::MissingNorelTemplate);
        }
        Ok(())
    }
}

/// Score of one relation and the template that achieved it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    pub score: f64,
    pub template: Option<TemplateId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub label: String,
    pub score: f64,
    /// Scores of the relations admitted by the type gate. Gated-out relations
    /// score 0 by definition and are omitted.
    pub per_relation: BTreeMap<String, RelationScore>,
    /// Entailment probability of the no-relation template (template mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norel_score: Option<f64>,
}

impl Prediction {
    /// Highest-scoring positive relation under the label tie-break.
    pub fn best_positive(&self) -> Option<(&str, f64)> {
        argmax(self.per_relation.iter().map(|(l, s)| (l.as_str(), s.score)))
    }

    pub fn is_negative(&self, negative_label: &str) -> bool {
        self.label == negative_label
    }

    /// The view of this prediction needed for threshold tuning.
    pub fn dev_score(&self, gold: &str, negative_label: &str) -> DevScore {
        let best = self.best_positive();
        DevScore {
            max_score: best.map(|(_, s)| s),
            gold_positive: gold != negative_label,
            argmax_correct: best.is_some_and(|(l, _)| l == gold),
        }
    }
}

/// First maximum in iteration order; callers iterate in label order.
fn argmax<'a>(items: impl Iterator<Item = (&'a str, f64)>) -> Option<(&'a str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (label, score) in items {
        match best {
            Some((_, b)) if score <= b => {}
            _ => best = Some((label, score)),
        }
    }
    best
}

/// Score of one relation for one example, and the maximizing template.
///
/// Returns `(0.0, None)` without calling the backend when the type gate
/// rejects the example.
pub fn score_relation(
    example: &RelationExample,
    relation: &str,
    schema: &RelationSchema,
    backend: &dyn Backend,
) -> Result<(f64, Option<TemplateId>), InferenceError> {
    let entry = schema
        .relation(relation)
        .ok_or_else(|| InferenceError::UnknownRelation(relation.to_string()))?;
    if !entry.admits(example.subj_type(), example.obj_type()) {
        return Ok((0.0, None));
    }
    let premise = premise_of(example);
    let pairs: Vec<PremiseHypothesisPair> = hypotheses_for(example, entry)
        .into_iter()
        .map(|h| PremiseHypothesisPair::new(premise.clone(), h.text))
        .collect();
    let scores = backend.score_batch(&pairs)?;
    let best = best_template(entry.templates().iter().map(|t| t.id()).zip(scores.iter()));
    Ok((best.score, best.template))
}

fn best_template<'a>(scored: impl Iterator<Item = (TemplateId, &'a EntailmentScore)>) -> RelationScore {
    let mut best = RelationScore {
        score: 0.0,
        template: None,
    };
    for (id, s) in scored {
        if best.template.is_none() || s.entailment() > best.score {
            best = RelationScore {
                score: s.entailment(),
                template: Some(id),
            };
        }
    }
    best
}

/// Pair requests generated for one example.
struct ExamplePlan {
    premise: String,
    /// (relation, template, hypothesis), in label then template order.
    hypotheses: Vec<(String, TemplateId, String)>,
    norel_hypothesis: Option<String>,
}

fn plan(example: &RelationExample, schema: &RelationSchema, config: &InferenceConfig) -> ExamplePlan {
    let premise = premise_of(example);
    let mut hypotheses = Vec::new();
    for label in schema.candidate_relations(example.subj_type(), example.obj_type()) {
        let entry = schema.relation(label).expect("candidate is in schema");
        for h in hypotheses_for(example, entry) {
            hypotheses.push((h.relation, h.template_id, h.text));
        }
    }
    let norel_hypothesis = match config.norel_mode {
        NorelMode::Template => schema.norel_template().map(|t| {
            verbalize(
                t,
                &mention_text(example, Argument::Subject),
                &mention_text(example, Argument::Object),
            )
        }),
        NorelMode::Threshold => None,
    };
    ExamplePlan {
        premise,
        hypotheses,
        norel_hypothesis,
    }
}

fn decide(
    example_id: &str,
    schema: &RelationSchema,
    config: &InferenceConfig,
    per_relation: BTreeMap<String, RelationScore>,
    norel_score: Option<f64>,
) -> Prediction {
    let negative = schema.negative_label();
    let (label, score) = match config.norel_mode {
        NorelMode::Threshold => {
            match argmax(per_relation.iter().map(|(l, s)| (l.as_str(), s.score))) {
                Some((l, s)) if s >= config.threshold => (l.to_string(), s),
                Some((_, s)) => (negative.to_string(), s),
                None => (negative.to_string(), 0.0),
            }
        }
        NorelMode::Template => {
            let norel = norel_score.expect("template mode scores the no-relation template");
            let mut all: Vec<(&str, f64)> = per_relation.iter().map(|(l, s)| (l.as_str(), s.score)).collect();
            all.push((negative, norel));
            all.sort_by(|a, b| a.0.cmp(b.0));
            let (l, s) = argmax(all.into_iter()).expect("at least the no-relation candidate");
            (l.to_string(), s)
        }
    };
    Prediction {
        example_id: example_id.to_string(),
        label,
        score,
        per_relation,
        norel_score,
    }
}

fn assemble(
    example: &RelationExample,
    schema: &RelationSchema,
    config: &InferenceConfig,
    plan: &ExamplePlan,
    score_of: impl Fn(&str, &str) -> EntailmentScore,
) -> Prediction {
    let mut per_relation: BTreeMap<String, RelationScore> = BTreeMap::new();
    for (relation, template, hypothesis) in &plan.hypotheses {
        let s = score_of(&plan.premise, hypothesis).entailment();
        let slot = per_relation.entry(relation.clone()).or_insert(RelationScore {
            score: s,
            template: Some(*template),
        });
        if s > slot.score {
            *slot = RelationScore {
                score: s,
                template: Some(*template),
            };
        }
    }
    let norel = plan
        .norel_hypothesis
        .as_ref()
        .map(|h| score_of(&plan.premise, h).entailment());
    decide(example.id(), schema, config, per_relation, norel)
}

fn plan_pairs(plan: &ExamplePlan) -> impl Iterator<Item = (&str, &str)> {
    plan.hypotheses
        .iter()
        .map(|(_, _, h)| h.as_str())
        .chain(plan.norel_hypothesis.as_deref())
        .map(move |h| (plan.premise.as_str(), h))
}

fn score_chunked(
    backend: &dyn Backend,
    pairs: &[PremiseHypothesisPair],
    batch_size: usize,
) -> Result<Vec<EntailmentScore>, BackendError> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch_size) {
        out.extend(backend.score_batch(chunk)?);
    }
    Ok(out)
}

/// Classifies one example.
pub fn classify(
    example: &RelationExample,
    schema: &RelationSchema,
    config: &InferenceConfig,
) -> Result<Prediction, InferenceError> {
    config.validate(schema)?;
    let plan = plan(example, schema, config);
    let pairs: Vec<PremiseHypothesisPair> = plan_pairs(&plan)
        .map(|(p, h)| PremiseHypothesisPair::new(p, h))
        .collect();
    let scores = if pairs.is_empty() {
        Vec::new()
    } else {
        score_chunked(config.backend.as_ref(), &pairs, config.batch_size)?
    };
    let table: HashMap<(&str, &str), EntailmentScore> = pairs
        .iter()
        .map(|p| (p.premise.as_str(), p.hypothesis.as_str()))
        .zip(scores)
        .collect();
    Ok(assemble(example, schema, config, &plan, |p, h| table[&(p, h)]))
}

/// Distinct pairs across a batch of plans, in first-seen order.
struct PairPool {
    pairs: Vec<PremiseHypothesisPair>,
    index: HashMap<(String, String), usize>,
}

impl PairPool {
    fn build(plans: &[ExamplePlan]) -> Self {
        let mut pool = PairPool {
            pairs: Vec::new(),
            index: HashMap::new(),
        };
        for plan in plans {
            for (p, h) in plan_pairs(plan) {
                let key = (p.to_string(), h.to_string());
                if !pool.index.contains_key(&key) {
                    pool.index.insert(key, pool.pairs.len());
                    pool.pairs.push(PremiseHypothesisPair::new(p, h));
                }
            }
        }
        pool
    }

    fn position(&self, premise: &str, hypothesis: &str) -> usize {
        self.index[&(premise.to_string(), hypothesis.to_string())]
    }
}

/// Scores every chunk, returning one result per chunk in chunk order.
fn score_pool(
    pool: &PairPool,
    config: &InferenceConfig,
) -> Result<Vec<Result<Vec<EntailmentScore>, BackendError>>, InferenceError> {
    let chunks: Vec<&[PremiseHypothesisPair]> = pool.pairs.chunks(config.batch_size).collect();
    let backend = config.backend.as_ref();
    if config.workers <= 1 || chunks.len() <= 1 {
        return Ok(chunks.into_iter().map(|c| backend.score_batch(c)).collect());
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .expect("thread pool");
    Ok(pool.install(|| chunks.par_iter().map(|c| backend.score_batch(c)).collect()))
}

type ChunkResults = Vec<Result<Vec<EntailmentScore>, BackendError>>;

fn pooled(
    examples: &[RelationExample],
    schema: &RelationSchema,
    config: &InferenceConfig,
) -> Result<(Vec<ExamplePlan>, PairPool, ChunkResults), InferenceError> {
    config.validate(schema)?;
    let plans: Vec<ExamplePlan> = examples.iter().map(|e| plan(e, schema, config)).collect();
    let pool = PairPool::build(&plans);
    let chunk_results = score_pool(&pool, config)?;
    Ok((plans, pool, chunk_results))
}

/// Classifies a batch, pooling identical (premise, hypothesis) pairs across
/// examples into shared backend calls of at most `batch_size` pairs.
///
/// Output is elementwise identical to [`classify`]. The first failing backend
/// call aborts the batch; the error names the first example that needed it.
pub fn classify_batch(
    examples: &[RelationExample],
    schema: &RelationSchema,
    config: &InferenceConfig,
) -> Result<Vec<Prediction>, InferenceError> {
    let (plans, pool, chunk_results) = pooled(examples, schema, config)?;
    let mut scores = Vec::with_capacity(pool.pairs.len());
    for (i, r) in chunk_results.into_iter().enumerate() {
        match r {
            Ok(s) => scores.extend(s),
            Err(e) => {
                let lo = i * config.batch_size;
                let hi = lo + config.batch_size;
                let culprit = examples
                    .iter()
                    .zip(&plans)
                    .find(|(_, plan)| {
                        plan_pairs(plan).any(|(p, h)| (lo..hi).contains(&pool.position(p, h)))
                    })
                    .map(|(e, _)| e.id().to_string())
                    .unwrap_or_default();
                return Err(InferenceError::Example {
                    id: culprit,
                    source: Box::new(e.into()),
                });
            }
        }
    }
    Ok(examples
        .iter()
        .zip(&plans)
        .map(|(e, plan)| assemble(e, schema, config, plan, |p, h| scores[pool.position(p, h)]))
        .collect())
}

/// Like [`classify_batch`], but records failures per example instead of
/// aborting. Examples touching a failed pooled call are retried on their own.
pub fn classify_batch_lenient(
    examples: &[RelationExample],
    schema: &RelationSchema,
    config: &InferenceConfig,
) -> Result<Vec<Result<Prediction, InferenceError>>, InferenceError> {
    let (plans, pool, chunk_results) = pooled(examples, schema, config)?;
    let mut scores: Vec<Option<EntailmentScore>> = Vec::with_capacity(pool.pairs.len());
    for r in chunk_results.into_iter().zip(pool.pairs.chunks(config.batch_size)) {
        match r {
            (Ok(s), _) => scores.extend(s.into_iter().map(Some)),
            (Err(_), chunk) => scores.extend(std::iter::repeat_n(None, chunk.len())),
        }
    }
    Ok(examples
        .iter()
        .zip(&plans)
        .map(|(e, plan)| {
            let complete = plan_pairs(plan).all(|(p, h)| scores[pool.position(p, h)].is_some());
            if complete {
                Ok(assemble(e, schema, config, plan, |p, h| {
                    scores[pool.position(p, h)].expect("checked above")
                }))
            } else {
                classify(e, schema, config).map_err(|source| InferenceError::Example {
                    id: e.id().to_string(),
                    source: Box::new(source),
                })
            }
        })
        .collect())
}

/// Chosen threshold and the micro F1 it achieves on the development scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
}

/// The candidate thresholds: the default 0.5 plus every distinct max score,
/// ascending.
pub fn threshold_grid(dev: &[DevScore]) -> Vec<f64> {
    let mut grid: Vec<f64> = dev.iter().filter_map(|d| d.max_score).collect();
    grid.push(DEFAULT_THRESHOLD);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Picks the grid threshold with the best micro F1, preferring the smallest
/// threshold among equals.
///
/// Runs in O(n log n): scores are sorted once and the counts at each
/// candidate are read off suffix sums.
pub fn tune_threshold(dev: &[DevScore]) -> Result<ThresholdChoice, InferenceError> {
    if dev.is_empty() {
        return Err(InferenceError::EmptyDevScores);
    }
    let gold = dev.iter().filter(|d| d.gold_positive).count();
    let mut scored: Vec<(f64, bool)> = dev
        .iter()
        .filter_map(|d| d.max_score.map(|s| (s, d.gold_positive && d.argmax_correct)))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // correct_from[i] = correct predictions among scored[i..].
    let mut correct_from = vec![0usize; scored.len() + 1];
    for i in (0..scored.len()).rev() {
        correct_from[i] = correct_from[i + 1] + scored[i].1 as usize;
    }
    let mut best: Option<ThresholdChoice> = None;
    for t in threshold_grid(dev) {
        let first = scored.partition_point(|(s, _)| *s < t);
        let predicted = scored.len() - first;
        let f1 = Prf::from_counts(correct_from[first], predicted, gold).f1;
        if best.is_none_or(|b| f1 > b.f1) {
            best = Some(ThresholdChoice { threshold: t, f1 });
        }
    }
    Ok(best.expect("grid always holds the default threshold"))
}
