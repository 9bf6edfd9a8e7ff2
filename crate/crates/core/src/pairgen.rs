//! NLI fine-tuning pairs from labeled relation examples, and silver
//! annotation of unlabeled ones.
//!
//! For every positive example: one entailment pair per template of its gold
//! relation, and one neutral pair drawn from the templates of the other
//! relations. For every negative example: one contradiction pair drawn from
//! all positive-relation templates. With the no-relation template enabled,
//! negatives also get an entailment pair and positives a contradiction pair
//! built from that template.
//!
//! Each example draws from its own ChaCha stream (seed, stream = example
//! index), so output does not depend on how the work is split across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::inference::{classify_batch, InferenceConfig, InferenceError};
use crate::schema::{RelationSchema, Template, TemplateId};
use crate::verbalizer::{mention_text, premise_of, verbalize, Argument, RelationExample};

#[derive(Debug, Error)]
pub enum PairgenError {
    #[error("example `{0}` has no gold label")]
    Unlabeled(String),
    #[error("example `{id}` has gold label `{label}` unknown to the schema")]
    UnknownLabel { id: String, label: String },
    #[error("no template outside relation `{0}` to draw a neutral hypothesis from")]
    NoNeutralCandidates(String),
    #[error("schema has no positive templates to draw a contradiction hypothesis from")]
    NoContradictionCandidates,
    #[error("no-relation pairs requested but the schema has no norel_template")]
    MissingNorelTemplate,
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMeta {
    pub example_id: String,
    pub relation: String,
    pub template_id: TemplateId,
}

/// One MNLI-style fine-tuning record with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliPairRecord {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
    pub meta: PairMeta,
}

/// (relation, template) pairs eligible for random draws, in label order.
struct TemplatePool<'a> {
    all: Vec<(&'a str, &'a Template)>,
}

impl<'a> TemplatePool<'a> {
    fn new(schema: &'a RelationSchema) -> Self {
        TemplatePool {
            all: schema
                .relations()
                .flat_map(|e| e.templates().iter().map(move |t| (e.label(), t)))
                .collect(),
        }
    }

    /// Templates of other relations whose wording is not also one of the
    /// gold relation's own templates.
    fn neutral_for(&self, gold: &str) -> Vec<(&'a str, &'a Template)> {
        let own: BTreeSet<&str> = self
            .all
            .iter()
            .filter(|(l, _)| *l == gold)
            .map(|(_, t)| t.pattern())
            .collect();
        self.all
            .iter()
            .filter(|(l, t)| *l != gold && !own.contains(t.pattern()))
            .copied()
            .collect()
    }
}

fn record(
    example: &RelationExample,
    premise: &str,
    relation: &str,
    template: &Template,
    label: NliLabel,
) -> NliPairRecord {
    NliPairRecord {
        premise: premise.to_string(),
        hypothesis: verbalize(
            template,
            &mention_text(example, Argument::Subject),
            &mention_text(example, Argument::Object),
        ),
        label,
        meta: PairMeta {
            example_id: example.id().to_string(),
            relation: relation.to_string(),
            template_id: template.id(),
        },
    }
}

fn pairs_for_example(
    index: usize,
    example: &RelationExample,
    schema: &RelationSchema,
    pool: &TemplatePool<'_>,
    seed: u64,
    use_norel_template: bool,
) -> Result<Vec<NliPairRecord>, PairgenError> {
    let gold = example
        .gold()
        .ok_or_else(|| PairgenError::Unlabeled(example.id().to_string()))?;
    let negative = schema.negative_label();
    let premise = premise_of(example);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut out = Vec::new();
    if gold == negative {
        if pool.all.is_empty() {
            return Err(PairgenError::NoContradictionCandidates);
        }
        let (rel, t) = pool.all[rng.random_range(0..pool.all.len())];
        out.push(record(example, &premise, rel, t, NliLabel::Contradiction));
        if use_norel_template {
            let t = schema.norel_template().ok_or(PairgenError::MissingNorelTemplate)?;
            out.push(record(example, &premise, negative, t, NliLabel::Entailment));
        }
    } else {
        let entry = schema.relation(gold).ok_or_else(|| PairgenError::UnknownLabel {
            id: example.id().to_string(),
            label: gold.to_string(),
        })?;
        for t in entry.templates() {
            out.push(record(example, &premise, gold, t, NliLabel::Entailment));
        }
        let neutral = pool.neutral_for(gold);
        if neutral.is_empty() {
            return Err(PairgenError::NoNeutralCandidates(gold.to_string()));
        }
        let (rel, t) = neutral[rng.random_range(0..neutral.len())];
        out.push(record(example, &premise, rel, t, NliLabel::Neutral));
        if use_norel_template {
            let t = schema.norel_template().ok_or(PairgenError::MissingNorelTemplate)?;
            out.push(record(example, &premise, negative, t, NliLabel::Contradiction));
        }
    }
    Ok(out)
}

/// Compiles a labeled dataset into NLI pairs, in example order.
pub fn generate_pairs(
    dataset: &Dataset,
    schema: &RelationSchema,
    seed: u64,
    use_norel_template: bool,
) -> Result<Vec<NliPairRecord>, PairgenError> {
    let pool = TemplatePool::new(schema);
    let mut out = Vec::new();
    for (i, e) in dataset.examples().iter().enumerate() {
        out.extend(pairs_for_example(i, e, schema, &pool, seed, use_norel_template)?);
    }
    Ok(out)
}

/// [`generate_pairs`] spread over `workers` threads; the output is identical.
pub fn generate_pairs_parallel(
    dataset: &Dataset,
    schema: &RelationSchema,
    seed: u64,
    use_norel_template: bool,
    workers: usize,
) -> Result<Vec<NliPairRecord>, PairgenError> {
    if workers <= 1 {
        return generate_pairs(dataset, schema, seed, use_norel_template);
    }
    let pool = TemplatePool::new(schema);
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    let per_example: Vec<Vec<NliPairRecord>> = threads.install(|| {
        dataset
            .examples()
            .par_iter()
            .enumerate()
            .map(|(i, e)| pairs_for_example(i, e, schema, &pool, seed, use_norel_template))
            .collect::<Result<_, _>>()
    })?;
    Ok(per_example.into_iter().flatten().collect())
}

/// Writes records as JSON lines.
pub fn write_pairs(mut w: impl Write, records: &[NliPairRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Result of silver annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SilverOutput {
    pub dataset: Dataset,
    /// Predicted label distribution, negative label included.
    pub label_distribution: BTreeMap<String, usize>,
}

/// Labels every example with the engine's prediction. Existing gold labels
/// are ignored and overwritten.
pub fn annotate_silver(
    unlabeled: &Dataset,
    schema: &RelationSchema,
    config: &InferenceConfig,
) -> Result<SilverOutput, PairgenError> {
    let predictions = classify_batch(unlabeled.examples(), schema, config)?;
    let examples: Vec<RelationExample> = unlabeled
        .examples()
        .iter()
        .zip(&predictions)
        .map(|(e, p)| e.clone().with_gold(Some(p.label.clone())))
        .collect();
    let dataset = Dataset::new(examples).expect("ids already unique");
    let label_distribution = dataset.label_counts().clone();
    Ok(SilverOutput {
        dataset,
        label_distribution,
    })
}
