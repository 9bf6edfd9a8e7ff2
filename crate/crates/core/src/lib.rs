//! Relation extraction as textual entailment.
//!
//! Each candidate relation is verbalized into natural-language hypotheses via
//! hand-written templates; an NLI backend scores how strongly the sentence
//! entails each hypothesis, and the best-supported relation (if any clears the
//! no-relation test) becomes the prediction.
//!
//! ```
//! use std::sync::Arc;
//! use relent::{classify, InferenceConfig, LexicalBackend, RelationExample, RelationSchema, Span};
//!
//! let schema = RelationSchema::tacred();
//! let tokens = "Smith was born on 1 May 1960".split(' ').map(String::from).collect();
//! let example = RelationExample::new(
//!     "ex1", tokens, Span::new(0, 1), Span::new(4, 7), "PERSON", "DATE", None,
//! ).unwrap();
//!
//! let config = InferenceConfig::new(Arc::new(LexicalBackend));
//! let prediction = classify(&example, &schema, &config).unwrap();
//! assert_eq!(prediction.label, "per:date_of_birth");
//! ```
//!
//! The guide under `book/` walks through every stage; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod backend;
pub mod dataset;
pub mod evaluator;
pub mod inference;
pub mod pairgen;
pub mod schema;
pub mod verbalizer;

pub use backend::{
    Backend, BackendError, EntailmentScore, FixtureBackend, FixtureEntry, LexicalBackend, MissPolicy,
    PremiseHypothesisPair, RemoteBackend, RemoteConfig,
};
pub use dataset::{load_tacred, stratified_partition, stratified_split, strip_labels, Dataset, DatasetError};
pub use evaluator::{confusion_matrix, evaluate, f1_sweep, ConfusionMatrix, DevScore, EvalError, Prf, ScoreReport};
pub use inference::{
    classify, classify_batch, classify_batch_lenient, score_relation, tune_threshold, InferenceConfig,
    InferenceError, NorelMode, Prediction, RelationScore, ThresholdChoice,
};
pub use pairgen::{annotate_silver, generate_pairs, NliLabel, NliPairRecord, PairgenError, SilverOutput};
pub use schema::{RelationEntry, RelationSchema, SchemaError, Template, TemplateId};
pub use verbalizer::{mention_text, premise_of, verbalize, Argument, RelationExample, Span};

// Book chapters, compiled as doc-tests so the listings cannot rot.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/schema.md")]
    mod schema {}
    #[doc = include_str!("../../../book/src/verbalization.md")]
    mod verbalization {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/thresholds.md")]
    mod thresholds {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/pairs.md")]
    mod pairs {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
