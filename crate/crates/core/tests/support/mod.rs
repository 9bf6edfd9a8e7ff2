//! Randomized fixture scenarios and an independent brute-force classifier.
//!
//! The oracle works from plain data (`RelationSpec`s and the raw score table),
//! substitutes placeholders with `str::replace`, and walks every relation and
//! template directly. It shares no code path with the engine beyond the
//! public data types used to compare results.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relent::{
    EntailmentScore, FixtureBackend, InferenceConfig, NorelMode, RelationEntry, RelationExample,
    RelationSchema, Span,
};

pub const NEG: &str = "no_relation";
pub const NOREL: &str = "{subj} and {obj} are not related";
const TYPES: [&str; 4] = ["PER", "ORG", "LOC", "DATE"];
const WORDS: [&str; 12] = [
    "Ann", "Bob", "Acme", "Paris", "joined", "in", "the", "1990", "met", "near", "Corp", ".",
];
const VERBS: [&str; 8] = ["founded", "joined", "leads", "left", "owns", "visited", "married", "sued"];

#[derive(Debug, Clone)]
pub struct RelationSpec {
    pub label: String,
    pub patterns: Vec<String>,
    pub subj_types: Vec<String>,
    pub obj_types: Vec<String>,
}

pub struct Scenario {
    pub specs: Vec<RelationSpec>,
    pub schema: RelationSchema,
    pub examples: Vec<RelationExample>,
    /// Raw entailment probabilities; pairs not listed score 1/3.
    pub table: HashMap<(String, String), f64>,
    pub mode: NorelMode,
    pub threshold: f64,
}

fn subset(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out: Vec<String> = TYPES
        .iter()
        .filter(|_| rng.random_bool(0.5))
        .map(|t| t.to_string())
        .collect();
    if out.is_empty() {
        out.push(TYPES.choose(rng).unwrap().to_string());
    }
    out
}

fn quantized(rng: &mut ChaCha8Rng) -> f64 {
    // Ten levels make ties common.
    rng.random_range(0..=10) as f64 / 10.0
}

pub fn score(e: f64) -> EntailmentScore {
    EntailmentScore::new(e, (1.0 - e) / 2.0, (1.0 - e) / 2.0).unwrap()
}

pub fn naive_verbalize(pattern: &str, subj: &str, obj: &str) -> String {
    // Mentions in these scenarios never contain braces, so sequential
    // replacement is safe here.
    pattern.replace("{subj}", subj).replace("{obj}", obj)
}

pub fn random_specs(rng: &mut ChaCha8Rng, max_relations: usize) -> Vec<RelationSpec> {
    let n = rng.random_range(1..=max_relations);
    let mut specs: Vec<RelationSpec> = Vec::new();
    for i in 0..n {
        let label = format!("{}:r{i}", if rng.random_bool(0.5) { "per" } else { "org" });
        let k = rng.random_range(1..=8);
        let mut patterns: Vec<String> = Vec::new();
        for j in 0..k {
            let verb = VERBS.choose(rng).unwrap();
            let p = if rng.random_bool(0.3) {
                format!("{{obj}} was {verb} by {{subj}} {j}")
            } else if rng.random_bool(0.2) {
                // Shared wording across relations.
                format!("{{subj}} {verb} {{obj}}")
            } else {
                format!("{{subj}} {verb} {{obj}} r{i}t{j}")
            };
            if !patterns.contains(&p) {
                patterns.push(p);
            }
        }
        specs.push(RelationSpec {
            label,
            patterns,
            subj_types: subset(rng),
            obj_types: subset(rng),
        });
    }
    specs
}

pub fn schema_of(specs: &[RelationSpec], norel: bool) -> RelationSchema {
    RelationSchema::new(
        specs.iter().map(|s| {
            RelationEntry::new(
                s.label.clone(),
                s.patterns.clone(),
                s.subj_types.clone(),
                s.obj_types.clone(),
            )
            .unwrap()
        }),
        NEG,
        norel.then_some(NOREL),
    )
    .unwrap()
}

pub fn random_example(rng: &mut ChaCha8Rng, id: String, gold: Option<String>) -> RelationExample {
    let len = rng.random_range(3..=9);
    let tokens: Vec<String> = (0..len).map(|_| WORDS.choose(rng).unwrap().to_string()).collect();
    // Two disjoint spans in random order.
    let cut = rng.random_range(1..len);
    let a_start = rng.random_range(0..cut);
    let a = Span::new(a_start, rng.random_range(a_start + 1..=cut));
    let b_start = rng.random_range(cut..len);
    let b = Span::new(b_start, rng.random_range(b_start + 1..=len));
    let (subj, obj) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
    let mut types: Vec<&str> = TYPES.to_vec();
    types.push("MISC");
    RelationExample::new(
        id,
        tokens,
        subj,
        obj,
        *types.choose(rng).unwrap(),
        *types.choose(rng).unwrap(),
        gold,
    )
    .unwrap()
}

fn mentions(e: &RelationExample) -> (String, String, String) {
    let t = e.tokens();
    (
        t.join(" "),
        t[e.subj_span().start..e.subj_span().end].join(" "),
        t[e.obj_span().start..e.obj_span().end].join(" "),
    )
}

pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = random_specs(&mut rng, 10);
    let mode = if rng.random_bool(0.3) {
        NorelMode::Template
    } else {
        NorelMode::Threshold
    };
    let schema = schema_of(&specs, true);
    let n = rng.random_range(1..=50);
    let examples: Vec<RelationExample> = (0..n)
        .map(|i| random_example(&mut rng, format!("s{seed}e{i}"), None))
        .collect();
    let mut table = HashMap::new();
    for e in &examples {
        let (premise, subj, obj) = mentions(e);
        for spec in &specs {
            for p in spec.patterns.iter().chain(std::iter::once(&NOREL.to_string())) {
                // Leave some pairs out so the uniform default is exercised.
                if rng.random_bool(0.9) {
                    table.insert((premise.clone(), naive_verbalize(p, &subj, &obj)), quantized(&mut rng));
                }
            }
        }
    }
    let threshold = *[0.0, 0.3, 0.5, 0.5, 0.7, 1.0].choose(&mut rng).unwrap();
    Scenario {
        specs,
        schema,
        examples,
        table,
        mode,
        threshold,
    }
}

impl Scenario {
    pub fn backend(&self) -> FixtureBackend {
        let mut b = FixtureBackend::default();
        for ((p, h), e) in &self.table {
            b.insert(p.clone(), h.clone(), score(*e));
        }
        b
    }

    pub fn config(&self, workers: usize, batch_size: usize) -> InferenceConfig {
        InferenceConfig::new(Arc::new(self.backend()))
            .with_norel_mode(self.mode)
            .with_threshold(self.threshold)
            .with_workers(workers)
            .with_batch_size(batch_size)
    }

    fn p_nli(&self, premise: &str, hypothesis: &str) -> f64 {
        self.table
            .get(&(premise.to_string(), hypothesis.to_string()))
            .copied()
            .unwrap_or(1.0 / 3.0)
    }

    pub fn spec(&self, label: &str) -> Option<&RelationSpec> {
        self.specs.iter().find(|s| s.label == label)
    }

    pub fn delta(&self, label: &str, e: &RelationExample) -> bool {
        let s = self.spec(label).unwrap();
        s.subj_types.iter().any(|t| t == e.subj_type()) && s.obj_types.iter().any(|t| t == e.obj_type())
    }

    /// Exhaustive evaluation of the scoring rule for one example.
    pub fn brute_force(&self, e: &RelationExample) -> OracleOutcome {
        let (premise, subj, obj) = mentions(e);
        let mut per_relation = BTreeMap::new();
        for spec in &self.specs {
            if !self.delta(&spec.label, e) {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for (j, p) in spec.patterns.iter().enumerate() {
                let s = self.p_nli(&premise, &naive_verbalize(p, &subj, &obj));
                if best.is_none() || s > best.unwrap().0 {
                    best = Some((s, j));
                }
            }
            per_relation.insert(spec.label.clone(), best.unwrap());
        }
        // Sorted candidate list: (label, score).
        let mut cands: Vec<(String, f64)> = per_relation.iter().map(|(l, (s, _))| (l.clone(), *s)).collect();
        let norel = match self.mode {
            NorelMode::Template => {
                let s = self.p_nli(&premise, &naive_verbalize(NOREL, &subj, &obj));
                cands.push((NEG.to_string(), s));
                Some(s)
            }
            NorelMode::Threshold => None,
        };
        cands.sort_by(|a, b| a.0.cmp(&b.0));
        let mut top: Option<(String, f64)> = None;
        for (l, s) in cands {
            if top.as_ref().is_none_or(|(_, b)| s > *b) {
                top = Some((l, s));
            }
        }
        let (label, score) = match (self.mode, top) {
            (NorelMode::Template, Some(t)) => t,
            (NorelMode::Threshold, Some((l, s))) if s >= self.threshold => (l, s),
            (NorelMode::Threshold, Some((_, s))) => (NEG.to_string(), s),
            (_, None) => (NEG.to_string(), 0.0),
        };
        OracleOutcome {
            label,
            score,
            per_relation,
            norel,
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct OracleOutcome {
    pub label: String,
    pub score: f64,
    /// label -> (score, template index)
    pub per_relation: BTreeMap<String, (f64, usize)>,
    pub norel: Option<f64>,
}

impl OracleOutcome {
    pub fn matches(&self, p: &relent::Prediction) -> bool {
        let per: BTreeMap<String, (f64, usize)> = p
            .per_relation
            .iter()
            .map(|(l, s)| (l.clone(), (s.score, s.template.map(|t| t.0).unwrap_or(usize::MAX))))
            .collect();
        self.label == p.label
            && self.score.to_bits() == p.score.to_bits()
            && per.len() == self.per_relation.len()
            && per
                .iter()
                .zip(&self.per_relation)
                .all(|((la, (sa, ta)), (lb, (sb, tb)))| la == lb && sa.to_bits() == sb.to_bits() && ta == tb)
            && self.norel.map(f64::to_bits) == p.norel_score.map(f64::to_bits)
    }
}
