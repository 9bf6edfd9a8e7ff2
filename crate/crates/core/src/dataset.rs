//! TACRED-format datasets and the stratified scenario splits.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verbalizer::{ExampleError, RelationExample, Span};

/// Label TACRED uses for "no relation".
pub const TACRED_NEGATIVE: &str = "no_relation";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    InvalidExample(#[from] ExampleError),
    #[error("record `{id}`: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("fraction {0} must be in (0, 1]")]
    InvalidFraction(f64),
}

/// One record of the TACRED release format. End indices are inclusive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TacredRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    pub token: Vec<String>,
    pub subj_start: usize,
    pub subj_end: usize,
    pub obj_start: usize,
    pub obj_end: usize,
    pub subj_type: String,
    pub obj_type: String,
}

impl TacredRecord {
    pub fn into_example(self, negative_label: &str) -> Result<RelationExample, DatasetError> {
        let bad = |message: &str| DatasetError::InvalidRecord {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.subj_end < self.subj_start {
            return Err(bad("subj_end precedes subj_start"));
        }
        if self.obj_end < self.obj_start {
            return Err(bad("obj_end precedes obj_start"));
        }
        let gold = self.relation.map(|r| {
            if r == TACRED_NEGATIVE {
                negative_label.to_string()
            } else {
                r
            }
        });
        Ok(RelationExample::new(
            self.id,
            self.token,
            Span::new(self.subj_start, self.subj_end + 1),
            Span::new(self.obj_start, self.obj_end + 1),
            self.subj_type,
            self.obj_type,
            gold,
        )?)
    }

    pub fn from_example(e: &RelationExample, negative_label: &str) -> Self {
        TacredRecord {
            id: e.id().to_string(),
            relation: e.gold().map(|g| {
                if g == negative_label {
                    TACRED_NEGATIVE.to_string()
                } else {
                    g.to_string()
                }
            }),
            token: e.tokens().to_vec(),
            subj_start: e.subj_span().start,
            subj_end: e.subj_span().end - 1,
            obj_start: e.obj_span().start,
            obj_end: e.obj_span().end - 1,
            subj_type: e.subj_type().to_string(),
            obj_type: e.obj_type().to_string(),
        }
    }
}

/// An ordered, id-unique collection of examples.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    examples: Vec<RelationExample>,
    label_counts: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn new(examples: Vec<RelationExample>) -> Result<Self, DatasetError> {
        let mut ids = HashSet::with_capacity(examples.len());
        for e in &examples {
            if !ids.insert(e.id()) {
                return Err(DatasetError::DuplicateId(e.id().to_string()));
            }
        }
        let mut label_counts = BTreeMap::new();
        for e in &examples {
            if let Some(g) = e.gold() {
                *label_counts.entry(g.to_string()).or_insert(0) += 1;
            }
        }
        Ok(Dataset {
            examples,
            label_counts,
        })
    }

    pub fn examples(&self) -> &[RelationExample] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<RelationExample> {
        self.examples
    }

    /// Counts of gold labels; unlabeled examples are not counted.
    pub fn label_counts(&self) -> &BTreeMap<String, usize> {
        &self.label_counts
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self, negative_label: &str) -> usize {
        self.label_counts
            .iter()
            .filter(|(l, _)| *l != negative_label)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn negatives(&self, negative_label: &str) -> usize {
        self.label_counts.get(negative_label).copied().unwrap_or(0)
    }

    pub fn from_records(records: Vec<TacredRecord>, negative_label: &str) -> Result<Self, DatasetError> {
        let examples = records
            .into_iter()
            .map(|r| r.into_example(negative_label))
            .collect::<Result<Vec<_>, _>>()?;
        Dataset::new(examples)
    }

    pub fn to_records(&self, negative_label: &str) -> Vec<TacredRecord> {
        self.examples
            .iter()
            .map(|e| TacredRecord::from_example(e, negative_label))
            .collect()
    }

    /// Writes the dataset as a TACRED JSON array.
    pub fn write_tacred(&self, path: impl AsRef<Path>, negative_label: &str) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let io = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer(&mut w, &self.to_records(negative_label)).map_err(|e| DatasetError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io)?;
        w.flush().map_err(io)
    }
}

/// Reads a TACRED release file (a JSON array of records). `no_relation` gold
/// labels become `negative_label`; a missing `relation` means unlabeled.
pub fn load_tacred(path: impl AsRef<Path>, negative_label: &str) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let records: Vec<TacredRecord> =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| DatasetError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    Dataset::from_records(records, negative_label)
}

/// Target size of one stratum: round half up, but at least one example for a
/// present label.
pub fn stratum_size(count: usize, fraction: f64) -> usize {
    if count == 0 {
        return 0;
    }
    // The epsilon absorbs representation error such as 45 * 0.1 = 4.4999...
    let k = (count as f64 * fraction + 0.5 + 1e-9).floor() as usize;
    k.clamp(1, count)
}

/// Samples `fraction` of every label stratum (unlabeled examples form their
/// own stratum), keeping the original example order.
pub fn stratified_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, DatasetError> {
    stratified_partition(dataset, fraction, seed).map(|(sample, _)| sample)
}

/// Like [`stratified_split`], also returning the complement.
pub fn stratified_partition(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let mut strata: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.examples.iter().enumerate() {
        strata.entry(e.gold()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; dataset.len()];
    for members in strata.values() {
        let k = stratum_size(members.len(), fraction);
        for j in index::sample(&mut rng, members.len(), k) {
            keep[members[j]] = true;
        }
    }
    let (mut sample, mut rest) = (Vec::new(), Vec::new());
    for (e, k) in dataset.examples.iter().zip(keep) {
        if k {
            sample.push(e.clone());
        } else {
            rest.push(e.clone());
        }
    }
    Ok((Dataset::new(sample)?, Dataset::new(rest)?))
}

/// Drops every gold label.
pub fn strip_labels(dataset: &Dataset) -> Dataset {
    Dataset {
        examples: dataset.examples.iter().map(|e| e.clone().with_gold(None)).collect(),
        label_counts: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: usize, gold: Option<&str>) -> RelationExample {
        RelationExample::new(
            format!("e{id}"),
            vec!["a".into(), "b".into()],
            Span::new(0, 1),
            Span::new(1, 2),
            "PERSON",
            "DATE",
            gold.map(String::from),
        )
        .unwrap()
    }

    fn dataset(a: usize, neg: usize) -> Dataset {
        let mut v = Vec::new();
        for i in 0..a {
            v.push(ex(i, Some("A")));
        }
        for i in a..a + neg {
            v.push(ex(i, Some(TACRED_NEGATIVE)));
        }
        Dataset::new(v).unwrap()
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(stratum_size(40, 0.1), 4);
        assert_eq!(stratum_size(45, 0.1), 5);
        assert_eq!(stratum_size(44, 0.1), 4);
        assert_eq!(stratum_size(3, 0.01), 1);
        assert_eq!(stratum_size(0, 0.5), 0);
        assert_eq!(stratum_size(7, 1.0), 7);
    }

    #[test]
    fn proportional_split() {
        let d = dataset(40, 60);
        let s = stratified_split(&d, 0.1, 7).unwrap();
        assert_eq!(s.label_counts()["A"], 4);
        assert_eq!(s.label_counts()[TACRED_NEGATIVE], 6);
    }

    #[test]
    fn full_fraction_is_identity() {
        let d = dataset(5, 5);
        assert_eq!(stratified_split(&d, 1.0, 3).unwrap(), d);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let d = dataset(40, 60);
        assert_eq!(stratified_split(&d, 0.3, 11).unwrap(), stratified_split(&d, 0.3, 11).unwrap());
        assert_ne!(stratified_split(&d, 0.3, 11).unwrap(), stratified_split(&d, 0.3, 12).unwrap());
        let (a, b) = stratified_partition(&d, 0.3, 11).unwrap();
        assert_eq!(a.len() + b.len(), d.len());
    }

    #[test]
    fn bad_fraction() {
        let d = dataset(1, 1);
        assert!(stratified_split(&d, 0.0, 0).is_err());
        assert!(stratified_split(&d, 1.5, 0).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(matches!(Dataset::new(vec![ex(1, None), ex(1, None)]), Err(DatasetError::DuplicateId(_))));
    }

    #[test]
    fn strip_then_relabel() {
        let d = dataset(2, 3);
        let s = strip_labels(&d);
        assert_eq!(s.len(), d.len());
        assert!(s.examples().iter().all(|e| e.gold().is_none()));
        assert_eq!(strip_labels(&s), s);
        let relabeled = Dataset::new(
            s.examples()
                .iter()
                .zip(d.examples())
                .map(|(e, orig)| e.clone().with_gold(orig.gold().map(String::from)))
                .collect(),
        )
        .unwrap();
        assert_eq!(relabeled, d);
    }

    #[test]
    fn record_conversion() {
        let json = r#"[
            {"id":"r1","relation":"no_relation","token":["Ann","was","born","1990"],
             "subj_start":0,"subj_end":0,"obj_start":3,"obj_end":3,
             "subj_type":"PERSON","obj_type":"DATE","stanford_pos":["NNP","VBD","VBN","CD"]},
            {"id":"r2","relation":"per:date_of_birth","token":["New","York","x","1990"],
             "subj_start":0,"subj_end":1,"obj_start":3,"obj_end":3,
             "subj_type":"PERSON","obj_type":"DATE"}
        ]"#;
        let records: Vec<TacredRecord> = serde_json::from_str(json).unwrap();
        let d = Dataset::from_records(records, "NA").unwrap();
        assert_eq!(d.examples()[0].gold(), Some("NA"));
        assert_eq!(d.examples()[1].subj_span(), Span::new(0, 2));
        let back = d.to_records("NA");
        assert_eq!(back[0].relation.as_deref(), Some(TACRED_NEGATIVE));
        assert_eq!((back[1].subj_start, back[1].subj_end), (0, 1));
    }

    #[test]
    fn out_of_range_record_rejected_with_id() {
        let json = r#"[{"id":"bad7","relation":"no_relation","token":["a","b","c"],
            "subj_start":2,"subj_end":3,"obj_start":0,"obj_end":0,
            "subj_type":"PERSON","obj_type":"DATE"}]"#;
        let records: Vec<TacredRecord> = serde_json::from_str(json).unwrap();
        let err = Dataset::from_records(records, TACRED_NEGATIVE).unwrap_err();
        assert!(err.to_string().contains("bad7"), "{err}");
    }

    #[test]
    fn missing_field_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        std::fs::write(&path, r#"[{"id":"x","token":["a"]}]"#).unwrap();
        assert!(matches!(load_tacred(&path, TACRED_NEGATIVE), Err(DatasetError::Parse { .. })));
    }
}
