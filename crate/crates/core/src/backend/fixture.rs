use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_pairs, Backend, BackendError, EntailmentScore, PremiseHypothesisPair};

/// What a fixture backend does with a pair it has no entry for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissPolicy {
    /// Fail the whole call.
    Strict,
    /// Answer with (1/3, 1/3, 1/3).
    #[default]
    UniformDefault,
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub premise: String,
    pub hypothesis: String,
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

/// Replays a fixed (premise, hypothesis) → score table.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    table: HashMap<(String, String), EntailmentScore>,
    policy: MissPolicy,
}

impl FixtureBackend {
    pub fn new(table: HashMap<(String, String), EntailmentScore>, policy: MissPolicy) -> Self {
        FixtureBackend { table, policy }
    }

    /// Builds a backend from raw triples, rejecting any that are not valid scores.
    pub fn from_entries(
        entries: impl IntoIterator<Item = FixtureEntry>,
        policy: MissPolicy,
    ) -> Result<Self, BackendError> {
        let mut table = HashMap::new();
        for e in entries {
            let score = EntailmentScore::new(e.entailment, e.neutral, e.contradiction)?;
            table.insert((e.premise, e.hypothesis), score);
        }
        Ok(FixtureBackend { table, policy })
    }

    /// Reads a JSON-lines fixture file (blank lines are skipped).
    pub fn load(path: impl AsRef<Path>, policy: MissPolicy) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let file_err = |message: String| BackendError::FixtureFile {
            path: path.display().to_string(),
            message,
        };
        let file = std::fs::File::open(path).map_err(|e| file_err(e.to_string()))?;
        let mut entries = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| file_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(&line).map_err(|e| file_err(format!("line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Self::from_entries(entries, policy).map_err(|e| file_err(e.to_string()))
    }

    pub fn insert(&mut self, premise: impl Into<String>, hypothesis: impl Into<String>, score: EntailmentScore) {
        self.table.insert((premise.into(), hypothesis.into()), score);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn policy(&self) -> MissPolicy {
        self.policy
    }

    /// Entries sorted by (premise, hypothesis), in fixture-file form.
    pub fn entries(&self) -> Vec<FixtureEntry> {
        let mut out: Vec<FixtureEntry> = self
            .table
            .iter()
            .map(|((p, h), s)| FixtureEntry {
                premise: p.clone(),
                hypothesis: h.clone(),
                entailment: s.entailment(),
                neutral: s.neutral(),
                contradiction: s.contradiction(),
            })
            .collect();
        out.sort_by(|a, b| (&a.premise, &a.hypothesis).cmp(&(&b.premise, &b.hypothesis)));
        out
    }

    fn lookup(&self, pair: &PremiseHypothesisPair) -> Result<EntailmentScore, BackendError> {
        // HashMap<(String, String), _> cannot be probed with borrowed strs
        // without allocating; fixtures are small, so clone.
        match self.table.get(&(pair.premise.clone(), pair.hypothesis.clone())) {
            Some(s) => Ok(*s),
            None => match self.policy {
                MissPolicy::UniformDefault => Ok(EntailmentScore::uniform()),
                MissPolicy::Strict => Err(BackendError::FixtureMiss {
                    premise: pair.premise.clone(),
                    hypothesis: pair.hypothesis.clone(),
                }),
            },
        }
    }
}

impl Backend for FixtureBackend {
    fn score_batch(&self, pairs: &[PremiseHypothesisPair]) -> Result<Vec<EntailmentScore>, BackendError> {
        check_pairs(pairs)?;
        pairs.iter().map(|p| self.lookup(p)).collect()
    }

    fn describe(&self) -> String {
        let mode = match self.policy {
            MissPolicy::Strict => "strict",
            MissPolicy::UniformDefault => "uniform-default",
        };
        format!("fixture({} entries, {mode})", self.table.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(p: &str, h: &str) -> PremiseHypothesisPair {
        PremiseHypothesisPair::new(p, h)
    }

    #[test]
    fn replays_entries_exactly() {
        let s = EntailmentScore::new(0.9, 0.05, 0.05).unwrap();
        let mut b = FixtureBackend::default();
        b.insert("P", "H", s);
        assert_eq!(b.score_batch(&[pair("P", "H")]).unwrap(), vec![s]);
    }

    #[test]
    fn uniform_default_on_miss() {
        let b = FixtureBackend::default();
        let out = b.score_batch(&[pair("x", "y")]).unwrap();
        assert_eq!(out, vec![EntailmentScore::uniform()]);
        assert_eq!(out[0].entailment(), 1.0 / 3.0);
    }

    #[test]
    fn strict_miss_errors() {
        let mut b = FixtureBackend::new(HashMap::new(), MissPolicy::Strict);
        b.insert("P", "H", EntailmentScore::uniform());
        assert!(b.score_batch(&[pair("P", "H")]).is_ok());
        assert!(matches!(b.score_batch(&[pair("P", "other")]), Err(BackendError::FixtureMiss { .. })));
    }

    #[test]
    fn invalid_triple_rejected() {
        let bad = FixtureEntry {
            premise: "p".into(),
            hypothesis: "h".into(),
            entailment: 0.5,
            neutral: 0.5,
            contradiction: 0.5,
        };
        assert!(FixtureBackend::from_entries([bad], MissPolicy::Strict).is_err());
    }

    #[test]
    fn load_round_trip_bit_exact() {
        let entries = vec![
            FixtureEntry {
                premise: "a b".into(),
                hypothesis: "a".into(),
                entailment: 0.1 + 0.2,
                neutral: 0.35,
                contradiction: 1.0 - (0.1 + 0.2) - 0.35,
            },
            FixtureEntry {
                premise: "c".into(),
                hypothesis: "d".into(),
                entailment: 1.0 / 7.0,
                neutral: 2.0 / 7.0,
                contradiction: 4.0 / 7.0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.map");
        let text: String = entries
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect();
        std::fs::write(&path, text).unwrap();
        let b = FixtureBackend::load(&path, MissPolicy::Strict).unwrap();
        for e in &entries {
            let s = b.score_batch(&[pair(&e.premise, &e.hypothesis)]).unwrap()[0];
            assert_eq!(s.entailment().to_bits(), e.entailment.to_bits());
            assert_eq!(s.neutral().to_bits(), e.neutral.to_bits());
            assert_eq!(s.contradiction().to_bits(), e.contradiction.to_bits());
        }
    }
}
