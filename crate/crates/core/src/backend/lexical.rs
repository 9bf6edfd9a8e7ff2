use std::collections::HashSet;

use super::{check_pairs, Backend, BackendError, EntailmentScore, PremiseHypothesisPair};

/// Offline token-overlap heuristic.
///
/// entailment = |tokens(hypothesis) ∩ tokens(premise)| / |tokens(hypothesis)|
/// over whitespace-separated, case-sensitive token sets; the remainder is split
/// evenly between neutral and contradiction.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalBackend;

impl LexicalBackend {
    pub fn new() -> Self {
        LexicalBackend
    }

    pub fn score_pair(premise: &str, hypothesis: &str) -> EntailmentScore {
        let premise: HashSet<&str> = premise.split_whitespace().collect();
        let hyp: HashSet<&str> = hypothesis.split_whitespace().collect();
        let entailment = if hyp.is_empty() {
            0.0
        } else {
            hyp.iter().filter(|t| premise.contains(*t)).count() as f64 / hyp.len() as f64
        };
        let rest = (1.0 - entailment) / 2.0;
        EntailmentScore::new(entailment, rest, rest).expect("overlap ratio is a valid score")
    }
}

impl Backend for LexicalBackend {
    fn score_batch(&self, pairs: &[PremiseHypothesisPair]) -> Result<Vec<EntailmentScore>, BackendError> {
        check_pairs(pairs)?;
        Ok(pairs
            .iter()
            .map(|p| Self::score_pair(&p.premise, &p.hypothesis))
            .collect())
    }

    fn describe(&self) -> String {
        "lexical".to_string()
    }
}
