//! TACRED-style micro scoring, auxiliary positive-only and positive-vs-negative
//! metrics, row-normalized confusion matrices, and threshold sweeps.
//!
//! "Positive" always means "not the negative label". A prediction is correct
//! when it is positive and equals the gold label.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("label `{0}` is not in the label order")]
    UnorderedLabel(String),
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Zero denominators give zero, as the TACRED scorer does.
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub gold_positive: usize,
    pub predicted_positive: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `rows[i][j]`: share of gold `labels[i]` instances predicted as `labels[j]`.
    pub rows: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn cell(&self, gold: &str, pred: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == gold)?;
        let j = self.labels.iter().position(|l| l == pred)?;
        Some(self.rows[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.rows) {
            out.push_str(l);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: Support,
    /// Micro scores over gold-positive instances only.
    pub p_metric: Prf,
    /// Binary positive-vs-negative scores.
    pub pvsn_metric: Prf,
    pub confusion: ConfusionMatrix,
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: f64| 100.0 * x;
        writeln!(f, "{:<8} {:>9} {:>9} {:>9}", "metric", "precision", "recall", "f1")?;
        writeln!(
            f,
            "{:<8} {:>9.2} {:>9.2} {:>9.2}",
            "micro",
            pct(self.precision),
            pct(self.recall),
            pct(self.f1)
        )?;
        for (name, m) in [("P", &self.p_metric), ("PvsN", &self.pvsn_metric)] {
            writeln!(
                f,
                "{:<8} {:>9.2} {:>9.2} {:>9.2}",
                name,
                pct(m.precision),
                pct(m.recall),
                pct(m.f1)
            )?;
        }
        write!(
            f,
            "gold positives {}, predicted positives {}, correct {}",
            self.support.gold_positive, self.support.predicted_positive, self.support.correct
        )
    }
}

fn check_lengths<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn evaluate<S: AsRef<str>>(gold: &[S], pred: &[S], negative_label: &str) -> Result<ScoreReport, EvalError> {
    check_lengths(gold, pred)?;
    let neg = negative_label;
    let mut support = Support {
        gold_positive: 0,
        predicted_positive: 0,
        correct: 0,
    };
    // Restricted to gold positives.
    let (mut p_pred, mut p_correct) = (0, 0);
    // Binary view.
    let mut pvsn_correct = 0;
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        let g_pos = g != neg;
        let p_pos = p != neg;
        support.gold_positive += g_pos as usize;
        support.predicted_positive += p_pos as usize;
        if p_pos && g == p {
            support.correct += 1;
        }
        if g_pos {
            p_pred += p_pos as usize;
            p_correct += (p_pos && g == p) as usize;
        }
        pvsn_correct += (g_pos && p_pos) as usize;
    }
    let micro = Prf::from_counts(support.correct, support.predicted_positive, support.gold_positive);
    let order = label_order(gold, pred, neg);
    Ok(ScoreReport {
        precision: micro.precision,
        recall: micro.recall,
        f1: micro.f1,
        support,
        p_metric: Prf::from_counts(p_correct, p_pred, support.gold_positive),
        pvsn_metric: Prf::from_counts(pvsn_correct, support.predicted_positive, support.gold_positive),
        confusion: confusion_matrix(gold, pred, &order)?,
    })
}

/// Every label seen in gold or predictions, lexicographic, negative label last.
pub fn label_order<S: AsRef<str>>(gold: &[S], pred: &[S], negative_label: &str) -> Vec<String> {
    let mut labels: BTreeSet<&str> = gold.iter().chain(pred).map(AsRef::as_ref).collect();
    let had_negative = labels.remove(negative_label);
    let mut out: Vec<String> = labels.into_iter().map(String::from).collect();
    if had_negative {
        out.push(negative_label.to_string());
    }
    out
}

/// Row-normalized confusion matrix; rows without gold instances are all zero.
pub fn confusion_matrix<S: AsRef<str>>(
    gold: &[S],
    pred: &[S],
    label_order: &[String],
) -> Result<ConfusionMatrix, EvalError> {
    check_lengths(gold, pred)?;
    let index: HashMap<&str, usize> = label_order
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let lookup = |l: &str| index.get(l).copied().ok_or_else(|| EvalError::UnorderedLabel(l.to_string()));
    let n = label_order.len();
    let mut counts = vec![vec![0usize; n]; n];
    for (g, p) in gold.iter().zip(pred) {
        counts[lookup(g.as_ref())?][lookup(p.as_ref())?] += 1;
    }
    let rows = counts
        .into_iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.into_iter()
                .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix {
        labels: label_order.to_vec(),
        rows,
    })
}

/// What threshold tuning needs to know about one development example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevScore {
    /// Highest positive relation score, or `None` when the type gate left no
    /// candidate relation (such an example is never predicted positive).
    pub max_score: Option<f64>,
    pub gold_positive: bool,
    /// Whether the highest-scoring relation equals the gold label.
    pub argmax_correct: bool,
}

impl DevScore {
    pub fn predicted_positive(&self, threshold: f64) -> bool {
        self.max_score.is_some_and(|s| s >= threshold)
    }
}

/// Micro scores of the threshold rule at one threshold.
pub fn prf_at(scores: &[DevScore], threshold: f64) -> Prf {
    let gold = scores.iter().filter(|s| s.gold_positive).count();
    let mut predicted = 0;
    let mut correct = 0;
    for s in scores {
        if s.predicted_positive(threshold) {
            predicted += 1;
            if s.gold_positive && s.argmax_correct {
                correct += 1;
            }
        }
    }
    Prf::from_counts(correct, predicted, gold)
}

/// F1 of the threshold rule at each grid point.
pub fn f1_sweep(scores: &[DevScore], grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter().map(|&t| (t, prf_at(scores, t).f1)).collect()
}

/// Summary statistics over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (0 for a single run).
    pub std_dev: f64,
    pub std_err: f64,
}

impl RunStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let std_dev = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(RunStats {
            n,
            mean,
            median,
            std_dev,
            std_err: std_dev / (n as f64).sqrt(),
        })
    }
}

/// Per-label gold counts, handy for report headers.
pub fn label_counts<S: AsRef<str>>(labels: &[S]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l.as_ref().to_string()).or_insert(0) += 1;
    }
    out
}
