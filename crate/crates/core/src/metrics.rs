//! Evaluation suite: exact and grouped accuracy, per-class P/R/F1, same-query
//! pair accuracy on the weighted expected score, and NDCG@k.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{RelevanceLabel, NUM_LABELS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no records")]
    Empty,
    #[error("no same-query pairs with different labels")]
    NoEligiblePairs,
    #[error("k must be >= 1")]
    BadK,
    #[error("no query has a positive ideal DCG")]
    NoGradedQueries,
}

/// One evaluated document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub y_true: RelevanceLabel,
    pub y_pred: RelevanceLabel,
    /// Weighted expected score in `[0, 4]`.
    pub score: f64,
}

/// One logged row. Training rows carry the loss and coefficient columns;
/// the metric columns are those of the most recent evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub stage: u8,
    /// Curriculum prompts drawn so far (RL batch size times steps).
    pub samples_seen: u64,
    pub alpha_t: f64,
    pub gamma_t: f64,
    pub loss_rl: f64,
    pub loss_sft: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub entropy: f64,
    pub five_acc: f64,
    pub two_acc: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub pair_acc: f64,
    pub ndcg3: f64,
    pub longtail_checkpoint_acc: f64,
}

pub const METRICS_COLUMNS: [&str; 17] = [
    "step",
    "stage",
    "samples_seen",
    "alpha_t",
    "gamma_t",
    "loss_rl",
    "loss_sft",
    "reward_mean",
    "reward_std",
    "entropy",
    "five_acc",
    "two_acc",
    "macro_f1",
    "weighted_f1",
    "pair_acc",
    "ndcg3",
    "longtail_checkpoint_acc",
];

impl MetricsRecord {
    pub fn csv_header() -> String {
        METRICS_COLUMNS.join(",")
    }

    /// Floats are written with Rust's shortest round-trip formatting.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.step,
            self.stage,
            self.samples_seen,
            self.alpha_t,
            self.gamma_t,
            self.loss_rl,
            self.loss_sft,
            self.reward_mean,
            self.reward_std,
            self.entropy,
            self.five_acc,
            self.two_acc,
            self.macro_f1,
            self.weighted_f1,
            self.pair_acc,
            self.ndcg3,
            self.longtail_checkpoint_acc
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self, String> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != METRICS_COLUMNS.len() {
            return Err(format!("expected {} columns, got {}", METRICS_COLUMNS.len(), cols.len()));
        }
        let f = |i: usize| cols[i].parse::<f64>().map_err(|e| format!("{}: {e}", METRICS_COLUMNS[i]));
        let u = |i: usize| cols[i].parse::<u64>().map_err(|e| format!("{}: {e}", METRICS_COLUMNS[i]));
        Ok(Self {
            step: u(0)?,
            stage: cols[1].parse().map_err(|e| format!("stage: {e}"))?,
            samples_seen: u(2)?,
            alpha_t: f(3)?,
            gamma_t: f(4)?,
            loss_rl: f(5)?,
            loss_sft: f(6)?,
            reward_mean: f(7)?,
            reward_std: f(8)?,
            entropy: f(9)?,
            five_acc: f(10)?,
            two_acc: f(11)?,
            macro_f1: f(12)?,
            weighted_f1: f(13)?,
            pair_acc: f(14)?,
            ndcg3: f(15)?,
            longtail_checkpoint_acc: f(16)?,
        })
    }
}

fn nonempty(records: &[PredictionRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        Err(MetricsError::Empty)
    } else {
        Ok(())
    }
}

pub fn five_acc(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    nonempty(records)?;
    let hits = records.iter().filter(|r| r.y_pred == r.y_true).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Accuracy after grouping labels into {0,1} and {2,3,4}.
pub fn two_acc(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    nonempty(records)?;
    let hits = records
        .iter()
        .filter(|r| r.y_pred.is_relevant() == r.y_true.is_relevant())
        .count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub classes: [ClassPrf; NUM_LABELS],
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl PrfReport {
    /// Rows of `label,precision,recall,f1,support`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,precision,recall,f1,support\n");
        for (k, c) in self.classes.iter().enumerate() {
            let _ = writeln!(out, "{k},{:.6},{:.6},{:.6},{}", c.precision, c.recall, c.f1, c.support);
        }
        let _ = writeln!(out, "macro,,,{:.6},", self.macro_f1);
        let _ = writeln!(out, "weighted,,,{:.6},", self.weighted_f1);
        out
    }
}

pub fn confusion_matrix(records: &[PredictionRecord]) -> [[usize; NUM_LABELS]; NUM_LABELS] {
    let mut m = [[0usize; NUM_LABELS]; NUM_LABELS];
    for r in records {
        m[r.y_true.index()][r.y_pred.index()] += 1;
    }
    m
}

/// One-vs-rest P/R/F1. A ratio with a zero denominator is 0, so a class
/// absent from both truth and predictions adds F1 = 0 to the macro mean.
pub fn per_class_prf(records: &[PredictionRecord]) -> Result<PrfReport, MetricsError> {
    nonempty(records)?;
    let m = confusion_matrix(records);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut classes = [ClassPrf::default(); NUM_LABELS];
    for k in 0..NUM_LABELS {
        let tp = m[k][k];
        let predicted: usize = (0..NUM_LABELS).map(|t| m[t][k]).sum();
        let support: usize = m[k].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        classes[k] = ClassPrf {
            precision,
            recall,
            f1,
            support,
        };
    }
    let macro_f1 = classes.iter().map(|c| c.f1).sum::<f64>() / NUM_LABELS as f64;
    let weighted_f1 = classes.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / records.len() as f64;
    Ok(PrfReport {
        classes,
        macro_f1,
        weighted_f1,
    })
}

/// How a pair with equal scores but different labels is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    Incorrect,
    Half,
}

fn group_by_query(records: &[PredictionRecord]) -> Vec<Vec<&PredictionRecord>> {
    let mut groups: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.query_id.as_str()).or_default().push(r);
    }
    groups.into_values().collect()
}

pub fn pair_acc(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    pair_acc_with(records, TieRule::Incorrect)
}

/// Over same-query pairs with different labels: correct iff the score order
/// agrees with the label order. Equal-label pairs are excluded.
pub fn pair_acc_with(records: &[PredictionRecord], ties: TieRule) -> Result<f64, MetricsError> {
    let counts: Vec<(u64, u64, u64)> = group_by_query(records)
        .par_iter()
        .map(|g| {
            let (mut correct, mut tied, mut total) = (0u64, 0u64, 0u64);
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    let (a, b) = (g[i], g[j]);
                    if a.y_true == b.y_true {
                        continue;
                    }
                    total += 1;
                    if a.score == b.score {
                        tied += 1;
                    } else if (a.score > b.score) == (a.y_true > b.y_true) {
                        correct += 1;
                    }
                }
            }
            (correct, tied, total)
        })
        .collect();
    let (correct, tied, total) = counts
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    if total == 0 {
        return Err(MetricsError::NoEligiblePairs);
    }
    let credit = match ties {
        TieRule::Incorrect => correct as f64,
        TieRule::Half => correct as f64 + 0.5 * tied as f64,
    };
    Ok(credit / total as f64)
}

fn gain(label: RelevanceLabel) -> f64 {
    2f64.powi(label.value() as i32) - 1.0
}

fn dcg(labels: impl Iterator<Item = RelevanceLabel>, k: usize) -> f64 {
    labels
        .take(k)
        .enumerate()
        .map(|(i, l)| gain(l) / ((i + 2) as f64).log2())
        .sum()
}

/// Mean NDCG@k over queries. Documents are ranked by score descending with
/// ties kept in input order; queries whose ideal DCG is zero are skipped.
pub fn ndcg_at_k(records: &[PredictionRecord], k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadK);
    }
    nonempty(records)?;
    let per_query: Vec<Option<f64>> = group_by_query(records)
        .par_iter()
        .map(|g| {
            let mut ideal: Vec<RelevanceLabel> = g.iter().map(|r| r.y_true).collect();
            ideal.sort_by(|a, b| b.cmp(a));
            let idcg = dcg(ideal.into_iter(), k);
            if idcg == 0.0 {
                return None;
            }
            let mut ranked = g.clone();
            ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
            Some(dcg(ranked.iter().map(|r| r.y_true), k) / idcg)
        })
        .collect();
    let scored: Vec<f64> = per_query.into_iter().flatten().collect();
    if scored.is_empty() {
        return Err(MetricsError::NoGradedQueries);
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}

/// Full metric block as emitted by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub five_acc: f64,
    pub two_acc: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub pair_acc: Option<f64>,
    pub ndcg3: Option<f64>,
    pub per_class: PrfReport,
}

pub fn evaluate(records: &[PredictionRecord]) -> Result<EvalSummary, MetricsError> {
    let per_class = per_class_prf(records)?;
    Ok(EvalSummary {
        n: records.len(),
        five_acc: five_acc(records)?,
        two_acc: two_acc(records)?,
        macro_f1: per_class.macro_f1,
        weighted_f1: per_class.weighted_f1,
        pair_acc: pair_acc(records).ok(),
        ndcg3: ndcg_at_k(records, 3).ok(),
        per_class,
    })
}
