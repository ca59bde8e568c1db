use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, Sampling};
use super::log::RunLog;
use super::train::{prepare_data, sft_warmup, train_from, with_pool, TrainOutcome};
use super::RunError;
use crate::error::ConfigError;
use crate::metrics::MetricsRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub label: String,
    pub mode: Mode,
    pub sampling: Sampling,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub final_step: u64,
    pub samples_seen: u64,
    pub reward_mean_tail: f64,
    pub entropy: f64,
    pub five_acc: f64,
    pub pair_acc: f64,
    pub ndcg3: f64,
    pub longtail_checkpoint_acc: f64,
    pub initial_longtail_checkpoint_acc: f64,
}

/// Samples needed to reach 95% of pure GRPO's best smoothed reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyProbe {
    pub window: usize,
    pub threshold: f64,
    pub reference: String,
    pub reference_samples: Option<u64>,
    pub candidate: String,
    pub candidate_samples: Option<u64>,
}

impl EfficiencyProbe {
    /// Candidate samples over reference samples.
    pub fn ratio(&self) -> Option<f64> {
        Some(self.candidate_samples? as f64 / self.reference_samples?.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub summary: Vec<SummaryRow>,
    pub efficiency: Option<EfficiencyProbe>,
}

pub fn label(mode: Mode, sampling: Sampling) -> String {
    format!("{}/{}", mode.as_str(), sampling.as_str())
}

/// The standard matrix around `base`: the three modes under curriculum
/// sampling, plus mode-balanced under random sampling.
pub fn standard_matrix(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    [
        (Mode::ModeBalanced, Sampling::Curriculum),
        (Mode::PureGrpo, Sampling::Curriculum),
        (Mode::SftOnly, Sampling::Curriculum),
        (Mode::ModeBalanced, Sampling::Random),
    ]
    .into_iter()
    .map(|(mode, sampling)| super::train::variant(base, mode, sampling))
    .collect()
}

/// At least two configs that differ only in mode or sampling.
pub fn check_matrix(cfgs: &[ExperimentConfig]) -> Result<(), RunError> {
    if cfgs.len() < 2 {
        return Err(ConfigError::new("ablation", "needs at least two configs").into());
    }
    let strip = |c: &ExperimentConfig| {
        let mut c = c.clone();
        c.mode = Mode::ModeBalanced;
        c.sampling = Sampling::Curriculum;
        c.canonical_json()
    };
    let base = strip(&cfgs[0]);
    for (i, c) in cfgs.iter().enumerate() {
        c.validate()?;
        if strip(c) != base {
            return Err(ConfigError::new("ablation", format!("config {i} differs from config 0 beyond mode/sampling")).into());
        }
    }
    Ok(())
}

fn smoothed(records: &[MetricsRecord], window: usize) -> Vec<(u64, f64)> {
    let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.step > 0).collect();
    let w = window.max(1);
    (0..rows.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let m = rows[lo..=i].iter().map(|r| r.reward_mean).sum::<f64>() / (i + 1 - lo) as f64;
            (rows[i].samples_seen, m)
        })
        .collect()
}

pub fn efficiency_probe(reference: &RunLog, candidate: &RunLog, window: usize) -> EfficiencyProbe {
    let r = smoothed(&reference.records, window);
    let c = smoothed(&candidate.records, window);
    let best = r.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let threshold = 0.95 * best;
    let first = |v: &[(u64, f64)]| v.iter().find(|x| x.1 >= threshold).map(|x| x.0);
    EfficiencyProbe {
        window,
        threshold,
        reference: label_of(reference),
        reference_samples: first(&r),
        candidate: label_of(candidate),
        candidate_samples: first(&c),
    }
}

fn label_of(log: &RunLog) -> String {
    format!("{}/{}", log.manifest.mode, log.manifest.sampling)
}

fn summarize(label: &str, log: &RunLog) -> SummaryRow {
    let last = log.records.last().expect("row 0 always present");
    let tail: Vec<f64> = log.records.iter().rev().take(100).filter(|r| r.step > 0).map(|r| r.reward_mean).collect();
    SummaryRow {
        label: label.into(),
        final_step: last.step,
        samples_seen: last.samples_seen,
        reward_mean_tail: if tail.is_empty() { last.reward_mean } else { tail.iter().sum::<f64>() / tail.len() as f64 },
        entropy: last.entropy,
        five_acc: last.five_acc,
        pair_acc: last.pair_acc,
        ndcg3: last.ndcg3,
        longtail_checkpoint_acc: last.longtail_checkpoint_acc,
        initial_longtail_checkpoint_acc: log.records[0].longtail_checkpoint_acc,
    }
}

/// Runs every config from one shared dataset and cold-start checkpoint.
pub fn run_ablation(cfgs: &[ExperimentConfig]) -> Result<AblationReport, RunError> {
    check_matrix(cfgs)?;
    with_pool(cfgs[0].deterministic, || {
        let data = prepare_data(&cfgs[0])?;
        let init = sft_warmup(&cfgs[0], &data.train)?;
        let mut runs = Vec::new();
        for c in cfgs {
            let outcome = train_from(c, &data, &init)?;
            runs.push(AblationRun {
                label: label(c.mode, c.sampling),
                mode: c.mode,
                sampling: c.sampling,
                outcome,
            });
        }
        let summary = runs.iter().map(|r| summarize(&r.label, &r.outcome.log)).collect();
        let find = |m: Mode| runs.iter().find(|r| r.mode == m && r.sampling == Sampling::Curriculum);
        let efficiency = match (find(Mode::PureGrpo), find(Mode::ModeBalanced)) {
            (Some(p), Some(m)) => Some(efficiency_probe(&p.outcome.log, &m.outcome.log, 50)),
            _ => None,
        };
        Ok(AblationReport {
            runs,
            summary,
            efficiency,
        })
    })
}

const SIDE_BY_SIDE: [&str; 6] = ["reward_mean", "entropy", "five_acc", "pair_acc", "ndcg3", "longtail_checkpoint_acc"];

fn pick(r: &MetricsRecord, col: &str) -> f64 {
    match col {
        "reward_mean" => r.reward_mean,
        "entropy" => r.entropy,
        "five_acc" => r.five_acc,
        "pair_acc" => r.pair_acc,
        "ndcg3" => r.ndcg3,
        _ => r.longtail_checkpoint_acc,
    }
}

impl AblationReport {
    /// One row per step, one column per (run, metric).
    pub fn side_by_side_csv(&self) -> String {
        let mut out = String::from("step");
        for run in &self.runs {
            for col in SIDE_BY_SIDE {
                let _ = write!(out, ",{}:{col}", run.label);
            }
        }
        out.push('\n');
        let n = self.runs.iter().map(|r| r.outcome.log.records.len()).min().unwrap_or(0);
        for i in 0..n {
            let _ = write!(out, "{}", self.runs[0].outcome.log.records[i].step);
            for run in &self.runs {
                let rec = &run.outcome.log.records[i];
                for col in SIDE_BY_SIDE {
                    let _ = write!(out, ",{:?}", pick(rec, col));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "label,final_step,samples_seen,reward_mean_tail,entropy,five_acc,pair_acc,ndcg3,longtail_checkpoint_acc,initial_longtail_checkpoint_acc\n",
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                s.label,
                s.final_step,
                s.samples_seen,
                s.reward_mean_tail,
                s.entropy,
                s.five_acc,
                s.pair_acc,
                s.ndcg3,
                s.longtail_checkpoint_acc,
                s.initial_longtail_checkpoint_acc
            );
        }
        out
    }

    pub fn run(&self, mode: Mode, sampling: Sampling) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.mode == mode && r.sampling == sampling)
    }
}
