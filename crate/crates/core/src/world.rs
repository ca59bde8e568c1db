//! Synthetic relevance world.
//!
//! Each instance is a feature vector generated from a checkpoint pattern.
//! A fixed rule oracle reads the pattern back from the features, and the
//! label follows from the same decision tree the reward uses. Feature
//! layout:
//!
//! | coord | meaning | checkpoint rule |
//! |-------|---------|-----------------|
//! | 0 | entity match | irrelevant = `f0 < 0.5` |
//! | 1 | partial coverage | weak = `f1 > 0.5` |
//! | 2 | full coverage | strong = `f2 > 0.5` |
//! | 3 | supporting detail | premium = `f3 > 0.5` |
//! | 4 | source authority | official = `f4 > 0.5 && f5 > 0.5` |
//! | 5 | long-tail indicator | |
//! | 6 | shortcut (noisy copy of `label >= 2`) | |
//! | 7.. | noise | |
//!
//! Long-tail instances are the only ones where the official checkpoint
//! fires. They look like label-3 head instances everywhere except the
//! long-tail indicator, so a policy that ignores that coordinate folds them
//! into the majority mode.

use std::io::{BufRead, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ConfigError};
use crate::grammar::{CheckpointAnswer, RelevanceLabel, Trajectory, NUM_CHECKPOINTS};
use crate::reward::infer_label;
use crate::rng::{self, Rng};

pub const COORD_MATCH: usize = 0;
pub const COORD_WEAK: usize = 1;
pub const COORD_STRONG: usize = 2;
pub const COORD_PREMIUM: usize = 3;
pub const COORD_OFFICIAL: usize = 4;
pub const COORD_LONGTAIL: usize = 5;
pub const COORD_SHORTCUT: usize = 6;
/// Number of semantic coordinates; the rest are noise.
pub const SEMANTIC_DIM: usize = 7;

const THRESHOLD: f64 = 0.5;
const MARGIN: f64 = 0.05;
const SPREAD: f64 = 0.35;
const NOISE_SCALE: f64 = 0.5;
/// Head label marginal over labels 0..=3.
const HEAD_MARGINAL: [f64; 4] = [0.2, 0.25, 0.3, 0.25];

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub feature_dim: usize,
    pub longtail_rate: f64,
    pub shortcut_strength: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            longtail_rate: 0.02,
            shortcut_strength: 0.9,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.feature_dim >= SEMANTIC_DIM, "world.feature_dim", || {
            format!("must be >= {SEMANTIC_DIM}, got {}", self.feature_dim)
        })?;
        ensure((0.0..=1.0).contains(&self.longtail_rate), "world.longtail_rate", || {
            format!("must lie in [0,1], got {}", self.longtail_rate)
        })?;
        ensure(
            (0.0..=1.0).contains(&self.shortcut_strength),
            "world.shortcut_strength",
            || format!("must lie in [0,1], got {}", self.shortcut_strength),
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub features: Vec<f64>,
    #[serde(rename = "checkpoints")]
    pub truth_checkpoints: [CheckpointAnswer; NUM_CHECKPOINTS],
    pub label: RelevanceLabel,
    pub is_longtail: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub config: WorldConfig,
}

/// Rule oracle for steps 4 to 8.
pub fn oracle_checkpoints(
    features: &[f64],
    feature_dim: usize,
) -> Result<[CheckpointAnswer; NUM_CHECKPOINTS], WorldError> {
    if features.len() != feature_dim || feature_dim < SEMANTIC_DIM {
        return Err(WorldError::DimensionMismatch {
            expected: feature_dim,
            got: features.len(),
        });
    }
    let above = |c: usize| features[c] > THRESHOLD;
    Ok([
        CheckpointAnswer::from_bool(features[COORD_MATCH] < THRESHOLD),
        CheckpointAnswer::from_bool(above(COORD_WEAK)),
        CheckpointAnswer::from_bool(above(COORD_STRONG)),
        CheckpointAnswer::from_bool(above(COORD_PREMIUM)),
        CheckpointAnswer::from_bool(above(COORD_OFFICIAL) && above(COORD_LONGTAIL)),
    ])
}

/// A value strictly on the requested side of the threshold.
fn side(rng: &mut Rng, high: bool) -> f64 {
    let mag = MARGIN + rng.sample::<f64, _>(rand_distr::StandardNormal).abs() * SPREAD;
    if high {
        THRESHOLD + mag
    } else {
        THRESHOLD - mag
    }
}

fn sample_head_label(rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in HEAD_MARGINAL.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    HEAD_MARGINAL.len() - 1
}

fn gen_instance(cfg: &WorldConfig, index: usize) -> Instance {
    let mut rng = rng::substream(rng::derive_seed(cfg.seed, rng::WORLD), index as u64);
    let mut f = vec![0.0; cfg.feature_dim];
    let is_longtail = rng.random::<f64>() < cfg.longtail_rate;

    // (entity match, weak, strong, premium, authority-looking, longtail)
    let pattern: [bool; 6] = if is_longtail {
        [true, false, true, true, true, true]
    } else {
        let authority = rng.random::<f64>() < 0.4;
        match sample_head_label(&mut rng) {
            0 => [false, false, false, false, authority, false],
            1 => {
                let u: f64 = rng.random();
                if u < 0.6 {
                    [true, true, false, false, authority, false]
                } else if u < 0.85 {
                    [true, false, false, false, authority, false]
                } else {
                    [true, true, true, false, authority, false]
                }
            }
            2 => [true, false, true, false, authority, false],
            _ => [true, false, true, true, authority, false],
        }
    };
    for (c, &high) in pattern.iter().enumerate() {
        f[c] = side(&mut rng, high);
    }

    let truth = oracle_checkpoints(&f, cfg.feature_dim).expect("dimension checked by validate");
    let label = infer_label(&truth);

    let keep = rng.random::<f64>() < cfg.shortcut_strength;
    let bit = if keep { label.is_relevant() } else { rng.random::<bool>() };
    f[COORD_SHORTCUT] = f64::from(u8::from(bit)) + 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal);

    let noise = Normal::new(0.0, NOISE_SCALE).unwrap();
    for v in f.iter_mut().skip(SEMANTIC_DIM) {
        *v = noise.sample(&mut rng);
    }

    Instance {
        features: f,
        truth_checkpoints: truth,
        label,
        is_longtail,
    }
}

pub fn gen_dataset(n: usize, cfg: &WorldConfig) -> Result<Dataset, WorldError> {
    cfg.validate()?;
    ensure(n >= 1, "n", || "dataset size must be >= 1".into())?;
    let instances = (0..n).into_par_iter().map(|i| gen_instance(cfg, i)).collect();
    Ok(Dataset {
        instances,
        config: *cfg,
    })
}

/// Expert demonstration: every slot set from the oracle truth.
pub fn expert_trajectory(inst: &Instance) -> Trajectory {
    Trajectory::new(inst.label, inst.truth_checkpoints, inst.label)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Splits off the trailing `frac` of instances as a held-out set.
    pub fn split(&self, heldout_frac: f64) -> (Dataset, Dataset) {
        let n_held = ((self.len() as f64) * heldout_frac).round() as usize;
        let cut = self.len() - n_held.min(self.len());
        (
            Dataset {
                instances: self.instances[..cut].to_vec(),
                config: self.config,
            },
            Dataset {
                instances: self.instances[cut..].to_vec(),
                config: self.config,
            },
        )
    }

    pub fn label_counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for i in &self.instances {
            c[i.label.index()] += 1;
        }
        c
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), WorldError> {
        for inst in &self.instances {
            serde_json::to_writer(&mut w, inst).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads instances back, checking dimensions and label consistency.
    /// Without annotation noise the checkpoints must also match the oracle.
    pub fn read_jsonl<R: BufRead>(r: R, config: WorldConfig) -> Result<Dataset, WorldError> {
        let mut instances = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| WorldError::Malformed { line: i + 1, reason };
            let inst: Instance = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            let truth = oracle_checkpoints(&inst.features, config.feature_dim)?;
            if infer_label(&inst.truth_checkpoints) != inst.label {
                return Err(malformed("label disagrees with its checkpoints".into()));
            }
            if truth != inst.truth_checkpoints {
                return Err(malformed("checkpoints disagree with the oracle".into()));
            }
            instances.push(inst);
        }
        Ok(Dataset { instances, config })
    }
}
