//! Acc@8 difficulty estimation, difficulty bins and staged mixtures.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ConfigError};
use crate::grammar::render_trajectory;
use crate::optim::HybridCoeffs;
use crate::policy::{sample_trajectory, PolicyParams};
use crate::reward::{total_reward, RewardConfig};
use crate::rng::{self, Rng};
use crate::world::{Dataset, Instance};

/// Samples drawn per instance for difficulty estimation.
pub const DIFFICULTY_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurriculumError {
    #[error("every difficulty bin requested by the stage is empty")]
    AllBinsEmpty,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyBin {
    Easy,
    Medium,
    Hard,
    Excluded,
}

impl DifficultyBin {
    /// Easy `>= 7`, Medium `2..=6`, Hard `1`, Excluded `0`.
    pub fn from_count(count: usize) -> Self {
        match count {
            0 => Self::Excluded,
            1 => Self::Hard,
            2..=6 => Self::Medium,
            _ => Self::Easy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: u8,
    /// Relative weights of (Easy, Medium, Hard); normalized on use.
    pub mix: [f64; 3],
    pub coeffs: HybridCoeffs<f64>,
    pub steps: usize,
}

impl StageSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure((1..=3).contains(&self.stage), "stage.stage", || format!("must be 1..=3, got {}", self.stage))?;
        ensure(
            self.mix.iter().all(|&m| m >= 0.0 && m.is_finite()) && self.mix.iter().sum::<f64>() > 0.0,
            "stage.mix",
            || format!("weights must be >= 0 with positive sum, got {:?}", self.mix),
        )?;
        self.coeffs.validate()
    }

    pub fn ratios(&self) -> [f64; 3] {
        let s: f64 = self.mix.iter().sum();
        self.mix.map(|m| m / s)
    }
}

/// The three-stage schedule: mixtures from the per-stage sample counts
/// (thousands of Easy/Medium/Hard prompts) and the RL/SFT coefficients.
pub fn default_stages(steps_per_stage: usize) -> [StageSpec; 3] {
    let spec = |stage, mix, a, g| StageSpec {
        stage,
        mix,
        coeffs: HybridCoeffs { alpha_t: a, gamma_t: g },
        steps: steps_per_stage,
    };
    [
        spec(1, [2.0, 25.0, 18.0], 0.85, 0.15),
        spec(2, [2.0, 25.0, 34.0], 0.90, 0.10),
        spec(3, [5.0, 16.0, 40.0], 0.95, 0.05),
    ]
}

/// Instance indices per bin.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bins {
    pub easy: Vec<usize>,
    pub medium: Vec<usize>,
    pub hard: Vec<usize>,
    pub excluded: Vec<usize>,
}

impl Bins {
    pub fn get(&self, bin: DifficultyBin) -> &[usize] {
        match bin {
            DifficultyBin::Easy => &self.easy,
            DifficultyBin::Medium => &self.medium,
            DifficultyBin::Hard => &self.hard,
            DifficultyBin::Excluded => &self.excluded,
        }
    }

    fn get_mut(&mut self, bin: DifficultyBin) -> &mut Vec<usize> {
        match bin {
            DifficultyBin::Easy => &mut self.easy,
            DifficultyBin::Medium => &mut self.medium,
            DifficultyBin::Hard => &mut self.hard,
            DifficultyBin::Excluded => &mut self.excluded,
        }
    }

    pub fn total(&self) -> usize {
        self.easy.len() + self.medium.len() + self.hard.len() + self.excluded.len()
    }

    pub fn sizes(&self) -> [usize; 4] {
        [self.easy.len(), self.medium.len(), self.hard.len(), self.excluded.len()]
    }

    /// All trainable (non-excluded) indices, ascending.
    pub fn trainable(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.easy.iter().chain(&self.medium).chain(&self.hard).copied().collect();
        v.sort_unstable();
        v
    }
}

/// Acc@n: number of fully rewarded samples out of `n_samples`.
pub fn estimate_difficulty(
    params: &PolicyParams<f64>,
    instance: &Instance,
    n_samples: usize,
    rng: &mut Rng,
    reward: &RewardConfig<f64>,
) -> (usize, DifficultyBin) {
    let count = (0..n_samples.max(1))
        .filter(|_| {
            let s = sample_trajectory(params, &instance.features, rng, 1.0).expect("finite policy");
            total_reward(&render_trajectory(&s.trajectory), instance.label, reward).total == 1.0
        })
        .count();
    (count, DifficultyBin::from_count(count))
}

/// Bins every instance with its own random stream derived from `seed`.
pub fn bin_dataset(params: &PolicyParams<f64>, dataset: &Dataset, seed: u64, reward: &RewardConfig<f64>) -> Bins {
    let base = rng::derive_seed(seed, rng::DIFFICULTY);
    let verdicts: Vec<DifficultyBin> = dataset
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut r = rng::substream(base, i as u64);
            estimate_difficulty(params, inst, DIFFICULTY_SAMPLES, &mut r, reward).1
        })
        .collect();
    let mut bins = Bins::default();
    for (i, b) in verdicts.into_iter().enumerate() {
        bins.get_mut(b).push(i);
    }
    bins
}

/// Draws training batches with a stage's difficulty mixture.
#[derive(Debug, Clone)]
pub struct StageSampler<'a> {
    bins: &'a Bins,
    ratios: [f64; 3],
    /// Set when a requested bin was empty and its share was redistributed.
    pub fallback_warning: Option<String>,
}

const ORDER: [DifficultyBin; 3] = [DifficultyBin::Easy, DifficultyBin::Medium, DifficultyBin::Hard];

impl<'a> StageSampler<'a> {
    pub fn new(stage: &StageSpec, bins: &'a Bins) -> Result<Self, CurriculumError> {
        stage.validate()?;
        let mut ratios = stage.ratios();
        let mut missing = Vec::new();
        for (i, b) in ORDER.iter().enumerate() {
            if ratios[i] > 0.0 && bins.get(*b).is_empty() {
                missing.push(format!("{b:?}"));
                ratios[i] = 0.0;
            }
        }
        let kept: f64 = ratios.iter().sum();
        if kept <= 0.0 {
            // Requested bins all empty: fall back to whatever is populated.
            let present: Vec<usize> = (0..3).filter(|&i| !bins.get(ORDER[i]).is_empty()).collect();
            if present.is_empty() {
                return Err(CurriculumError::AllBinsEmpty);
            }
            ratios = [0.0; 3];
            for i in &present {
                ratios[*i] = 1.0 / present.len() as f64;
            }
        } else {
            ratios = ratios.map(|r| r / kept);
        }
        let fallback_warning = (!missing.is_empty()).then(|| {
            format!(
                "stage {}: empty bins {} redistributed, effective mix {:?}",
                stage.stage,
                missing.join(","),
                ratios
            )
        });
        Ok(Self {
            bins,
            ratios,
            fallback_warning,
        })
    }

    pub fn ratios(&self) -> [f64; 3] {
        self.ratios
    }

    pub fn draw_bin(&self, rng: &mut Rng) -> DifficultyBin {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &r) in self.ratios.iter().enumerate() {
            acc += r;
            if u < acc && r > 0.0 {
                return ORDER[i];
            }
        }
        ORDER[self.ratios.iter().rposition(|&r| r > 0.0).expect("some ratio positive")]
    }

    pub fn draw(&self, rng: &mut Rng) -> (DifficultyBin, usize) {
        let b = self.draw_bin(rng);
        let pool = self.bins.get(b);
        (b, pool[rng.random_range(0..pool.len())])
    }

    pub fn batch(&self, batch_size: usize, rng: &mut Rng) -> Vec<usize> {
        (0..batch_size).map(|_| self.draw(rng).1).collect()
    }
}

/// `n_batches` batches for one stage.
pub fn stage_batches(
    stage: &StageSpec,
    bins: &Bins,
    batch_size: usize,
    n_batches: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>, CurriculumError> {
    let sampler = StageSampler::new(stage, bins)?;
    Ok((0..n_batches).map(|_| sampler.batch(batch_size, rng)).collect())
}
