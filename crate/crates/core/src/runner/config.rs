use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::curriculum::{default_stages, StageSpec};
use crate::error::{ensure, ConfigError};
use crate::optim::{HybridCoeffs, OptimConfig};
use crate::reward::RewardConfig;
use crate::world::WorldConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ModeBalanced,
    PureGrpo,
    SftOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ModeBalanced => "mode_balanced",
            Self::PureGrpo => "pure_grpo",
            Self::SftOnly => "sft_only",
        }
    }

    /// Coefficients in effect during `stage`.
    pub fn coeffs(self, stage: &StageSpec) -> HybridCoeffs<f64> {
        match self {
            Self::ModeBalanced => stage.coeffs,
            Self::PureGrpo => HybridCoeffs::pure_rl(),
            Self::SftOnly => HybridCoeffs::pure_sft(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Stage mixtures over the Acc@8 bins.
    Curriculum,
    /// Uniform over the same trainable (non-excluded) pool.
    Random,
}

impl Sampling {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Curriculum => "curriculum",
            Self::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Projected input width of the reduced-capacity student.
    pub student_dim: usize,
    /// Match all seven slot distributions instead of the decision slot only.
    pub all_slots: bool,
    pub init_scale: f64,
    /// Teacher parameters; trained from the experiment config when absent.
    pub teacher_path: Option<PathBuf>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            steps: 2_000,
            batch_size: 64,
            learning_rate: 0.02,
            student_dim: 14,
            all_slots: false,
            init_scale: 0.1,
            teacher_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KlLabConfig {
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub learning_rate: f64,
    pub max_width: f64,
    pub trace_every: usize,
}

impl Default for KlLabConfig {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            steps: 3_000,
            learning_rate: 0.1,
            max_width: 20.0,
            trace_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    /// Instances generated before the held-out split.
    pub n_instances: usize,
    pub heldout_frac: f64,
    pub reward: RewardConfig<f64>,
    pub optim: OptimConfig<f64>,
    pub stages: [StageSpec; 3],
    pub sft_warmup_steps: usize,
    pub warmup_learning_rate: f64,
    pub rl_batch_size: usize,
    pub sft_batch_size: usize,
    pub rollout_temperature: f64,
    pub eval_interval: usize,
    pub mode: Mode,
    pub sampling: Sampling,
    /// Re-estimate Acc@8 at each stage boundary instead of once.
    pub rebin_each_stage: bool,
    pub seed: u64,
    pub deterministic: bool,
    pub output_dir: Option<PathBuf>,
    pub distill: DistillConfig,
    pub kl_lab: KlLabConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            n_instances: 10_000,
            heldout_frac: 0.2,
            reward: RewardConfig::default(),
            optim: OptimConfig::default(),
            stages: default_stages(2_000),
            sft_warmup_steps: 500,
            warmup_learning_rate: 1e-2,
            rl_batch_size: 64,
            sft_batch_size: 64,
            rollout_temperature: 1.0,
            eval_interval: 100,
            mode: Mode::ModeBalanced,
            sampling: Sampling::Curriculum,
            rebin_each_stage: false,
            seed: 0,
            deterministic: false,
            output_dir: None,
            distill: DistillConfig::default(),
            kl_lab: KlLabConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::new("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.world.validate()?;
        self.reward.validate()?;
        self.optim.validate()?;
        for (i, s) in self.stages.iter().enumerate() {
            s.validate()?;
            ensure(usize::from(s.stage) == i + 1, "stages", || {
                format!("stage {} listed at position {}", s.stage, i + 1)
            })?;
        }
        ensure(self.n_instances >= 2, "n_instances", || "must be >= 2".into())?;
        ensure(
            self.heldout_frac > 0.0 && self.heldout_frac < 1.0,
            "heldout_frac",
            || format!("must lie in (0,1), got {}", self.heldout_frac),
        )?;
        ensure(self.warmup_learning_rate > 0.0, "warmup_learning_rate", || "must be > 0".into())?;
        ensure(self.rl_batch_size >= 1, "rl_batch_size", || "must be >= 1".into())?;
        ensure(self.sft_batch_size >= 1, "sft_batch_size", || "must be >= 1".into())?;
        ensure(self.rollout_temperature > 0.0, "rollout_temperature", || "must be > 0".into())?;
        ensure(self.eval_interval >= 1, "eval_interval", || "must be >= 1".into())?;
        ensure(
            self.distill.student_dim >= 1 && self.distill.student_dim < self.world.feature_dim,
            "distill.student_dim",
            || format!("must lie in [1, feature_dim), got {}", self.distill.student_dim),
        )?;
        ensure(self.distill.batch_size >= 1, "distill.batch_size", || "must be >= 1".into())?;
        ensure(self.distill.learning_rate > 0.0, "distill.learning_rate", || "must be > 0".into())?;
        ensure(
            self.kl_lab.max_width > 0.5 && self.kl_lab.learning_rate > 0.0,
            "kl_lab",
            || "max_width must exceed 0.5 and learning_rate be > 0".into(),
        )?;
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// Canonical JSON with the output location removed; hashed into the manifest.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        serde_json::to_string(&c).expect("config serializes")
    }
}
