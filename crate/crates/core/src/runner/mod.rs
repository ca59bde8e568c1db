//! Experiment orchestration: configuration, the staged training loop,
//! ablations, distillation and run logs.

mod ablation;
mod config;
mod distill;
mod kl;
mod log;
mod train;

use thiserror::Error;

pub use ablation::{
    check_matrix, efficiency_probe, label, run_ablation, standard_matrix, AblationReport, AblationRun,
    EfficiencyProbe, SummaryRow,
};
pub use config::{DistillConfig, ExperimentConfig, KlLabConfig, Mode, Sampling};
pub use distill::{distill_loss_and_grad, matched_student, reduced_student, run_distill, DistillReport};
pub use kl::{kl_demo, run_kl_lab, KlLabReport, SeedFits};
pub use log::{read_csv, sha256_hex, Manifest, RunLog, RUNLOG_FORMAT, RUNLOG_VERSION};
pub use train::{
    evaluate_policy, longtail_checkpoint_acc, predictions, prepare_data, rollout_batch, run_training, save_outcome,
    sft_warmup, train_from, variant, with_pool, EvalSnapshot, NumericAbort, Prepared, TrainOutcome, QUERY_GROUP,
};

use crate::curriculum::CurriculumError;
use crate::error::ConfigError;
use crate::kl_lab::KlError;
use crate::metrics::MetricsError;
use crate::optim::OptimError;
use crate::policy::PolicyError;
use crate::world::WorldError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Kl(#[from] KlError),
    #[error("numeric abort at step {step}: {reason}")]
    NumericAbort { step: u64, reason: String },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RunError {
    /// Process exit code: 2 for bad configuration, 3 for numeric failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::World(WorldError::Config(_)) | Self::Curriculum(CurriculumError::Config(_)) => 2,
            Self::Optim(OptimError::Config(_)) => 2,
            Self::NumericAbort { .. } | Self::Optim(OptimError::NonFiniteLoss { .. }) => 3,
            Self::Policy(PolicyError::NonFiniteLogits(_)) | Self::Kl(KlError::Diverged(_)) => 3,
            _ => 1,
        }
    }
}
