use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, Sampling};
use super::log::{Manifest, RunLog};
use super::RunError;
use crate::curriculum::{bin_dataset, Bins, StageSampler};
use crate::grammar::{render_trajectory, SlotIndex, Trajectory};
use crate::metrics::{self, MetricsRecord, PredictionRecord};
use crate::optim::{hybrid_step, GroupRollout, HybridCoeffs, OptimError, Optimizer, OptimizerKind};
use crate::policy::{sample_trajectory, slot_distribution, weighted_expected_score, PolicyError, PolicyParams};
use crate::reward::{total_reward, weight_mask, RewardConfig};
use crate::rng::{self, Rng};
use crate::world::{expert_trajectory, gen_dataset, Dataset};

pub type Policy = PolicyParams<f64>;

/// Documents per synthetic query in the held-out set.
pub const QUERY_GROUP: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: Dataset,
    pub heldout: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared, RunError> {
    let ds = gen_dataset(cfg.n_instances, &cfg.world)?;
    let (train, heldout) = ds.split(cfg.heldout_frac);
    if train.is_empty() || heldout.is_empty() {
        return Err(RunError::Config(crate::ConfigError::new(
            "heldout_frac",
            "split leaves an empty train or held-out set",
        )));
    }
    Ok(Prepared { train, heldout })
}

fn sft_examples(train: &Dataset, idx: &[usize]) -> Vec<(Vec<f64>, Trajectory)> {
    idx.iter()
        .map(|&i| {
            let inst = &train.instances[i];
            (inst.features.clone(), expert_trajectory(inst))
        })
        .collect()
}

fn uniform_indices(n: usize, count: usize, r: &mut Rng) -> Vec<usize> {
    (0..count).map(|_| r.random_range(0..n)).collect()
}

/// Cold-start SFT from the zero policy.
pub fn sft_warmup(cfg: &ExperimentConfig, train: &Dataset) -> Result<Policy, RunError> {
    let mut params = Policy::zeros(cfg.world.feature_dim);
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.warmup_learning_rate, params.len());
    let base = rng::derive_seed(cfg.seed, rng::WARMUP);
    let coeffs = HybridCoeffs::pure_sft();
    let mask = weight_mask(&cfg.reward);
    for step in 0..cfg.sft_warmup_steps {
        let mut r = rng::substream(base, step as u64);
        let batch = sft_examples(train, &uniform_indices(train.len(), cfg.sft_batch_size, &mut r));
        let reference = params.clone();
        hybrid_step(&mut params, &reference, &[], &batch, &coeffs, &mask, &cfg.optim, &mut opt)?;
    }
    Ok(params)
}

/// Held-out records: greedy decision label and weighted expected score,
/// grouped into queries of eight consecutive documents.
pub fn predictions(params: &Policy, heldout: &Dataset) -> Result<Vec<PredictionRecord>, PolicyError> {
    heldout
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let d = slot_distribution(params, &inst.features, SlotIndex::DECISION, 1.0)?;
            Ok(PredictionRecord {
                query_id: format!("q{}", i / QUERY_GROUP),
                y_true: inst.label,
                y_pred: crate::RelevanceLabel::from_index(d.argmax()),
                score: weighted_expected_score(&d)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub entropy: f64,
    pub five_acc: f64,
    pub two_acc: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub pair_acc: f64,
    pub ndcg3: f64,
    pub longtail_checkpoint_acc: f64,
}

/// Mean probability of the true official checkpoint over long-tail
/// instances; `None` when there are none.
pub fn longtail_checkpoint_acc(params: &Policy, data: &Dataset) -> Result<Option<f64>, PolicyError> {
    let slot = SlotIndex::checkpoint(4);
    let probs: Vec<f64> = data
        .instances
        .iter()
        .filter(|i| i.is_longtail)
        .map(|inst| {
            let truth = inst.truth_checkpoints[4].token().expect("oracle answers are yes/no");
            Ok(slot_distribution(params, &inst.features, slot, 1.0)?.probs[truth])
        })
        .collect::<Result<_, PolicyError>>()?;
    Ok((!probs.is_empty()).then(|| probs.iter().sum::<f64>() / probs.len() as f64))
}

pub fn evaluate_policy(params: &Policy, heldout: &Dataset) -> Result<EvalSnapshot, RunError> {
    let records = predictions(params, heldout)?;
    let summary = metrics::evaluate(&records)?;
    let feats: Vec<&[f64]> = heldout.instances.iter().map(|i| i.features.as_slice()).collect();
    Ok(EvalSnapshot {
        entropy: crate::policy::entropy(params, &feats)?,
        five_acc: summary.five_acc,
        two_acc: summary.two_acc,
        macro_f1: summary.macro_f1,
        weighted_f1: summary.weighted_f1,
        pair_acc: summary.pair_acc.unwrap_or(0.0),
        ndcg3: summary.ndcg3.unwrap_or(0.0),
        longtail_checkpoint_acc: longtail_checkpoint_acc(params, heldout)?.unwrap_or(0.0),
    })
}

/// `G` rollouts per instance, scored on the rendered text.
pub fn rollout_batch(
    params: &Policy,
    data: &Dataset,
    idx: &[usize],
    group_size: usize,
    temperature: f64,
    reward: &RewardConfig<f64>,
    adv_eps: f64,
    seed: u64,
) -> Result<Vec<GroupRollout<f64>>, PolicyError> {
    idx.par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            let inst = &data.instances[i];
            let mut r = rng::substream(seed, slot as u64);
            let mut samples = Vec::with_capacity(group_size);
            let mut rewards = Vec::with_capacity(group_size);
            for _ in 0..group_size {
                let s = sample_trajectory(params, &inst.features, &mut r, temperature)?;
                rewards.push(total_reward(&render_trajectory(&s.trajectory), inst.label, reward).total);
                samples.push(s);
            }
            Ok(GroupRollout::new(inst.features.clone(), samples, rewards, adv_eps))
        })
        .collect()
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count().max(1) as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericAbort {
    pub step: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub initial: Policy,
    /// Last good parameters (equal to the final ones unless aborted).
    pub params: Policy,
    /// Parameters at the end of each completed stage.
    pub checkpoints: Vec<Policy>,
    pub abort: Option<NumericAbort>,
}

fn is_numeric(e: &OptimError) -> bool {
    matches!(
        e,
        OptimError::NonFiniteLoss { .. }
            | OptimError::ZeroReferenceProbability(_)
            | OptimError::Policy(PolicyError::NonFiniteLogits(_))
    )
}

pub fn with_pool<R: Send>(deterministic: bool, f: impl FnOnce() -> R + Send) -> R {
    if deterministic {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    } else {
        f()
    }
}

/// Data generation, cold-start SFT and the staged hybrid loop.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainOutcome, RunError> {
    cfg.validate()?;
    with_pool(cfg.deterministic, || {
        let data = prepare_data(cfg)?;
        let init = sft_warmup(cfg, &data.train)?;
        let out = train_from(cfg, &data, &init)?;
        if let Some(dir) = &cfg.output_dir {
            save_outcome(&out, dir)?;
        }
        Ok(out)
    })
}

pub fn save_outcome(out: &TrainOutcome, dir: &std::path::Path) -> Result<(), RunError> {
    out.log.save(dir)?;
    let ck = dir.join("checkpoints");
    std::fs::create_dir_all(&ck)?;
    std::fs::write(ck.join("init.json"), out.initial.to_json())?;
    for (i, p) in out.checkpoints.iter().enumerate() {
        std::fs::write(ck.join(format!("stage{}.json", i + 1)), p.to_json())?;
    }
    std::fs::write(dir.join("policy.json"), out.params.to_json())?;
    Ok(())
}

fn row(step: u64, stage: u8, samples: u64, coeffs: HybridCoeffs<f64>, losses: (f64, f64), reward: (f64, f64), e: &EvalSnapshot) -> MetricsRecord {
    MetricsRecord {
        step,
        stage,
        samples_seen: samples,
        alpha_t: coeffs.alpha_t,
        gamma_t: coeffs.gamma_t,
        loss_rl: losses.0,
        loss_sft: losses.1,
        reward_mean: reward.0,
        reward_std: reward.1,
        entropy: e.entropy,
        five_acc: e.five_acc,
        two_acc: e.two_acc,
        macro_f1: e.macro_f1,
        weighted_f1: e.weighted_f1,
        pair_acc: e.pair_acc,
        ndcg3: e.ndcg3,
        longtail_checkpoint_acc: e.longtail_checkpoint_acc,
    }
}

/// The staged hybrid loop from a given starting policy. Row 0 evaluates
/// the starting policy; row `t` reports the rollouts and losses of update
/// `t` and the latest held-out evaluation.
pub fn train_from(cfg: &ExperimentConfig, data: &Prepared, init: &Policy) -> Result<TrainOutcome, RunError> {
    cfg.validate()?;
    let mut log = RunLog::new(Manifest::for_config(cfg));
    let mask = weight_mask(&cfg.reward);
    let mut params = init.clone();
    let mut opt = Optimizer::from_config(&cfg.optim, params.len());
    let mut checkpoints = Vec::new();

    let mut snapshot = evaluate_policy(&params, &data.heldout)?;
    {
        let probe = rollout_batch(
            &params,
            &data.heldout,
            &(0..data.heldout.len()).collect::<Vec<_>>(),
            1,
            cfg.rollout_temperature,
            &cfg.reward,
            cfg.optim.adv_epsilon,
            rng::derive_seed(cfg.seed, rng::EVAL),
        )?;
        let rs = mean_std(probe.iter().flat_map(|g| g.rewards.iter().copied()));
        let first = &cfg.stages[0];
        log.push(row(0, first.stage, 0, cfg.mode.coeffs(first), (0.0, 0.0), rs, &snapshot));
    }

    let mut bins: Option<Bins> = None;
    let batch_base = rng::derive_seed(cfg.seed, rng::BATCHES);
    let sft_base = rng::derive_seed(cfg.seed, rng::SFT_BATCHES);
    let rollout_base = rng::derive_seed(cfg.seed, rng::ROLLOUT);
    let mut step: u64 = 0;
    let mut samples: u64 = 0;
    let mut abort = None;

    'stages: for stage in &cfg.stages {
        if bins.is_none() || cfg.rebin_each_stage {
            let b = bin_dataset(&params, &data.train, rng::derive_seed(cfg.seed, u64::from(stage.stage)), &cfg.reward);
            log.manifest.notes.push(format!("stage {} bins (easy, medium, hard, excluded) = {:?}", stage.stage, b.sizes()));
            bins = Some(b);
        }
        let b = bins.as_ref().expect("bins set above");
        let pool: Vec<usize> = {
            let t = b.trainable();
            if t.is_empty() {
                log.manifest.notes.push(format!("stage {}: no trainable instances, sampling the full train set", stage.stage));
                (0..data.train.len()).collect()
            } else {
                t
            }
        };
        let sampler = match cfg.sampling {
            Sampling::Curriculum => match StageSampler::new(stage, b) {
                Ok(s) => {
                    if let Some(w) = &s.fallback_warning {
                        log.manifest.notes.push(w.clone());
                    }
                    Some(s)
                }
                Err(e) => {
                    log.manifest.notes.push(format!("stage {}: {e}; sampling uniformly", stage.stage));
                    None
                }
            },
            Sampling::Random => None,
        };
        let coeffs = cfg.mode.coeffs(stage);

        for _ in 0..stage.steps {
            step += 1;
            let mut br = rng::substream(batch_base, step);
            let rl_idx: Vec<usize> = match &sampler {
                Some(s) => s.batch(cfg.rl_batch_size, &mut br),
                None => (0..cfg.rl_batch_size).map(|_| pool[br.random_range(0..pool.len())]).collect(),
            };
            let mut sr = rng::substream(sft_base, step);
            let sft_batch = sft_examples(&data.train, &uniform_indices(data.train.len(), cfg.sft_batch_size, &mut sr));

            let rollouts = match rollout_batch(
                &params,
                &data.train,
                &rl_idx,
                cfg.optim.group_size,
                cfg.rollout_temperature,
                &cfg.reward,
                cfg.optim.adv_epsilon,
                rng::derive_seed(rollout_base, step),
            ) {
                Ok(r) => r,
                Err(e) => {
                    abort = Some(NumericAbort { step, reason: e.to_string() });
                    break 'stages;
                }
            };
            let rs = mean_std(rollouts.iter().flat_map(|g| g.rewards.iter().copied()));
            let reference = params.clone();
            let report = match hybrid_step(&mut params, &reference, &rollouts, &sft_batch, &coeffs, &mask, &cfg.optim, &mut opt) {
                Ok(r) => r,
                Err(e) if is_numeric(&e) => {
                    abort = Some(NumericAbort { step, reason: e.to_string() });
                    break 'stages;
                }
                Err(e) => return Err(e.into()),
            };
            if !params.is_finite() {
                params = reference;
                abort = Some(NumericAbort {
                    step,
                    reason: "parameters became non-finite; update discarded".into(),
                });
                break 'stages;
            }
            // Curriculum prompts drawn, identical across modes at equal steps.
            samples += rl_idx.len() as u64;
            let last_step = step as usize == cfg.total_steps();
            if (step as usize).is_multiple_of(cfg.eval_interval) || last_step {
                snapshot = evaluate_policy(&params, &data.heldout)?;
            }
            log.push(row(step, stage.stage, samples, coeffs, (report.loss_rl, report.loss_sft), rs, &snapshot));
        }
        checkpoints.push(params.clone());
    }

    if let Some(a) = &abort {
        log.manifest.notes.push(format!("numeric abort at step {}: {}", a.step, a.reason));
    }
    Ok(TrainOutcome {
        log,
        initial: init.clone(),
        params,
        checkpoints,
        abort,
    })
}

/// Same run under another mode and sampling, sharing data and start point.
pub fn variant(cfg: &ExperimentConfig, mode: Mode, sampling: Sampling) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        sampling,
        ..cfg.clone()
    }
}
