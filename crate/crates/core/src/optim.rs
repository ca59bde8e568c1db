//! Losses and updates: SFT cross-entropy (forward KL to the expert data),
//! the GRPO clipped surrogate with stepwise-weighted group-relative
//! advantages and a KL penalty, and their mode-balanced combination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ConfigError};
use crate::grammar::{Trajectory, NUM_SLOTS};
use crate::policy::{PolicyError, PolicyParams, SampledTrajectory};
use crate::reward::WeightMask;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("reference probability is zero for a sampled token (slot {0})")]
    ZeroReferenceProbability(usize),
    #[error("non-finite loss (rl {rl}, sft {sft}); update skipped")]
    NonFiniteLoss { rl: f64, sft: f64 },
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// Adam with decoupled weight decay.
    #[serde(rename = "adamw")]
    AdamW { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct OptimConfig<T: Scalar> {
    pub clip_ratio: T,
    pub kl_coeff: T,
    pub learning_rate: T,
    pub group_size: usize,
    pub adv_epsilon: T,
    pub optimizer: OptimizerKind,
}

impl<T: Scalar> Default for OptimConfig<T> {
    fn default() -> Self {
        Self {
            clip_ratio: T::lit(0.2),
            kl_coeff: T::lit(0.001),
            learning_rate: T::lit(1e-2),
            group_size: 8,
            adv_epsilon: T::lit(1e-8),
            optimizer: OptimizerKind::adam(),
        }
    }
}

impl<T: Scalar> OptimConfig<T> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(
            self.clip_ratio > T::zero() && self.clip_ratio < T::one(),
            "optim.clip_ratio",
            || format!("must lie in (0,1), got {}", self.clip_ratio),
        )?;
        ensure(self.kl_coeff >= T::zero(), "optim.kl_coeff", || {
            format!("must be >= 0, got {}", self.kl_coeff)
        })?;
        ensure(self.learning_rate > T::zero(), "optim.learning_rate", || {
            format!("must be > 0, got {}", self.learning_rate)
        })?;
        ensure(self.group_size >= 2, "optim.group_size", || {
            format!("must be >= 2, got {}", self.group_size)
        })?;
        ensure(self.adv_epsilon > T::zero(), "optim.adv_epsilon", || "must be > 0".into())
    }
}

/// RL and SFT weights of the mode-balanced objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HybridCoeffs<T: Scalar> {
    pub alpha_t: T,
    pub gamma_t: T,
}

impl<T: Scalar> HybridCoeffs<T> {
    pub fn new(alpha_t: T, gamma_t: T) -> Result<Self, ConfigError> {
        let c = Self { alpha_t, gamma_t };
        c.validate()?;
        Ok(c)
    }

    pub fn pure_rl() -> Self {
        Self {
            alpha_t: T::one(),
            gamma_t: T::zero(),
        }
    }

    pub fn pure_sft() -> Self {
        Self {
            alpha_t: T::zero(),
            gamma_t: T::one(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(
            self.alpha_t >= T::zero() && self.gamma_t >= T::zero(),
            "coeffs",
            || "alpha_t and gamma_t must be >= 0".into(),
        )?;
        ensure(
            (self.alpha_t + self.gamma_t - T::one()).abs() <= T::lit(1e-9),
            "coeffs",
            || format!("alpha_t + gamma_t must equal 1, got {} + {}", self.alpha_t, self.gamma_t),
        )
    }
}

/// `G` rollouts of one instance with their rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout<T> {
    pub features: Vec<T>,
    pub samples: Vec<SampledTrajectory<T>>,
    pub rewards: Vec<T>,
    pub advantages: Vec<T>,
}

impl<T: Scalar> GroupRollout<T> {
    pub fn new(features: Vec<T>, samples: Vec<SampledTrajectory<T>>, rewards: Vec<T>, eps: T) -> Self {
        assert_eq!(samples.len(), rewards.len(), "one reward per sample");
        let advantages = group_advantages(&rewards, eps);
        Self {
            features,
            samples,
            rewards,
            advantages,
        }
    }
}

/// `(R_k - mean) / (std + eps)` with the population standard deviation.
/// A constant group gets exactly zero advantage.
pub fn group_advantages<T: Scalar>(rewards: &[T], eps: T) -> Vec<T> {
    if rewards.is_empty() {
        return Vec::new();
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return vec![T::zero(); rewards.len()];
    }
    let n = T::from_usize_lossy(rewards.len());
    let mean = rewards.iter().copied().sum::<T>() / n;
    let var = rewards.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / n;
    let denom = var.sqrt() + eps;
    rewards.iter().map(|&r| (r - mean) / denom).collect()
}

/// Mean per-slot `-ln pi(expert token)` over a batch and its gradient.
pub fn sft_loss_and_grad<T: Scalar, F: AsRef<[T]>>(
    params: &PolicyParams<T>,
    batch: &[(F, Trajectory)],
) -> Result<(T, Vec<T>), OptimError> {
    if batch.is_empty() {
        return Err(OptimError::EmptyBatch);
    }
    let scale = T::one() / T::from_usize_lossy(batch.len() * NUM_SLOTS);
    let mut grad = vec![T::zero(); params.len()];
    let mut loss = T::zero();
    let mut dl = Vec::new();
    for (features, traj) in batch {
        let features = features.as_ref();
        params.check_features(features)?;
        let tokens = traj
            .slot_tokens()
            .map_err(|s| PolicyError::UnrepresentableToken(s.ordinal()))?;
        let input = params.input(features);
        let probs = params.slot_probs(&input);
        for s in 0..NUM_SLOTS {
            loss -= probs[s][tokens[s]].ln();
            // d(-ln p_k)/dz = p - onehot(k)
            dl.clear();
            dl.extend(probs[s].iter().enumerate().map(|(k, &p)| if k == tokens[s] { p - T::one() } else { p }));
            params.accumulate_logit_grad(&mut grad, s, &input, &dl, scale);
        }
    }
    Ok((loss * scale, grad))
}

/// Breakdown of the GRPO objective for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GrpoTerms<T: Scalar> {
    pub surrogate: T,
    pub kl: T,
    pub clip_fraction: T,
}

/// Clipped surrogate with weighted advantages plus `kl_coeff * KL(pi || pi_ref)`.
///
/// For each trajectory and slot: `r = pi(token) / pi_ref(token)`,
/// `a = mask[s] * A`, surrogate `min(r a, clip(r, 1-eps, 1+eps) a)`. The
/// loss is `-mean(surrogate) + kl_coeff * mean_{instances, slots} KL`.
pub fn grpo_loss_and_grad<T: Scalar>(
    params: &PolicyParams<T>,
    ref_params: &PolicyParams<T>,
    rollouts: &[GroupRollout<T>],
    mask: &WeightMask<T>,
    cfg: &OptimConfig<T>,
) -> Result<(T, Vec<T>, GrpoTerms<T>), OptimError> {
    let n_traj: usize = rollouts.iter().map(|g| g.samples.len()).sum();
    if n_traj == 0 {
        return Err(OptimError::EmptyBatch);
    }
    let sur_scale = T::one() / T::from_usize_lossy(n_traj * NUM_SLOTS);
    let kl_scale = T::one() / T::from_usize_lossy(rollouts.len() * NUM_SLOTS);
    let lo = T::one() - cfg.clip_ratio;
    let hi = T::one() + cfg.clip_ratio;

    let mut grad = vec![T::zero(); params.len()];
    let mut surrogate = T::zero();
    let mut kl_total = T::zero();
    let mut clipped = 0usize;
    let mut dl = Vec::new();

    for group in rollouts {
        params.check_features(&group.features)?;
        let input = params.input(&group.features);
        let probs = params.slot_probs(&input);
        let ref_probs = ref_params.slot_probs(&ref_params.input(&group.features));

        for (sample, &adv) in group.samples.iter().zip(&group.advantages) {
            for s in 0..NUM_SLOTS {
                let k = sample.tokens[s];
                let q = ref_probs[s][k];
                if !(q > T::zero()) {
                    return Err(OptimError::ZeroReferenceProbability(s));
                }
                let p = probs[s][k];
                let ratio = p / q;
                let a = mask.weights[s] * adv;
                let unclipped = ratio * a;
                let clipped_val = ratio.max(lo).min(hi) * a;
                if unclipped <= clipped_val {
                    surrogate += unclipped;
                    // d(r a)/dz = r a (onehot(k) - p)
                    let c = -unclipped * sur_scale;
                    dl.clear();
                    dl.extend(probs[s].iter().enumerate().map(|(j, &pj)| if j == k { T::one() - pj } else { -pj }));
                    params.accumulate_logit_grad(&mut grad, s, &input, &dl, c);
                } else {
                    surrogate += clipped_val;
                    clipped += 1;
                }
            }
        }

        if cfg.kl_coeff > T::zero() {
            for s in 0..NUM_SLOTS {
                let (p, q) = (&probs[s], &ref_probs[s]);
                let log_ratio: Vec<T> = p.iter().zip(q).map(|(&a, &b)| if a > T::zero() { a.ln() - b.ln() } else { T::zero() }).collect();
                let kl: T = p.iter().zip(&log_ratio).map(|(&a, &lr)| a * lr).sum();
                kl_total += kl;
                // dKL/dz_j = p_j (ln p_j - ln q_j - KL)
                dl.clear();
                dl.extend(p.iter().zip(&log_ratio).map(|(&a, &lr)| a * (lr - kl)));
                params.accumulate_logit_grad(&mut grad, s, &input, &dl, cfg.kl_coeff * kl_scale);
            }
        }
    }

    let sur_mean = surrogate * sur_scale;
    let kl_mean = kl_total * kl_scale;
    let loss = -sur_mean + cfg.kl_coeff * kl_mean;
    Ok((
        loss,
        grad,
        GrpoTerms {
            surrogate: sur_mean,
            kl: kl_mean,
            clip_fraction: T::from_usize_lossy(clipped) * sur_scale,
        },
    ))
}

/// Stateful first-order optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    learning_rate: T,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: T, n: usize) -> Self {
        Self {
            kind,
            learning_rate,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn from_config(cfg: &OptimConfig<T>, n: usize) -> Self {
        Self::new(cfg.optimizer, cfg.learning_rate, n)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn apply(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } | OptimizerKind::AdamW { beta1, beta2, eps, .. } => {
                let decay = match self.kind {
                    OptimizerKind::AdamW { weight_decay, .. } => T::lit(weight_decay),
                    _ => T::zero(),
                };
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let t = self.t as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
                    self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.learning_rate * (mh / (vh.sqrt() + eps) + decay * params[i]);
                }
            }
        }
    }
}

/// Loss components of one hybrid update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StepReport<T: Scalar> {
    pub loss_rl: T,
    pub loss_sft: T,
    pub loss_total: T,
    pub kl: T,
    pub clip_fraction: T,
    pub coeffs: HybridCoeffs<T>,
}

/// Value and gradient of `alpha_t * L_GRPO + gamma_t * L_SFT`. A term with a
/// zero coefficient is not evaluated.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_loss_and_grad<T: Scalar, F: AsRef<[T]>>(
    params: &PolicyParams<T>,
    ref_params: &PolicyParams<T>,
    rl_batch: &[GroupRollout<T>],
    sft_batch: &[(F, Trajectory)],
    coeffs: &HybridCoeffs<T>,
    mask: &WeightMask<T>,
    cfg: &OptimConfig<T>,
) -> Result<(Vec<T>, StepReport<T>), OptimError> {
    coeffs.validate()?;
    let mut grad = vec![T::zero(); params.len()];
    let mut report = StepReport {
        loss_rl: T::zero(),
        loss_sft: T::zero(),
        loss_total: T::zero(),
        kl: T::zero(),
        clip_fraction: T::zero(),
        coeffs: *coeffs,
    };
    if coeffs.alpha_t > T::zero() {
        let (l, g, terms) = grpo_loss_and_grad(params, ref_params, rl_batch, mask, cfg)?;
        report.loss_rl = l;
        report.kl = terms.kl;
        report.clip_fraction = terms.clip_fraction;
        for (dst, v) in grad.iter_mut().zip(g) {
            *dst += coeffs.alpha_t * v;
        }
    }
    if coeffs.gamma_t > T::zero() {
        let (l, g) = sft_loss_and_grad(params, sft_batch)?;
        report.loss_sft = l;
        for (dst, v) in grad.iter_mut().zip(g) {
            *dst += coeffs.gamma_t * v;
        }
    }
    report.loss_total = coeffs.alpha_t * report.loss_rl + coeffs.gamma_t * report.loss_sft;
    if !report.loss_total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteLoss {
            rl: report.loss_rl.as_f64(),
            sft: report.loss_sft.as_f64(),
        });
    }
    Ok((grad, report))
}

/// One optimizer update on the hybrid objective. On error `params` is
/// left untouched.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_step<T: Scalar, F: AsRef<[T]>>(
    params: &mut PolicyParams<T>,
    ref_params: &PolicyParams<T>,
    rl_batch: &[GroupRollout<T>],
    sft_batch: &[(F, Trajectory)],
    coeffs: &HybridCoeffs<T>,
    mask: &WeightMask<T>,
    cfg: &OptimConfig<T>,
    optimizer: &mut Optimizer<T>,
) -> Result<StepReport<T>, OptimError> {
    let (grad, report) = hybrid_loss_and_grad(params, ref_params, rl_batch, sft_batch, coeffs, mask, cfg)?;
    optimizer.apply(params.as_mut_slice(), &grad);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{CheckpointAnswer, RelevanceLabel};
    use crate::policy::sample_trajectory;
    use crate::reward::{weight_mask, RewardConfig};
    use crate::rng;

    #[test]
    fn advantages_zero_variance() {
        assert_eq!(group_advantages(&[0.7f64; 8], 1e-8), vec![0.0; 8]);
    }

    #[test]
    fn advantages_two_point() {
        let a = group_advantages(&[1.0f64, 0.0], 1e-8);
        assert!((a[0] - 1.0).abs() < 1e-7 && (a[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn advantages_are_centered() {
        use rand::Rng as _;
        let mut r = rng::seeded(4);
        for _ in 0..200 {
            let rewards: Vec<f64> = (0..8).map(|_| r.random::<f64>() * 3.0 - 1.0).collect();
            let a = group_advantages(&rewards, 1e-8);
            assert!(a.iter().sum::<f64>().abs() / 8.0 < 1e-9);
        }
    }

    #[test]
    fn uniform_sft_loss() {
        let p = PolicyParams::<f64>::zeros(3);
        let t = Trajectory::new(RelevanceLabel::new(1).unwrap(), [CheckpointAnswer::No; 5], RelevanceLabel::new(1).unwrap());
        let batch = vec![(vec![0.1, 0.2, 0.3], t), (vec![-1.0, 0.0, 2.0], t)];
        let (loss, _) = sft_loss_and_grad(&p, &batch).unwrap();
        let expected = (2.0 * 5f64.ln() + 5.0 * 2f64.ln()) / 7.0;
        assert!((loss - expected).abs() < 1e-14);
    }

    #[test]
    fn sft_loss_vanishes_at_confident_expert() {
        let t = Trajectory::new(RelevanceLabel::new(4).unwrap(), [CheckpointAnswer::Yes; 5], RelevanceLabel::new(4).unwrap());
        let tokens = t.slot_tokens().unwrap();
        let mut last = f64::INFINITY;
        for scale in [1.0, 5.0, 20.0, 60.0] {
            let mut p = PolicyParams::<f64>::zeros(2);
            for s in 0..NUM_SLOTS {
                p.bias_mut(s)[tokens[s]] = scale;
            }
            let (loss, _) = sft_loss_and_grad(&p, &[(vec![0.0, 0.0], t)]).unwrap();
            assert!(loss < last);
            last = loss;
        }
        assert!(last < 1e-20);
    }

    fn rollout_fixture(seed: u64) -> (PolicyParams<f64>, Vec<GroupRollout<f64>>) {
        let p = PolicyParams::<f64>::zeros(4).randomized(0.5, &mut rng::seeded(seed));
        let mut r = rng::seeded(seed + 1);
        let groups = (0..3)
            .map(|i| {
                let f = vec![0.3 * i as f64, -0.2, 0.5, 1.0];
                let samples: Vec<_> = (0..4).map(|_| sample_trajectory(&p, &f, &mut r, 1.0).unwrap()).collect();
                let rewards = (0..4).map(|k| (k % 2) as f64).collect();
                GroupRollout::new(f, samples, rewards, 1e-8)
            })
            .collect();
        (p, groups)
    }

    #[test]
    fn identity_policy_loss() {
        let (p, groups) = rollout_fixture(1);
        let mask = weight_mask(&RewardConfig::default());
        let cfg = OptimConfig::default();
        let (loss, _, terms) = grpo_loss_and_grad(&p, &p, &groups, &mask, &cfg).unwrap();
        let mut acc = 0.0;
        let mut n = 0.0;
        for g in &groups {
            for &a in &g.advantages {
                for w in mask.weights {
                    acc += w * a;
                    n += 1.0;
                }
            }
        }
        assert!(terms.kl.abs() < 1e-15);
        assert!((loss - (-acc / n)).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_leave_only_kl_gradient() {
        let (p, mut groups) = rollout_fixture(2);
        for g in &mut groups {
            g.advantages.iter_mut().for_each(|a| *a = 0.0);
        }
        let q = p.clone().randomized(0.3, &mut rng::seeded(99));
        let mask = weight_mask(&RewardConfig::default());
        let cfg = OptimConfig::default();
        let (_, grad, _) = grpo_loss_and_grad(&q, &p, &groups, &mask, &cfg).unwrap();
        let no_kl = OptimConfig { kl_coeff: 0.0, ..cfg };
        let (_, g0, _) = grpo_loss_and_grad(&q, &p, &groups, &mask, &no_kl).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
        assert!(grad.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn clip_arithmetic_single_slot() {
        // Decision slot: pi(0) = 0.3 against a uniform reference, ratio 1.5.
        // Every other slot has ratio 1.
        let reference = PolicyParams::<f64>::zeros(2);
        let mut params = reference.clone();
        params.bias_mut(0)[0] = (12.0f64 / 7.0).ln();
        let tokens = [0, 1, 1, 1, 1, 1, 2];
        let sample = SampledTrajectory {
            trajectory: Trajectory::from_slot_tokens(&tokens),
            tokens,
            slot_logprobs: [0.0; NUM_SLOTS],
        };
        let group = GroupRollout {
            features: vec![0.0, 0.0],
            samples: vec![sample.clone(), sample],
            rewards: vec![1.0, 0.0],
            advantages: vec![1.0, -1.0],
        };
        let mask = weight_mask(&RewardConfig::<f64>::default());
        let cfg = OptimConfig::<f64> { kl_coeff: 0.0, ..Default::default() };
        let (loss, grad, terms) = grpo_loss_and_grad(&params, &reference, std::slice::from_ref(&group), &mask, &cfg).unwrap();
        // +A clips to 1.2 w; -A keeps -1.5 w; the other slots cancel in pairs.
        let w = mask.weights[0];
        let expected = (1.2 * w - 1.5 * w) / 14.0;
        assert!((terms.surrogate - expected).abs() < 1e-12, "{}", terms.surrogate);
        assert!((loss + expected).abs() < 1e-12);
        assert!((terms.clip_fraction - 1.0 / 14.0).abs() < 1e-15);

        let off = params.slot_offset(0) + 5 * params.input_dim();
        let h = 1e-6;
        let f = |b: f64| {
            let mut q = params.clone();
            q.as_mut_slice()[off] = b;
            grpo_loss_and_grad(&q, &reference, std::slice::from_ref(&group), &mask, &cfg).unwrap().0
        };
        let b0 = params.as_slice()[off];
        let fd = (f(b0 + h) - f(b0 - h)) / (2.0 * h);
        assert!((grad[off] - fd).abs() < 1e-7, "{} vs {fd}", grad[off]);
    }

    #[test]
    fn coeff_validation() {
        assert!(HybridCoeffs::new(0.85f64, 0.15).is_ok());
        assert!(HybridCoeffs::new(0.9f64, 0.2).is_err());
        assert!(HybridCoeffs::new(-0.1f64, 1.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::<f64>::default().validate().is_ok());
        assert!(OptimConfig::<f64> { clip_ratio: 1.0, ..Default::default() }.validate().is_err());
        assert!(OptimConfig::<f64> { group_size: 1, ..Default::default() }.validate().is_err());
        assert!(OptimConfig::<f64> { kl_coeff: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.01f64, 2);
        let mut p = vec![0.0, 0.0];
        opt.apply(&mut p, &[3.0, -0.001]);
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-6);
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.5f64, 1);
        let mut q = vec![1.0];
        sgd.apply(&mut q, &[2.0]);
        assert_eq!(q, vec![0.0]);
    }
}
