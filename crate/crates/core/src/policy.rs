//! Slot-factored linear-softmax policy.
//!
//! Each of the seven controlled slots has its own logit map
//! `z_s = W_s x + b_s`, where `x` is either the raw feature vector
//! (teacher capacity) or a fixed random projection of it (student
//! capacity). Slots are conditionally independent given the features, so
//! probabilities, entropies and gradients are exact.
//!
//! Parameters live in one flat vector, slot after slot, each slot laid out
//! as `W_s` (row-major, `vocab x input_dim`) followed by `b_s`. Losses and
//! gradients are evaluated at temperature 1.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{SlotIndex, Trajectory, NUM_LABELS, NUM_SLOTS, SLOT_VOCAB};
use crate::rng::Rng;
use crate::scalar::{softmax_into, xlogx, Scalar};

pub const PARAMS_FORMAT: &str = "afrl-policy";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("temperature must be > 0, got {0}")]
    BadTemperature(f64),
    #[error("non-finite logits in slot {0}")]
    NonFiniteLogits(usize),
    #[error("slot {0} holds a value outside the slot vocabulary")]
    UnrepresentableToken(usize),
    #[error("expected a {expected}-way distribution, got {got}")]
    WrongVocab { expected: usize, got: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter file: {0}")]
    BadFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicyParams<T: Scalar> {
    format: String,
    version: u32,
    capacity: Capacity,
    feature_dim: usize,
    input_dim: usize,
    slot_vocab: [usize; NUM_SLOTS],
    /// `input_dim x feature_dim`, row-major; present for students only.
    projection: Option<Vec<T>>,
    theta: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotDistribution<T> {
    pub probs: Vec<T>,
}

impl<T: Scalar> SlotDistribution<T> {
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn entropy(&self) -> T {
        -self.probs.iter().map(|&p| xlogx(p)).sum::<T>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory<T> {
    pub trajectory: Trajectory,
    pub tokens: [usize; NUM_SLOTS],
    pub slot_logprobs: [T; NUM_SLOTS],
}

pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn slot_len(vocab: usize, input_dim: usize) -> usize {
    vocab * (input_dim + 1)
}

impl<T: Scalar> PolicyParams<T> {
    fn with_layout(capacity: Capacity, feature_dim: usize, input_dim: usize, projection: Option<Vec<T>>) -> Self {
        let n: usize = SLOT_VOCAB.iter().map(|&v| slot_len(v, input_dim)).sum();
        Self {
            format: PARAMS_FORMAT.to_string(),
            version: PARAMS_VERSION,
            capacity,
            feature_dim,
            input_dim,
            slot_vocab: SLOT_VOCAB,
            projection,
            theta: vec![T::zero(); n],
        }
    }

    /// All-zero teacher: uniform over every slot.
    pub fn zeros(feature_dim: usize) -> Self {
        Self::with_layout(Capacity::Teacher, feature_dim, feature_dim, None)
    }

    /// All-zero student reading a fixed Gaussian projection to `input_dim`
    /// coordinates.
    pub fn student(feature_dim: usize, input_dim: usize, rng: &mut Rng) -> Self {
        let scale = T::one() / T::from_usize_lossy(feature_dim).sqrt();
        let projection = (0..input_dim * feature_dim)
            .map(|_| T::lit(rng.sample::<f64, _>(rand_distr::StandardNormal)) * scale)
            .collect();
        Self::with_layout(Capacity::Student, feature_dim, input_dim, Some(projection))
    }

    /// Same layout with i.i.d. `N(0, scale^2)` entries.
    pub fn randomized(mut self, scale: T, rng: &mut Rng) -> Self {
        for v in &mut self.theta {
            *v = T::lit(rng.sample::<f64, _>(rand_distr::StandardNormal)) * scale;
        }
        self
    }

    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// Offset of slot `s` in the flat parameter vector.
    pub fn slot_offset(&self, slot: usize) -> usize {
        self.slot_vocab[..slot]
            .iter()
            .map(|&v| slot_len(v, self.input_dim))
            .sum()
    }

    /// Mutable weight row `k` and bias of slot `s`.
    pub fn weight_row_mut(&mut self, slot: usize, k: usize) -> &mut [T] {
        let start = self.slot_offset(slot) + k * self.input_dim;
        &mut self.theta[start..start + self.input_dim]
    }

    pub fn bias_mut(&mut self, slot: usize) -> &mut [T] {
        let off = self.slot_offset(slot) + self.slot_vocab[slot] * self.input_dim;
        &mut self.theta[off..off + self.slot_vocab[slot]]
    }

    pub fn check_features(&self, features: &[T]) -> Result<(), PolicyError> {
        if features.len() == self.feature_dim {
            Ok(())
        } else {
            Err(PolicyError::DimensionMismatch {
                expected: self.feature_dim,
                got: features.len(),
            })
        }
    }

    /// Policy input for a feature vector (projected for students).
    pub fn input(&self, features: &[T]) -> Vec<T> {
        match &self.projection {
            None => features.to_vec(),
            Some(p) => p
                .chunks_exact(self.feature_dim)
                .map(|row| row.iter().zip(features).map(|(&a, &b)| a * b).sum())
                .collect(),
        }
    }

    pub fn slot_logits(&self, input: &[T], slot: usize) -> Vec<T> {
        let off = self.slot_offset(slot);
        let v = self.slot_vocab[slot];
        let d = self.input_dim;
        let w = &self.theta[off..off + v * d];
        let b = &self.theta[off + v * d..off + v * d + v];
        (0..v)
            .map(|k| b[k] + w[k * d..(k + 1) * d].iter().zip(input).map(|(&a, &x)| a * x).sum::<T>())
            .collect()
    }

    /// Per-slot probabilities for an already-computed input at temperature 1.
    pub fn slot_probs(&self, input: &[T]) -> [Vec<T>; NUM_SLOTS] {
        std::array::from_fn(|s| {
            let mut out = Vec::with_capacity(self.slot_vocab[s]);
            softmax_into(&self.slot_logits(input, s), T::one(), &mut out);
            out
        })
    }

    /// Adds `scale * dlogits ⊗ [input, 1]` to the slot-`s` block of `grad`.
    pub fn accumulate_logit_grad(&self, grad: &mut [T], slot: usize, input: &[T], dlogits: &[T], scale: T) {
        let off = self.slot_offset(slot);
        let v = self.slot_vocab[slot];
        let d = self.input_dim;
        for k in 0..v {
            let g = dlogits[k] * scale;
            if g == T::zero() {
                continue;
            }
            for (dst, &x) in grad[off + k * d..off + (k + 1) * d].iter_mut().zip(input) {
                *dst += g * x;
            }
            grad[off + v * d + k] += g;
        }
    }

    /// Plain JSON with a format/version/shape header.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let p: Self = serde_json::from_str(text).map_err(|e| PolicyError::BadFile(e.to_string()))?;
        if p.format != PARAMS_FORMAT || p.version != PARAMS_VERSION {
            return Err(PolicyError::BadFile(format!("unsupported format {} v{}", p.format, p.version)));
        }
        if p.slot_vocab != SLOT_VOCAB {
            return Err(PolicyError::BadFile("slot vocabulary mismatch".into()));
        }
        let expected = Self::with_layout(p.capacity, p.feature_dim, p.input_dim, None).theta.len();
        if p.theta.len() != expected {
            return Err(PolicyError::BadFile(format!("expected {expected} parameters, got {}", p.theta.len())));
        }
        let proj_ok = match (&p.capacity, &p.projection) {
            (Capacity::Teacher, None) => p.input_dim == p.feature_dim,
            (Capacity::Student, Some(m)) => m.len() == p.input_dim * p.feature_dim,
            _ => false,
        };
        if !proj_ok || !p.is_finite() {
            return Err(PolicyError::BadFile("inconsistent projection or non-finite entries".into()));
        }
        Ok(p)
    }
}

pub fn slot_distribution<T: Scalar>(
    params: &PolicyParams<T>,
    features: &[T],
    slot: SlotIndex,
    temperature: T,
) -> Result<SlotDistribution<T>, PolicyError> {
    if !(temperature > T::zero()) {
        return Err(PolicyError::BadTemperature(temperature.as_f64()));
    }
    params.check_features(features)?;
    let logits = params.slot_logits(&params.input(features), slot.ordinal());
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(PolicyError::NonFiniteLogits(slot.ordinal()));
    }
    let mut probs = Vec::with_capacity(logits.len());
    softmax_into(&logits, temperature, &mut probs);
    Ok(SlotDistribution { probs })
}

fn sample_index<T: Scalar>(probs: &[T], rng: &mut Rng) -> usize {
    let u = T::lit(rng.random::<f64>());
    let mut acc = T::zero();
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left `u` above the cumulative sum: take the last supported token.
    probs.iter().rposition(|&p| p > T::zero()).unwrap_or(probs.len() - 1)
}

/// Samples every slot independently.
pub fn sample_trajectory<T: Scalar>(
    params: &PolicyParams<T>,
    features: &[T],
    rng: &mut Rng,
    temperature: T,
) -> Result<SampledTrajectory<T>, PolicyError> {
    if !(temperature > T::zero()) {
        return Err(PolicyError::BadTemperature(temperature.as_f64()));
    }
    params.check_features(features)?;
    let input = params.input(features);
    let mut probs = Vec::with_capacity(NUM_LABELS);
    let mut tokens = [0usize; NUM_SLOTS];
    let mut slot_logprobs = [T::zero(); NUM_SLOTS];
    for s in 0..NUM_SLOTS {
        let logits = params.slot_logits(&input, s);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(PolicyError::NonFiniteLogits(s));
        }
        softmax_into(&logits, temperature, &mut probs);
        let k = sample_index(&probs, rng);
        tokens[s] = k;
        slot_logprobs[s] = probs[k].ln();
    }
    Ok(SampledTrajectory {
        trajectory: Trajectory::from_slot_tokens(&tokens),
        tokens,
        slot_logprobs,
    })
}

/// Per-slot `ln pi(token)` at temperature 1.
pub fn log_prob<T: Scalar>(
    params: &PolicyParams<T>,
    features: &[T],
    trajectory: &Trajectory,
) -> Result<[T; NUM_SLOTS], PolicyError> {
    params.check_features(features)?;
    let tokens = trajectory
        .slot_tokens()
        .map_err(|s| PolicyError::UnrepresentableToken(s.ordinal()))?;
    let probs = params.slot_probs(&params.input(features));
    Ok(std::array::from_fn(|s| probs[s][tokens[s]].ln()))
}

/// Gradient of `sum_s ln pi(token_s)` with respect to the flat parameters.
pub fn grad_log_prob<T: Scalar>(
    params: &PolicyParams<T>,
    features: &[T],
    trajectory: &Trajectory,
) -> Result<Vec<T>, PolicyError> {
    params.check_features(features)?;
    let tokens = trajectory
        .slot_tokens()
        .map_err(|s| PolicyError::UnrepresentableToken(s.ordinal()))?;
    let input = params.input(features);
    let probs = params.slot_probs(&input);
    let mut grad = vec![T::zero(); params.len()];
    for s in 0..NUM_SLOTS {
        let dl: Vec<T> = probs[s]
            .iter()
            .enumerate()
            .map(|(k, &p)| if k == tokens[s] { T::one() - p } else { -p })
            .collect();
        params.accumulate_logit_grad(&mut grad, s, &input, &dl, T::one());
    }
    Ok(grad)
}

/// Mean Shannon entropy (nats) over instances and slots at temperature `t`.
pub fn entropy_at<T: Scalar, F: AsRef<[T]>>(
    params: &PolicyParams<T>,
    batch: &[F],
    temperature: T,
) -> Result<T, PolicyError> {
    if batch.is_empty() {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for f in batch {
        for slot in SlotIndex::all() {
            total += slot_distribution(params, f.as_ref(), slot, temperature)?.entropy();
        }
    }
    Ok(total / T::from_usize_lossy(batch.len() * NUM_SLOTS))
}

pub fn entropy<T: Scalar, F: AsRef<[T]>>(params: &PolicyParams<T>, batch: &[F]) -> Result<T, PolicyError> {
    entropy_at(params, batch, T::one())
}

/// `sum_k k * P(k)` over the five relevance tokens.
pub fn weighted_expected_score<T: Scalar>(dist: &SlotDistribution<T>) -> Result<T, PolicyError> {
    if dist.probs.len() != NUM_LABELS {
        return Err(PolicyError::WrongVocab {
            expected: NUM_LABELS,
            got: dist.probs.len(),
        });
    }
    Ok(dist
        .probs
        .iter()
        .enumerate()
        .map(|(k, &p)| T::from_usize_lossy(k) * p)
        .sum())
}
