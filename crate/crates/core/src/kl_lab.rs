//! Finite-distribution divergence lab: forward and reverse KL, the Gibbs
//! policy, numerical checks of the SFT and RL divergence identities, and
//! mode-covering vs mode-seeking fits of a single-bump family to a
//! bimodal target.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{Optimizer, OptimizerKind};
use crate::rng;
use crate::scalar::{log_sum_exp, softmax, xlogx, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KlError {
    #[error("probabilities must be >= 0 and sum to 1 (sum {0})")]
    NotNormalized(f64),
    #[error("temperature must be > 0, got {0}")]
    BadTemperature(f64),
    #[error("fit diverged at step {0}")]
    Diverged(usize),
    #[error("outcome spaces differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Categorical<T: Scalar> {
    probs: Vec<T>,
}

fn norm_tol<T: Scalar>(n: usize) -> T {
    T::lit(1e-12).max(T::epsilon() * T::from_usize_lossy(16 * n.max(1)))
}

impl<T: Scalar> Categorical<T> {
    pub fn new(probs: Vec<T>) -> Result<Self, KlError> {
        let s: T = probs.iter().copied().sum();
        if probs.is_empty() || probs.iter().any(|&p| !(p >= T::zero())) || (s - T::one()).abs() > norm_tol::<T>(probs.len()) {
            return Err(KlError::NotNormalized(s.as_f64()));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[T]) -> Result<Self, KlError> {
        let s: T = weights.iter().copied().sum();
        Self::new(weights.iter().map(|&w| w / s).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![T::one() / T::from_usize_lossy(n); n],
        }
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> T {
        -self.probs.iter().map(|&p| xlogx(p)).sum::<T>()
    }

    /// `-sum p ln q`.
    pub fn cross_entropy(&self, q: &Self) -> T {
        self.probs
            .iter()
            .zip(&q.probs)
            .map(|(&p, &qi)| if p > T::zero() { -p * qi.ln() } else { T::zero() })
            .sum()
    }

    pub fn expectation(&self, values: &[T]) -> T {
        self.probs.iter().zip(values).map(|(&p, &v)| p * v).sum()
    }
}

/// `D(p || q) = sum p ln(p/q)`; `+inf` when `p` puts mass where `q` has none.
pub fn forward_kl<T: Scalar>(p: &Categorical<T>, q: &Categorical<T>) -> T {
    assert_eq!(p.len(), q.len(), "outcome spaces differ");
    let mut total = T::zero();
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        if pi > T::zero() {
            if qi <= T::zero() {
                return T::infinity();
            }
            total += pi * (pi / qi).ln();
        }
    }
    total
}

/// `D(q || p)`: the model distribution comes first.
pub fn reverse_kl<T: Scalar>(q: &Categorical<T>, p: &Categorical<T>) -> T {
    forward_kl(q, p)
}

/// Rewards and temperature of an entropy-regularized optimal policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GibbsSpec<T: Scalar> {
    pub rewards: Vec<T>,
    pub temperature: T,
}

impl<T: Scalar> GibbsSpec<T> {
    pub fn new(rewards: Vec<T>, temperature: T) -> Result<Self, KlError> {
        if !(temperature > T::zero()) {
            return Err(KlError::BadTemperature(temperature.as_f64()));
        }
        Ok(Self { rewards, temperature })
    }

    /// `ln Z = ln sum exp(R/eta)`.
    pub fn log_partition(&self) -> T {
        let scaled: Vec<T> = self.rewards.iter().map(|&r| r / self.temperature).collect();
        log_sum_exp(&scaled)
    }

    pub fn partition(&self) -> T {
        self.log_partition().exp()
    }
}

/// `pi*(x) = exp(R(x)/eta) / Z`, max-shifted.
pub fn gibbs_policy<T: Scalar>(spec: &GibbsSpec<T>) -> Categorical<T> {
    Categorical {
        probs: softmax(&spec.rewards, spec.temperature),
    }
}

/// `D(p||q) - (CE(p, q) - H(p))`. Zero up to rounding.
pub fn verify_sft_identity<T: Scalar>(p: &Categorical<T>, q: &Categorical<T>) -> T {
    forward_kl(p, q) - (p.cross_entropy(q) - p.entropy())
}

/// `D(q||pi*) - (-H(q) - E_q[R]/eta + ln Z)`. Zero up to rounding.
pub fn verify_rl_identity<T: Scalar>(q: &Categorical<T>, spec: &GibbsSpec<T>) -> T {
    let lhs = reverse_kl(q, &gibbs_policy(spec));
    let rhs = -q.entropy() - q.expectation(&spec.rewards) / spec.temperature + spec.log_partition();
    lhs - rhs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `D(target || model)`: the SFT direction.
    Forward,
    /// `D(model || target)`: the RL direction.
    Reverse,
}

/// Discretized Gaussian bump on `0..grid` with a location and a bounded
/// width `min_width + (max_width - min_width) * sigmoid(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpFamily {
    pub grid: usize,
    pub min_width: f64,
    pub max_width: f64,
}

impl BumpFamily {
    fn width<T: Scalar>(&self, raw: T) -> (T, T) {
        let sig = T::one() / (T::one() + (-raw).exp());
        let span = T::lit(self.max_width - self.min_width);
        (T::lit(self.min_width) + span * sig, span * sig * (T::one() - sig))
    }

    fn logits<T: Scalar>(&self, loc: T, width: T) -> Vec<T> {
        (0..self.grid)
            .map(|i| {
                let d = T::from_usize_lossy(i) - loc;
                -(d * d) / (T::lit(2.0) * width * width)
            })
            .collect()
    }

    pub fn distribution<T: Scalar>(&self, loc: T, raw_width: T) -> Categorical<T> {
        let (w, _) = self.width(raw_width);
        Categorical {
            probs: softmax(&self.logits(loc, w), T::one()),
        }
    }

    /// Inverse of the width map, for initialization.
    pub fn raw_width(&self, width: f64) -> f64 {
        let s = ((width - self.min_width) / (self.max_width - self.min_width)).clamp(1e-9, 1.0 - 1e-9);
        (s / (1.0 - s)).ln()
    }
}

/// Divergence between target and bump, plus its gradient in `(loc, raw_width)`.
pub fn bump_divergence<T: Scalar>(
    family: &BumpFamily,
    target: &Categorical<T>,
    direction: Direction,
    loc: T,
    raw_width: T,
) -> (T, [T; 2]) {
    let (w, dw_draw) = family.width(raw_width);
    let q = softmax(&family.logits(loc, w), T::one());
    let p = target.probs();
    let (value, dlogit): (T, Vec<T>) = match direction {
        Direction::Forward => {
            let qc = Categorical { probs: q.clone() };
            (forward_kl(target, &qc), q.iter().zip(p).map(|(&qi, &pi)| qi - pi).collect())
        }
        Direction::Reverse => {
            let lr: Vec<T> = q
                .iter()
                .zip(p)
                .map(|(&qi, &pi)| if qi > T::zero() { qi.ln() - pi.ln() } else { T::zero() })
                .collect();
            let v: T = q.iter().zip(&lr).map(|(&qi, &l)| qi * l).sum();
            (v, q.iter().zip(&lr).map(|(&qi, &l)| qi * (l - v)).collect())
        }
    };
    let mut g_loc = T::zero();
    let mut g_w = T::zero();
    for (i, &g) in dlogit.iter().enumerate() {
        let d = T::from_usize_lossy(i) - loc;
        g_loc += g * d / (w * w);
        g_w += g * d * d / (w * w * w);
    }
    (value, [g_loc, g_w * dw_draw])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTracePoint {
    pub step: usize,
    pub divergence: f64,
    pub location: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub direction: Direction,
    pub location: f64,
    pub width: f64,
    pub divergence: f64,
    /// Fitted mass in each target mode region (nearest-center cells).
    pub region_mass: Vec<f64>,
    pub trace: Vec<FitTracePoint>,
}

impl FitReport {
    pub fn minor_mass(&self) -> f64 {
        self.region_mass.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Fits the bump family to `target` by Adam descent on the chosen divergence.
#[allow(clippy::too_many_arguments)]
pub fn fit_divergence(
    target: &Categorical<f64>,
    family: &BumpFamily,
    mode_centers: &[f64],
    direction: Direction,
    init: (f64, f64),
    steps: usize,
    lr: f64,
    trace_every: usize,
) -> Result<FitReport, KlError> {
    if target.len() != family.grid {
        return Err(KlError::LengthMismatch(target.len(), family.grid));
    }
    let mut theta = [init.0, family.raw_width(init.1)];
    let mut opt = Optimizer::new(OptimizerKind::adam(), lr, 2);
    let mut trace = Vec::new();
    let mut value = f64::NAN;
    for step in 0..=steps {
        let (v, g) = bump_divergence(family, target, direction, theta[0], theta[1]);
        if !v.is_finite() || !g.iter().all(|x| x.is_finite()) {
            return Err(KlError::Diverged(step));
        }
        value = v;
        if trace_every > 0 && step % trace_every == 0 {
            trace.push(FitTracePoint {
                step,
                divergence: v,
                location: theta[0],
                width: family.width(theta[1]).0,
            });
        }
        if step < steps {
            opt.apply(&mut theta, &g);
        }
    }
    let fitted = family.distribution(theta[0], theta[1]);
    let mut region_mass = vec![0.0; mode_centers.len().max(1)];
    for (i, &q) in fitted.probs().iter().enumerate() {
        let x = i as f64;
        let cell = mode_centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
            .map_or(0, |(k, _)| k);
        region_mass[cell] += q;
    }
    Ok(FitReport {
        direction,
        location: theta[0],
        width: family.width(theta[1]).0,
        divergence: value,
        region_mass,
        trace,
    })
}

/// The standard demo: a 50-point grid, bumps at 10 and 40.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalDemo {
    pub grid: usize,
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    pub mode_width: f64,
    pub family: BumpFamily,
    pub steps: usize,
    pub lr: f64,
}

impl Default for BimodalDemo {
    fn default() -> Self {
        Self {
            grid: 50,
            centers: vec![10.0, 40.0],
            weights: vec![0.5, 0.5],
            mode_width: 2.5,
            family: BumpFamily {
                grid: 50,
                min_width: 0.5,
                max_width: 20.0,
            },
            steps: 3_000,
            lr: 0.1,
        }
    }
}

impl BimodalDemo {
    pub fn unimodal(center: f64) -> Self {
        Self {
            centers: vec![center],
            weights: vec![1.0],
            ..Self::default()
        }
    }

    pub fn target(&self) -> Categorical<f64> {
        let w: Vec<f64> = (0..self.grid)
            .map(|i| {
                self.centers
                    .iter()
                    .zip(&self.weights)
                    .map(|(&c, &wt)| {
                        let comp: f64 = (0..self.grid)
                            .map(|j| (-((j as f64 - c).powi(2)) / (2.0 * self.mode_width.powi(2))).exp())
                            .sum();
                        wt * (-((i as f64 - c).powi(2)) / (2.0 * self.mode_width.powi(2))).exp() / comp
                    })
                    .sum()
            })
            .collect();
        Categorical::from_weights(&w).expect("positive weights")
    }

    /// Seeded initial `(location, width)` near the grid center, never on the
    /// symmetry axis.
    pub fn init(&self, seed: u64) -> (f64, f64) {
        let mut r = rng::seeded(rng::derive_seed(seed, rng::FIT));
        let mid = (self.grid as f64 - 1.0) / 2.0;
        let offset = r.random_range(1.0..8.0) * if r.random::<bool>() { 1.0 } else { -1.0 };
        (mid + offset, r.random_range(3.0..8.0))
    }

    pub fn fit(&self, direction: Direction, seed: u64, trace_every: usize) -> Result<FitReport, KlError> {
        fit_divergence(
            &self.target(),
            &self.family,
            &self.centers,
            direction,
            self.init(seed),
            self.steps,
            self.lr,
            trace_every,
        )
    }
}
