mod common;

use afrl::optim::{grpo_loss_and_grad, hybrid_loss_and_grad, sft_loss_and_grad, GroupRollout};
use afrl::policy::{grad_log_prob, log_prob, sample_trajectory};
use afrl::reward::weight_mask;
use afrl::rng;
use afrl::{HybridCoeffs, OptimConfig, Policy, RewardConfig};
use common::*;
use rand::Rng as _;

const D: usize = 9;
const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rollouts(params: &Policy, feats: &[Vec<f64>], seed: u64) -> Vec<GroupRollout<f64>> {
    let mut r = rng::seeded(seed);
    feats
        .iter()
        .map(|f| {
            let samples: Vec<_> = (0..4).map(|_| sample_trajectory(params, f, &mut r, 1.0).unwrap()).collect();
            let rewards = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            GroupRollout::new(f.clone(), samples, rewards, 1e-8)
        })
        .collect()
}

#[test]
fn log_prob_gradient_matches_differences() {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let mut r = rng::seeded(1000 + i);
        let p = random_policy(D, 0.7, i);
        let f = random_features(D, &mut r);
        let t = random_trajectory(&mut r);
        let analytic = grad_log_prob(&p, &f, &t).unwrap();
        let numeric = numeric_grad(|th| log_prob(&with_theta(&p, th), &f, &t).unwrap().iter().sum(), p.as_slice(), H);
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn student_log_prob_gradient_matches_differences() {
    let mut r = rng::seeded(77);
    let p = Policy::student(D, 4, &mut r).randomized(0.5, &mut r);
    for _ in 0..20 {
        let f = random_features(D, &mut r);
        let t = random_trajectory(&mut r);
        let analytic = grad_log_prob(&p, &f, &t).unwrap();
        let numeric = numeric_grad(|th| log_prob(&with_theta(&p, th), &f, &t).unwrap().iter().sum(), p.as_slice(), H);
        assert!(rel_err(&analytic, &numeric) < TOL);
    }
}

#[test]
fn sft_gradient_matches_differences() {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let mut r = rng::seeded(2000 + i);
        let p = random_policy(D, 0.7, 100 + i);
        let batch: Vec<(Vec<f64>, _)> = (0..3).map(|_| (random_features(D, &mut r), random_trajectory(&mut r))).collect();
        let (_, analytic) = sft_loss_and_grad(&p, &batch).unwrap();
        let numeric = numeric_grad(|th| sft_loss_and_grad(&with_theta(&p, th), &batch).unwrap().0, p.as_slice(), H);
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn hybrid_gradient_matches_differences() {
    let cfg = OptimConfig {
        kl_coeff: 0.05,
        ..OptimConfig::default()
    };
    let mask = weight_mask(&RewardConfig::default());
    let coeffs = HybridCoeffs::new(0.85, 0.15).unwrap();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let mut r = rng::seeded(3000 + i);
        let p = random_policy(D, 0.5, 200 + i);
        // Reference a little away from the current policy so ratios differ from 1.
        let reference = with_theta(&p, &p.as_slice().iter().map(|v| v + r.random_range(-0.05..0.05)).collect::<Vec<_>>());
        let feats: Vec<Vec<f64>> = (0..2).map(|_| random_features(D, &mut r)).collect();
        let rl = rollouts(&reference, &feats, 4000 + i);
        let sft: Vec<(Vec<f64>, _)> = (0..2).map(|_| (random_features(D, &mut r), random_trajectory(&mut r))).collect();
        let loss = |th: &[f64]| {
            hybrid_loss_and_grad(&with_theta(&p, th), &reference, &rl, &sft, &coeffs, &mask, &cfg)
                .unwrap()
                .1
                .loss_total
        };
        let (analytic, _) = hybrid_loss_and_grad(&p, &reference, &rl, &sft, &coeffs, &mask, &cfg).unwrap();
        let numeric = numeric_grad(loss, p.as_slice(), H);
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn zero_coefficient_term_is_skipped() {
    let p = random_policy(D, 0.5, 5);
    let rl = rollouts(&p, &[vec![0.1; D]], 6);
    let mask = weight_mask(&RewardConfig::default());
    let cfg = OptimConfig::default();
    // An unrepresentable SFT example would fail if the SFT term were evaluated.
    let mut bad = random_trajectory(&mut rng::seeded(1));
    bad.checkpoints[0] = afrl::CheckpointAnswer::None;
    let sft = vec![(vec![0.1; D], bad)];
    let (g, report) = hybrid_loss_and_grad(&p, &p, &rl, &sft, &HybridCoeffs::pure_rl(), &mask, &cfg).unwrap();
    let (_, g_rl, _) = grpo_loss_and_grad(&p, &p, &rl, &mask, &cfg).unwrap();
    assert_eq!(report.loss_sft, 0.0);
    assert_eq!(g, g_rl);
}

#[test]
fn kl_term_vanishes_at_reference() {
    let p = random_policy(D, 0.5, 8);
    let rl = rollouts(&p, &[vec![0.3; D], vec![-0.2; D]], 9);
    let (_, _, terms) = grpo_loss_and_grad(&p, &p, &rl, &weight_mask(&RewardConfig::default()), &OptimConfig::default()).unwrap();
    assert!(terms.kl.abs() < 1e-15);
    assert_eq!(terms.clip_fraction, 0.0);
}
