//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use afrl::metrics::PredictionRecord;
use afrl::rng;
use afrl::{CheckpointAnswer, Policy, RelevanceLabel, Trajectory};
use rand::Rng as _;

/// Central differences of `f` at `x` for every coordinate.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, 1e-12)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

pub fn with_theta(p: &Policy, theta: &[f64]) -> Policy {
    let mut q = p.clone();
    q.as_mut_slice().copy_from_slice(theta);
    q
}

pub fn random_features(d: usize, r: &mut afrl::rng::Rng) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-1.5..1.5)).collect()
}

pub fn random_trajectory(r: &mut afrl::rng::Rng) -> Trajectory {
    let mut tokens = [0usize; 7];
    tokens[0] = r.random_range(0..5);
    for t in tokens.iter_mut().take(6).skip(1) {
        *t = r.random_range(0..2);
    }
    tokens[6] = r.random_range(0..5);
    Trajectory::from_slot_tokens(&tokens)
}

pub fn random_policy(d: usize, scale: f64, seed: u64) -> Policy {
    Policy::zeros(d).randomized(scale, &mut rng::seeded(seed))
}

/// Every (decision, checkpoints, final) assignment: 5 x 32 x 5 = 800.
pub fn all_assignments() -> Vec<[usize; 7]> {
    let mut out = Vec::with_capacity(800);
    for d in 0..5 {
        for bits in 0..32usize {
            for f in 0..5 {
                let mut t = [0usize; 7];
                t[0] = d;
                for i in 0..5 {
                    t[1 + i] = (bits >> i) & 1;
                }
                t[6] = f;
                out.push(t);
            }
        }
    }
    out
}

/// Label implied by checkpoint tokens, written as an ordered rule list.
pub fn oracle_label(cp: [bool; 5]) -> u8 {
    let [irrelevant, weak, strong, premium, official] = cp;
    let rules: [(bool, u8); 4] = [(irrelevant, 0), (weak || !strong, 1), (!premium, 2), (!official, 3)];
    rules.iter().find(|(hit, _)| *hit).map_or(4, |&(_, l)| l)
}

pub fn yes_bits(tokens: &[usize; 7]) -> [bool; 5] {
    std::array::from_fn(|i| tokens[1 + i] == 0)
}

/// Reward of a well-formed trajectory straight from the gate formula.
pub fn oracle_reward(tokens: &[usize; 7], y_gt: u8, alpha: f64, beta: f64, gamma_ord: f64) -> f64 {
    let d = tokens[0] as u8;
    let f = tokens[6] as u8;
    let y_hat = oracle_label(yes_bits(tokens));
    let cst = f64::from(u8::from(d == f));
    let logic = f64::from(u8::from(y_hat == d && d == y_gt));
    let r_res = if d == y_gt { 1.0 } else { -gamma_ord * f64::from(d.abs_diff(y_gt)) };
    cst * logic * (alpha * r_res + beta * logic)
}

pub fn label(v: u8) -> RelevanceLabel {
    RelevanceLabel::new(v).unwrap()
}

pub fn answers(bits: [bool; 5]) -> [CheckpointAnswer; 5] {
    bits.map(CheckpointAnswer::from_bool)
}

/// Random prediction set with few queries and coarse scores so that ties occur.
pub fn random_predictions(seed: u64, max_len: usize) -> Vec<PredictionRecord> {
    let mut r = rng::seeded(seed);
    let n = r.random_range(1..=max_len);
    let queries = r.random_range(1..=5);
    (0..n)
        .map(|_| PredictionRecord {
            query_id: format!("q{}", r.random_range(0..queries)),
            y_true: label(r.random_range(0..5)),
            y_pred: label(r.random_range(0..5)),
            score: f64::from(r.random_range(0..8u8)) * 0.5,
        })
        .collect()
}

fn queries(records: &[PredictionRecord]) -> Vec<String> {
    let mut q: Vec<String> = records.iter().map(|r| r.query_id.clone()).collect();
    q.sort();
    q.dedup();
    q
}

/// Pairwise accuracy by enumerating ordered index pairs; ties count wrong.
pub fn pair_acc_oracle(records: &[PredictionRecord]) -> Option<f64> {
    let (mut ok, mut total) = (0usize, 0usize);
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            if a.query_id != b.query_id || a.y_true == b.y_true {
                continue;
            }
            total += 1;
            let (hi, lo) = if a.y_true > b.y_true { (a, b) } else { (b, a) };
            ok += usize::from(hi.score > lo.score);
        }
    }
    (total > 0).then(|| ok as f64 / total as f64)
}

/// NDCG@k where a document's rank is the number of documents ahead of it:
/// strictly higher score, or equal score earlier in the input.
pub fn ndcg_oracle(records: &[PredictionRecord], k: usize) -> Option<f64> {
    let mut vals = Vec::new();
    for q in queries(records) {
        let docs: Vec<&PredictionRecord> = records.iter().filter(|r| r.query_id == q).collect();
        let gain = |l: RelevanceLabel| 2f64.powi(i32::from(l.value())) - 1.0;
        let disc = |rank: usize| 1.0 / (rank as f64 + 2.0).log2();
        let mut dcg = 0.0;
        for (i, d) in docs.iter().enumerate() {
            let rank = docs
                .iter()
                .enumerate()
                .filter(|(j, o)| o.score > d.score || (o.score == d.score && *j < i))
                .count();
            if rank < k {
                dcg += gain(d.y_true) * disc(rank);
            }
        }
        let mut gains: Vec<f64> = docs.iter().map(|d| gain(d.y_true)).collect();
        gains.sort_by(|a, b| b.total_cmp(a));
        let idcg: f64 = gains.iter().take(k).enumerate().map(|(r, g)| g * disc(r)).sum();
        if idcg > 0.0 {
            vals.push(dcg / idcg);
        }
    }
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
