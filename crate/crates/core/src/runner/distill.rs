use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::DistillConfig;
use super::train::{predictions, Policy, Prepared};
use super::RunError;
use crate::grammar::NUM_SLOTS;
use crate::metrics::five_acc;
use crate::optim::Optimizer;
use crate::optim::OptimizerKind;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub student_input_dim: usize,
    pub all_slots: bool,
    pub steps: usize,
    pub teacher_five_acc: f64,
    pub init_five_acc: f64,
    pub student_five_acc: f64,
    /// Teacher minus student held-out 5-ACC, in accuracy points.
    pub gap_points: f64,
    pub final_loss: f64,
}

/// Random-projection student with `cfg.student_dim` inputs.
pub fn reduced_student(teacher: &Policy, cfg: &DistillConfig, seed: u64) -> Policy {
    let mut r = rng::seeded(rng::derive_seed(seed, rng::PROJECTION));
    Policy::student(teacher.feature_dim(), cfg.student_dim, &mut r).randomized(cfg.init_scale, &mut r)
}

/// Student with the teacher's own input width.
pub fn matched_student(teacher: &Policy, cfg: &DistillConfig, seed: u64) -> Policy {
    let mut r = rng::seeded(rng::derive_seed(seed, rng::INIT));
    Policy::zeros(teacher.feature_dim()).randomized(cfg.init_scale, &mut r)
}

/// Cross-entropy from the teacher's soft slot distributions, averaged
/// over the batch and the matched slots, with its gradient.
pub fn distill_loss_and_grad(student: &Policy, teacher: &Policy, features: &[&[f64]], all_slots: bool) -> (f64, Vec<f64>) {
    let slots = if all_slots { NUM_SLOTS } else { 1 };
    let scale = 1.0 / (features.len() * slots) as f64;
    let mut grad = vec![0.0; student.len()];
    let mut loss = 0.0;
    for f in features {
        let t_probs = teacher.slot_probs(&teacher.input(f));
        let input = student.input(f);
        let s_probs = student.slot_probs(&input);
        for s in 0..slots {
            let (pt, ps) = (&t_probs[s], &s_probs[s]);
            loss -= pt.iter().zip(ps).map(|(&a, &b)| if a > 0.0 { a * b.ln() } else { 0.0 }).sum::<f64>() * scale;
            let dl: Vec<f64> = ps.iter().zip(pt).map(|(&b, &a)| b - a).collect();
            student.accumulate_logit_grad(&mut grad, s, &input, &dl, scale);
        }
    }
    (loss, grad)
}

/// Trains `student` toward `teacher` on the training features and reports
/// held-out 5-ACC of both.
pub fn run_distill(
    teacher: &Policy,
    mut student: Policy,
    data: &Prepared,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(Policy, DistillReport), RunError> {
    let acc = |p: &Policy| -> Result<f64, RunError> { Ok(five_acc(&predictions(p, &data.heldout)?)?) };
    let teacher_five_acc = acc(teacher)?;
    let init_five_acc = acc(&student)?;
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.learning_rate, student.len());
    let base = rng::derive_seed(seed, rng::DISTILL);
    let mut final_loss = 0.0;
    for step in 0..cfg.steps {
        let mut r = rng::substream(base, step as u64);
        let feats: Vec<&[f64]> = (0..cfg.batch_size)
            .map(|_| data.train.instances[r.random_range(0..data.train.len())].features.as_slice())
            .collect();
        let (loss, grad) = distill_loss_and_grad(&student, teacher, &feats, cfg.all_slots);
        if !loss.is_finite() {
            return Err(RunError::NumericAbort {
                step: step as u64,
                reason: "non-finite distillation loss".into(),
            });
        }
        final_loss = loss;
        opt.apply(student.as_mut_slice(), &grad);
    }
    let student_five_acc = acc(&student)?;
    let report = DistillReport {
        student_input_dim: student.input_dim(),
        all_slots: cfg.all_slots,
        steps: cfg.steps,
        teacher_five_acc,
        init_five_acc,
        student_five_acc,
        gap_points: 100.0 * (teacher_five_acc - student_five_acc),
        final_loss,
    };
    Ok((student, report))
}
