//! Strict gated reward over AFRL trajectories.
//!
//! `R = I_fmt * I_cst * I_logic * (alpha * R_res + beta * R_cot)`, except
//! that a format failure short-circuits to the configured format penalty.
//! The logic gate re-derives the expected label from the five boxed
//! checkpoints and trips unless it agrees with both the decision token and
//! the ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ConfigError};
use crate::grammar::{
    parse_trajectory, CheckpointAnswer, RelevanceLabel, Trajectory, NUM_CHECKPOINTS, NUM_SLOTS,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RewardConfig<T: Scalar> {
    pub alpha: T,
    pub beta: T,
    pub gamma_ord: T,
    pub format_penalty: T,
    pub w_decision: T,
    pub w_trace: T,
    pub w_final: T,
}

impl<T: Scalar> Default for RewardConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(0.72),
            beta: T::lit(0.28),
            gamma_ord: T::lit(0.25),
            format_penalty: T::lit(-1.0),
            w_decision: T::lit(10.0),
            w_trace: T::lit(10.0),
            w_final: T::lit(5.0),
        }
    }
}

impl<T: Scalar> RewardConfig<T> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let tol = T::lit(1e-6);
        ensure((self.alpha + self.beta - T::one()).abs() <= tol, "reward.alpha", || {
            format!("alpha + beta must equal 1, got {} + {}", self.alpha, self.beta)
        })?;
        ensure(self.gamma_ord >= T::zero(), "reward.gamma_ord", || {
            format!("must be >= 0, got {}", self.gamma_ord)
        })?;
        for (name, w) in [
            ("reward.w_decision", self.w_decision),
            ("reward.w_trace", self.w_trace),
            ("reward.w_final", self.w_final),
        ] {
            ensure(w > T::zero(), name, || format!("must be > 0, got {w}"))?;
        }
        Ok(())
    }
}

/// Per-trajectory audit record. Serializes to one JSONL line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RewardBreakdown<T: Scalar> {
    pub i_fmt: u8,
    pub i_cst: u8,
    pub i_logic: u8,
    pub y_hat: Option<RelevanceLabel>,
    pub r_res: T,
    pub r_cot: u8,
    pub total: T,
}

impl<T: Scalar> RewardBreakdown<T> {
    pub fn all_gates_pass(&self) -> bool {
        self.i_fmt == 1 && self.i_cst == 1 && self.i_logic == 1
    }
}

/// Advantage multipliers for the seven controlled slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WeightMask<T: Scalar> {
    pub weights: [T; NUM_SLOTS],
}

impl<T: Scalar> WeightMask<T> {
    pub fn uniform() -> Self {
        Self {
            weights: [T::one(); NUM_SLOTS],
        }
    }
}

pub fn consistency_gate(t: &Trajectory) -> u8 {
    u8::from(t.decision == t.final_label)
}

/// Expected label implied by the checkpoints (irrelevant, weak, strong,
/// premium, official).
pub fn infer_label(checkpoints: &[CheckpointAnswer; NUM_CHECKPOINTS]) -> RelevanceLabel {
    let [irrelevant, weak, strong, premium, official] = checkpoints.map(CheckpointAnswer::is_yes);
    let v = if irrelevant {
        0
    } else if weak || !strong {
        1
    } else if !premium {
        2
    } else if !official {
        3
    } else {
        4
    };
    RelevanceLabel::from_index(v)
}

/// Logic circuit breaker: `(1, y_hat)` iff `y_hat == decision == y_gt`.
pub fn logic_gate(t: &Trajectory, y_gt: RelevanceLabel) -> (u8, RelevanceLabel) {
    let y_hat = infer_label(&t.checkpoints);
    (u8::from(y_hat == t.decision && y_hat == y_gt), y_hat)
}

pub fn ordinal_result_reward<T: Scalar>(
    y_pred: RelevanceLabel,
    y_gt: RelevanceLabel,
    cfg: &RewardConfig<T>,
) -> T {
    if y_pred == y_gt {
        T::one()
    } else {
        -cfg.gamma_ord * T::from_u8(y_pred.distance(y_gt)).unwrap()
    }
}

/// Reward of an already-parsed trajectory (format gate passed).
pub fn score_trajectory<T: Scalar>(
    t: &Trajectory,
    y_gt: RelevanceLabel,
    cfg: &RewardConfig<T>,
) -> RewardBreakdown<T> {
    let i_cst = consistency_gate(t);
    let (i_logic, y_hat) = logic_gate(t, y_gt);
    let r_res = ordinal_result_reward(t.decision, y_gt, cfg);
    let r_cot = i_logic;
    let gate = T::from_u8(i_cst * i_logic).unwrap();
    let total = gate * (cfg.alpha * r_res + cfg.beta * T::from_u8(r_cot).unwrap());
    RewardBreakdown {
        i_fmt: 1,
        i_cst,
        i_logic,
        y_hat: Some(y_hat),
        r_res,
        r_cot,
        total,
    }
}

/// Reward of raw trajectory text.
pub fn total_reward<T: Scalar>(
    text: &str,
    y_gt: RelevanceLabel,
    cfg: &RewardConfig<T>,
) -> RewardBreakdown<T> {
    match parse_trajectory(text) {
        Ok(t) => score_trajectory(&t, y_gt, cfg),
        Err(_) => RewardBreakdown {
            i_fmt: 0,
            i_cst: 0,
            i_logic: 0,
            y_hat: None,
            r_res: T::zero(),
            r_cot: 0,
            total: cfg.format_penalty,
        },
    }
}

pub fn weight_mask<T: Scalar>(cfg: &RewardConfig<T>) -> WeightMask<T> {
    let mut weights = [cfg.w_trace; NUM_SLOTS];
    weights[0] = cfg.w_decision;
    weights[NUM_SLOTS - 1] = cfg.w_final;
    WeightMask { weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::render_trajectory;
    use CheckpointAnswer::{No, Yes};

    fn l(v: u8) -> RelevanceLabel {
        RelevanceLabel::new(v).unwrap()
    }

    fn figure() -> Trajectory {
        Trajectory::new(l(3), [No, No, Yes, Yes, No], l(3))
    }

    #[test]
    fn consistency_cases() {
        assert_eq!(consistency_gate(&figure()), 1);
        assert_eq!(consistency_gate(&Trajectory::new(l(2), [No; 5], l(3))), 0);
        assert_eq!(consistency_gate(&Trajectory::new(l(0), [Yes, No, No, No, No], l(0))), 1);
    }

    #[test]
    fn decision_tree_cases() {
        assert_eq!(infer_label(&[No, No, Yes, Yes, No]), l(3));
        assert_eq!(infer_label(&[Yes, No, No, No, No]), l(0));
        assert_eq!(infer_label(&[No, No, Yes, Yes, Yes]), l(4));
        assert_eq!(infer_label(&[No, Yes, Yes, Yes, Yes]), l(1));
        assert_eq!(infer_label(&[No, No, No, Yes, Yes]), l(1));
        assert_eq!(infer_label(&[No, No, Yes, No, Yes]), l(2));
        assert_eq!(infer_label(&[No, No, Yes, CheckpointAnswer::None, Yes]), l(2));
    }

    #[test]
    fn logic_gate_cases() {
        assert_eq!(logic_gate(&figure(), l(3)), (1, l(3)));
        assert_eq!(logic_gate(&figure(), l(2)), (0, l(3)));
        let mut t = figure();
        t.decision = l(2);
        assert_eq!(logic_gate(&t, l(3)), (0, l(3)));
    }

    #[test]
    fn ordinal_cases() {
        let cfg = RewardConfig::<f64>::default();
        assert_eq!(ordinal_result_reward(l(2), l(2), &cfg), 1.0);
        assert_eq!(ordinal_result_reward(l(1), l(3), &cfg), -0.5);
        assert_eq!(ordinal_result_reward(l(0), l(4), &cfg), -1.0);
    }

    #[test]
    fn total_reward_cases() {
        let cfg = RewardConfig::<f64>::default();
        let text = render_trajectory(&figure());
        let r = total_reward(&text, l(3), &cfg);
        assert!((r.total - (0.72 + 0.28)).abs() < 1e-15);
        assert_eq!((r.i_fmt, r.i_cst, r.i_logic, r.r_cot), (1, 1, 1, 1));

        let bad = total_reward("[3]\nnot a trace", l(3), &cfg);
        assert_eq!(bad.total, -1.0);
        assert_eq!((bad.i_fmt, bad.i_cst, bad.i_logic, bad.y_hat), (0, 0, 0, None));

        let wrong_gt = total_reward(&text, l(2), &cfg);
        assert_eq!(wrong_gt.total, 0.0);
        assert_eq!(wrong_gt.i_logic, 0);
        assert_eq!(wrong_gt.r_res, -0.25);
    }

    #[test]
    fn mask_cases() {
        let m = weight_mask(&RewardConfig::<f64>::default());
        assert_eq!(m.weights, [10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 5.0]);
        let ones = RewardConfig::<f64> {
            w_decision: 1.0,
            w_trace: 1.0,
            w_final: 1.0,
            ..Default::default()
        };
        assert_eq!(weight_mask(&ones), WeightMask::uniform());
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::<f64>::default().validate().is_ok());
        let bad = RewardConfig::<f64> { beta: 0.3, ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().field, "reward.alpha");
        let neg = RewardConfig::<f64> { gamma_ord: -0.1, ..Default::default() };
        assert!(neg.validate().is_err());
        let zero_w = RewardConfig::<f64> { w_final: 0.0, ..Default::default() };
        assert!(zero_w.validate().is_err());
    }

    #[test]
    fn breakdown_jsonl_shape() {
        let cfg = RewardConfig::<f64>::default();
        let r = total_reward(&render_trajectory(&figure()), l(3), &cfg);
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(
            line,
            r#"{"i_fmt":1,"i_cst":1,"i_logic":1,"y_hat":3,"r_res":1.0,"r_cot":1,"total":1.0}"#
        );
        let back: RewardBreakdown<f64> = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn f32_reward_matches_f64() {
        let t32 = total_reward(&render_trajectory(&figure()), l(3), &RewardConfig::<f32>::default());
        assert!((t32.total - 1.0).abs() < 1e-6);
    }
}
