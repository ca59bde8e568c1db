mod common;

use afrl::reward::{ordinal_result_reward, score_trajectory, total_reward, weight_mask};
use afrl::world::{expert_trajectory, gen_dataset, WorldConfig};
use afrl::{format_gate, parse_trajectory, render_trajectory, CheckpointAnswer, RewardConfig, Trajectory};
use common::*;

const GOLDEN_LABEL3: &str = include_str!("data/trajectory_label3.txt");
const GOLDEN_LABEL0: &str = include_str!("data/trajectory_label0.txt");

#[test]
fn brute_force_gate_combinations() {
    let cfg = RewardConfig::default();
    let mut checked = 0;
    for tokens in all_assignments() {
        let t = Trajectory::from_slot_tokens(&tokens);
        let text = render_trajectory(&t);
        for y in 0..5u8 {
            let b = total_reward(&text, label(y), &cfg);
            let expect = oracle_reward(&tokens, y, cfg.alpha, cfg.beta, cfg.gamma_ord);
            assert_eq!(b.total, expect, "{tokens:?} y={y}");
            let gates = tokens[0] == tokens[6] && oracle_label(yes_bits(&tokens)) == tokens[0] as u8 && tokens[0] as u8 == y;
            assert_eq!(b.total > 0.0, gates && tokens[0] as u8 == y);
            assert_eq!(b.all_gates_pass(), gates);
            checked += 1;
        }
    }
    assert_eq!(checked, 4000);
}

#[test]
fn ordinal_table() {
    let cfg = RewardConfig::default();
    let expected = [
        [1.0, -0.25, -0.5, -0.75, -1.0],
        [-0.25, 1.0, -0.25, -0.5, -0.75],
        [-0.5, -0.25, 1.0, -0.25, -0.5],
        [-0.75, -0.5, -0.25, 1.0, -0.25],
        [-1.0, -0.75, -0.5, -0.25, 1.0],
    ];
    for p in 0..5u8 {
        for g in 0..5u8 {
            assert_eq!(ordinal_result_reward(label(p), label(g), &cfg), expected[p as usize][g as usize]);
        }
    }
}

#[test]
fn malformed_text_gets_format_penalty() {
    let cfg = RewardConfig::default();
    let good = GOLDEN_LABEL3;
    let cases = [
        String::new(),
        good.replacen("[3]", "[7]", 1),
        good.replace("Step 5:", "Step five:"),
        good.replace("\\boxed{Yes}", "\\boxed{Maybe}"),
        good.replace("</think>\n", ""),
        format!("{good}trailing"),
        good.replacen("\\boxed{No}", "", 1),
    ];
    for c in &cases {
        let b = total_reward(c, label(3), &cfg);
        assert_eq!(b.total, -1.0, "{c:?}");
        assert_eq!((b.i_fmt, format_gate(c)), (0, 0));
    }
}

#[test]
fn golden_trajectories() {
    use CheckpointAnswer::{No, Yes};
    let t3 = Trajectory::new(label(3), [No, No, Yes, Yes, No], label(3));
    let t0 = Trajectory::new(label(0), [Yes, No, No, No, No], label(0));
    assert_eq!(render_trajectory(&t3), GOLDEN_LABEL3);
    assert_eq!(render_trajectory(&t0), GOLDEN_LABEL0);
    assert_eq!(parse_trajectory(GOLDEN_LABEL3).unwrap(), t3);
    assert_eq!(parse_trajectory(GOLDEN_LABEL0).unwrap(), t0);
    let cfg = RewardConfig::default();
    assert_eq!(total_reward(GOLDEN_LABEL3, label(3), &cfg).total, 1.0);
    assert_eq!(total_reward(GOLDEN_LABEL3, label(2), &cfg).total, 0.0);
}

#[test]
fn crlf_and_trailing_space_tolerance() {
    let crlf = GOLDEN_LABEL3.replace('\n', "\r\n");
    assert_eq!(format_gate(&crlf), 1);
    assert_eq!(format_gate(&format!("{GOLDEN_LABEL3}  \n")), 1);
}

#[test]
fn expert_trajectories_score_one() {
    let ds = gen_dataset(2_000, &WorldConfig::default()).unwrap();
    let cfg = RewardConfig::default();
    for inst in &ds.instances {
        let t = expert_trajectory(inst);
        assert_eq!(t.decision, inst.label);
        assert_eq!(t.final_label, inst.label);
        assert_eq!(total_reward(&render_trajectory(&t), inst.label, &cfg).total, 1.0);
        assert_eq!(score_trajectory(&t, inst.label, &cfg).total, 1.0);
    }
}

#[test]
fn mask_from_weights() {
    let m = weight_mask(&RewardConfig::default());
    assert_eq!(m.weights, [10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 5.0]);
}
