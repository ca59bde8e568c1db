use std::io::BufReader;

use afrl::curriculum::default_stages;
use afrl::optim::OptimizerKind;
use afrl::runner::*;

const HEADER: &str = include_str!("data/metrics_header.csv");

fn small() -> ExperimentConfig {
    ExperimentConfig {
        n_instances: 1_500,
        sft_warmup_steps: 100,
        stages: default_stages(20),
        eval_interval: 10,
        deterministic: true,
        ..ExperimentConfig::default()
    }
}

fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let a = run_training(&small()).unwrap();
    let b = run_training(&small()).unwrap();
    assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.params, b.params);
    let other = run_training(&ExperimentConfig { seed: 5, ..small() }).unwrap();
    assert_ne!(a.log.to_jsonl(), other.log.to_jsonl());
}

#[test]
fn export_roundtrip_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output_dir: Some(dir.path().to_path_buf()),
        ..small()
    };
    let out = run_training(&cfg).unwrap();
    let jsonl = std::fs::read_to_string(dir.path().join("runlog.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), out.log.records.len() + 1);
    let back = RunLog::read_jsonl(BufReader::new(jsonl.as_bytes())).unwrap();
    assert_eq!(back, out.log);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), HEADER.trim_end());
    let rows = read_csv(BufReader::new(csv.as_bytes())).unwrap();
    assert_eq!(rows, out.log.records);
    for name in ["policy.json", "checkpoints/init.json", "checkpoints/stage1.json", "checkpoints/stage3.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let saved = afrl::Policy::from_json(&std::fs::read_to_string(dir.path().join("policy.json")).unwrap()).unwrap();
    assert_eq!(saved, out.params);
}

#[test]
fn manifest_identifies_config() {
    let a = run_training(&small()).unwrap();
    let m = &a.log.manifest;
    assert_eq!(m.config_hash, sha256_hex(small().canonical_json().as_bytes()));
    assert_eq!(m.seed, 0);
    assert_eq!(m.columns.join(","), HEADER.trim_end());
    // output_dir does not affect the hash
    let moved = ExperimentConfig {
        output_dir: Some("/elsewhere".into()),
        ..small()
    };
    assert_eq!(moved.canonical_json(), small().canonical_json());
}

#[test]
fn coefficient_ledger_matches_stages() {
    let cfg = small();
    let out = run_training(&cfg).unwrap();
    assert_eq!(out.log.records.len(), cfg.total_steps() + 1);
    let mut prev = None;
    for r in &out.log.records {
        let stage = &cfg.stages[usize::from(r.stage) - 1];
        assert_eq!((r.alpha_t, r.gamma_t), (stage.coeffs.alpha_t, stage.coeffs.gamma_t), "step {}", r.step);
        assert_eq!(r.samples_seen, r.step * cfg.rl_batch_size as u64);
        if let Some(p) = prev {
            assert!(r.step > p);
        }
        prev = Some(r.step);
    }
    let pg = run_training(&variant(&cfg, Mode::PureGrpo, Sampling::Curriculum)).unwrap();
    assert!(pg.log.records.iter().all(|r| (r.alpha_t, r.gamma_t) == (1.0, 0.0)));
}

#[test]
fn sft_only_five_hundred_steps_learns_the_task() {
    let cfg = ExperimentConfig {
        sft_warmup_steps: 0,
        stages: {
            let mut s = default_stages(167);
            s[2].steps = 166;
            s
        },
        mode: Mode::SftOnly,
        eval_interval: 500,
        ..ExperimentConfig::default()
    };
    let out = run_training(&cfg).unwrap();
    let last = out.log.last().unwrap();
    assert_eq!(last.step, 500);
    assert!(last.five_acc > 0.9, "5-ACC {}", last.five_acc);
}

#[test]
fn ablation_rejects_mismatched_configs() {
    let a = small();
    let b = ExperimentConfig { seed: 1, ..small() };
    let err = run_ablation(&[a.clone(), b]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(run_ablation(std::slice::from_ref(&a)).is_err());
    assert!(check_matrix(&standard_matrix(&a)).is_ok());
}

#[test]
fn ablation_shares_cold_start() {
    let cfgs = vec![
        variant(&small(), Mode::ModeBalanced, Sampling::Curriculum),
        variant(&small(), Mode::PureGrpo, Sampling::Curriculum),
    ];
    let rep = run_ablation(&cfgs).unwrap();
    assert_eq!(rep.runs[0].outcome.initial, rep.runs[1].outcome.initial);
    let (r0, r1) = (&rep.runs[0].outcome.log.records[0], &rep.runs[1].outcome.log.records[0]);
    assert_eq!((r0.five_acc, r0.entropy, r0.reward_mean), (r1.five_acc, r1.entropy, r1.reward_mean));
    let csv = rep.side_by_side_csv();
    assert_eq!(csv.lines().count(), small().total_steps() + 2);
    // Running a matrix config alone reproduces its ablation log.
    let solo = run_training(&cfgs[1]).unwrap();
    assert_eq!(solo.log.to_jsonl(), rep.runs[1].outcome.log.to_jsonl());
}

#[test]
fn zero_step_distillation_keeps_init_accuracy() {
    let cfg = small();
    let out = run_training(&cfg).unwrap();
    let data = prepare_data(&cfg).unwrap();
    let dcfg = DistillConfig { steps: 0, ..cfg.distill.clone() };
    let student = reduced_student(&out.params, &dcfg, cfg.seed);
    let (trained, rep) = run_distill(&out.params, student.clone(), &data, &dcfg, cfg.seed).unwrap();
    assert_eq!(trained, student);
    assert_eq!(rep.student_five_acc, rep.init_five_acc);
}

#[test]
fn distillation_gradient_matches_differences() {
    let cfg = small();
    let teacher = afrl::Policy::zeros(16).randomized(0.8, &mut afrl::rng::seeded(3));
    let student = reduced_student(&teacher, &cfg.distill, 4);
    let data = prepare_data(&cfg).unwrap();
    let feats: Vec<&[f64]> = data.train.instances[..5].iter().map(|i| i.features.as_slice()).collect();
    for all in [false, true] {
        let (_, g) = distill_loss_and_grad(&student, &teacher, &feats, all);
        let h = 1e-5;
        let mut p = student.clone();
        for i in 0..student.len() {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + h;
            let up = distill_loss_and_grad(&p, &teacher, &feats, all).0;
            p.as_mut_slice()[i] = orig - h;
            let down = distill_loss_and_grad(&p, &teacher, &feats, all).0;
            p.as_mut_slice()[i] = orig;
            let n = (up - down) / (2.0 * h);
            assert!((n - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "param {i}: {n} vs {}", g[i]);
        }
    }
}

#[test]
fn numeric_abort_keeps_last_good_parameters() {
    let mut cfg = small();
    cfg.optim.learning_rate = 1e300;
    cfg.optim.optimizer = OptimizerKind::Sgd;
    let out = run_training(&cfg).unwrap();
    let abort = out.abort.expect("huge steps must abort");
    assert!(abort.step >= 1);
    assert!(out.params.is_finite());
    assert!(out.log.records.len() < cfg.total_steps() + 1);
}

#[test]
fn config_errors_map_to_exit_code_two() {
    let bad = r#"{"optim": {"clip_ratio": 1.5}}"#;
    assert!(ExperimentConfig::from_json(bad).is_err());
    let unknown = r#"{"steps_per_epoch": 3}"#;
    assert!(ExperimentConfig::from_json(unknown).is_err());
    let e = run_training(&ExperimentConfig { heldout_frac: 0.0, ..small() }).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn reference_configs_parse() {
    let paper = ExperimentConfig::from_json(&std::fs::read_to_string(config_path("paper_appendix_b.json")).unwrap()).unwrap();
    assert_eq!(paper.optim.learning_rate, 1e-6);
    assert_eq!(paper.rl_batch_size, 256);
    assert_eq!(paper.optim.group_size, 8);
    assert_eq!(paper.rollout_temperature, 1.0);
    assert_eq!(paper.optim.kl_coeff, 0.001);
    assert_eq!(paper.optim.clip_ratio, 0.2);
    assert_eq!((paper.reward.w_decision, paper.reward.w_trace, paper.reward.w_final), (10.0, 10.0, 5.0));
    assert_eq!(paper.reward.format_penalty, -1.0);
    assert!(matches!(paper.optim.optimizer, OptimizerKind::AdamW { .. }));
    let desk = ExperimentConfig::from_json(&std::fs::read_to_string(config_path("desk_default.json")).unwrap()).unwrap();
    assert_eq!(desk, ExperimentConfig::default());
}

#[test]
fn kl_lab_report_and_traces() {
    let cfg = KlLabConfig {
        seeds: vec![0, 1, 2],
        steps: 200,
        trace_every: 50,
        ..KlLabConfig::default()
    };
    let rep = run_kl_lab(&cfg).unwrap();
    assert_eq!(rep.fits.len(), 3);
    // five trace points per fit (0, 50, ..., 200), two directions, three seeds
    assert_eq!(rep.traces_csv().lines().count(), 1 + 3 * 2 * 5);
    assert_eq!(rep.summary_csv().lines().count(), 1 + 3 * 2);
    for f in &rep.fits {
        let total: f64 = f.forward.region_mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
