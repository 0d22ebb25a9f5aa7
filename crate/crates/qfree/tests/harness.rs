use std::fs;
use std::path::Path;
use std::process::Command;

use qfree::analysis::{check_checkpoint, check_table};
use qfree::checkpoint::Checkpoint;
use qfree::config::RunConfig;
use qfree::files::{
    self, MetricsRecord, CHECKPOINT_FILE, CURVE_FILE, MANIFEST_FILE, METRICS_FILE, QTOT_FILE,
    SUMMARY_FILE,
};
use qfree::report::{aggregate_runs, compare_table, quantile, summarize_run, verify_sweep};
use qfree::runner::{seed_dir, sweep, train_run};
use qfree_core::env::{matrix3_reward, EnvKind};
use qfree_core::factor::{FactorizationModel, ModelConfig, Variant};
use qfree_core::igm::JointTable;
use qfree_core::rng::{stream, Stream};
use rand::Rng as _;
use tempfile::tempdir;

fn matrix3_truth() -> JointTable {
    JointTable::from_fn(2, 3, |a| matrix3_reward(a[0], a[1]).unwrap())
}

fn quick(env: EnvKind, variant: Variant, steps: u64, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(env, variant);
    cfg.train.total_steps = steps;
    cfg.train.batch_episodes = 8;
    cfg.out = out.to_path_buf();
    cfg
}

fn record(step: u64, ret: f64) -> MetricsRecord {
    MetricsRecord {
        env_step: step,
        episode: step,
        train_step: 0,
        mean_return: ret,
        loss: None,
        td_loss: None,
        eq_residual: None,
        ineq_penalty: None,
        epsilon: 1.0,
        seed: 0,
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempdir().unwrap();
    for (k, variant) in Variant::ALL.into_iter().enumerate() {
        let config = ModelConfig::for_env(&EnvKind::Matrix3.spec());
        let ckpt = Checkpoint {
            env: EnvKind::Matrix3,
            model: FactorizationModel::new(variant, config, k as u64),
            seed: k as u64,
        };
        let path = dir.path().join(format!("{variant}.bin"));
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), fs::read(&path).unwrap());
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let config = ModelConfig::for_env(&EnvKind::Matrix3.spec());
    let bytes = Checkpoint {
        env: EnvKind::Matrix3,
        model: FactorizationModel::new(Variant::Qfree, config, 0),
        seed: 0,
    }
    .to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&magic).is_err());
    let text = String::from_utf8_lossy(&bytes)
        .replace("variant=qfree", "variant=vdnxx")
        .into_bytes();
    assert!(Checkpoint::from_bytes(&text).is_err());
    assert!(Checkpoint::load(Path::new("/nonexistent/checkpoint.bin")).is_err());
}

#[test]
fn metrics_round_trip_with_missing_values() {
    let dir = tempdir().unwrap();
    let path = dir.path().join(METRICS_FILE);
    let mut rows = vec![record(100, 0.1 + 0.2), record(200, -12.0)];
    rows[1].loss = Some(1.0 / 3.0);
    rows[1].td_loss = Some(f64::MIN_POSITIVE);
    files::write_metrics(&path, &rows).unwrap();
    assert_eq!(files::read_metrics(&path).unwrap(), rows);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("env_step,episode,train_step,mean_return,loss,td_loss,eq_residual,ineq_penalty,epsilon,seed\n"));
    assert!(text.contains("100,100,0,0.30000000000000004,,,,,1,0\n"));
}

#[test]
fn qtot_round_trip_and_layout() {
    let dir = tempdir().unwrap();
    let path = dir.path().join(QTOT_FILE);
    let table = matrix3_truth();
    files::write_qtot(&path, &table).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(
        text,
        "\"(0,0)\",\"(0,1)\",\"(0,2)\",\"(1,0)\",\"(1,1)\",\"(1,2)\",\"(2,0)\",\"(2,1)\",\"(2,2)\"\n1,-12,-12,-12,0,0,-12,0,0\n"
    );
    assert_eq!(files::read_qtot(&path).unwrap(), table);

    fs::write(&path, "\"(0,1)\",\"(0,0)\"\n1,2\n").unwrap();
    assert!(files::read_qtot(&path).is_err());
    fs::write(&path, "\"(0,0)\",\"(0,1)\"\n1\n").unwrap();
    assert!(files::read_qtot(&path).is_err());
}

#[test]
fn compare_table_examples() {
    let truth = matrix3_truth();
    let same = compare_table(&truth, &truth).unwrap();
    assert_eq!((same.linf, same.rmse, same.argmax_match), (0.0, 0.0, true));

    // Learned tables reported for the monotonic mixer and for the dueling mixer.
    let qmix =
        JointTable::new(2, 3, vec![-9.4, -9.4, -9.4, -9.4, 0.0, 0.0, -9.4, 0.0, 0.0]).unwrap();
    assert!(!compare_table(&qmix, &truth).unwrap().argmax_match);
    let qfree = JointTable::new(
        2,
        3,
        vec![1.0, -12.0, -12.0, -12.0, 0.0, 0.0, -12.0, 0.0, 0.0],
    )
    .unwrap();
    let c = compare_table(&qfree, &truth).unwrap();
    assert_eq!(c.linf, 0.0);
    assert!(c.argmax_match);

    let shifted = JointTable::from_fn(2, 3, |a| {
        truth.get(a).unwrap() + if a == [2, 2] { 3.0 } else { 0.0 }
    });
    let c = compare_table(&shifted, &truth).unwrap();
    assert_eq!(c.linf, 3.0);
    assert!((c.rmse - (9.0f64 / 9.0).sqrt()).abs() < 1e-15);

    let wide = JointTable::from_fn(2, 4, |_| 0.0);
    assert!(compare_table(&wide, &truth).is_err());
}

#[test]
fn aggregate_examples() {
    let run = vec![record(100, 0.5), record(200, 1.0)];
    let one = aggregate_runs(std::slice::from_ref(&run)).unwrap();
    for (p, r) in one.iter().zip(&run) {
        assert_eq!(
            (p.env_step, p.mean, p.ci_low, p.ci_high),
            (r.env_step, r.mean_return, r.mean_return, r.mean_return)
        );
    }

    let zeros = vec![record(100, 0.0), record(200, 0.0)];
    let ones = vec![record(100, 1.0), record(200, 1.0)];
    let two = aggregate_runs(&[zeros.clone(), ones]).unwrap();
    assert!(two.iter().all(|p| p.mean == 0.5));

    let shifted = vec![record(100, 0.0), record(300, 0.0)];
    assert!(aggregate_runs(&[zeros.clone(), shifted]).is_err());
    assert!(aggregate_runs(&[zeros.clone(), vec![record(100, 0.0)]]).is_err());
    assert!(aggregate_runs(&[]).is_err());
}

#[test]
fn band_brackets_known_quantiles() {
    // 20 runs of iid U(0, 1) returns. The k-th of n uniform order statistics
    // has mean k / (n + 1), so the interpolated quantile q has mean
    // (1 + q (n - 1)) / (n + 1); averaging over the grid shrinks the noise.
    let mut rng = stream(11, Stream::Test);
    let (n, grid) = (20, 400);
    let runs: Vec<Vec<MetricsRecord>> = (0..n)
        .map(|_| (0..grid).map(|t| record(t, rng.gen::<f64>())).collect())
        .collect();
    let curve = aggregate_runs(&runs).unwrap();
    let avg =
        |f: fn(&qfree::report::CurvePoint) -> f64| curve.iter().map(f).sum::<f64>() / grid as f64;
    let expected = |q: f64| (1.0 + q * (n - 1) as f64) / (n + 1) as f64;
    assert!((avg(|p| p.ci_low) - expected(0.125)).abs() < 0.015);
    assert!((avg(|p| p.ci_high) - expected(0.875)).abs() < 0.015);
    assert!((avg(|p| p.mean) - 0.5).abs() < 0.02);
    assert!(curve
        .iter()
        .all(|p| p.ci_low <= p.mean && p.mean <= p.ci_high));
    assert_eq!(quantile(&[1.0, 3.0], 0.5), 2.0);
}

#[test]
fn check_igm_on_true_payoff() {
    let r = check_table(&matrix3_truth(), &[0, 0], 0.0).unwrap();
    assert!(r.theorem1.holds && r.igm);
    assert_eq!(
        (r.theorem1.eq_residual, r.theorem1.max_violation),
        (0.0, 0.0)
    );
    let normalized: Vec<f64> = matrix3_truth().normalized().values().to_vec();
    assert_eq!(
        normalized,
        vec![0.0, -13.0, -13.0, -13.0, -1.0, -1.0, -13.0, -1.0, -1.0]
    );

    let r = check_table(&matrix3_truth(), &[1, 1], 0.0).unwrap();
    assert!(!r.theorem1.holds && !r.igm);
    assert_eq!(r.theorem1.eq_residual, 1.0);
    assert!(check_table(&matrix3_truth(), &[0, 3], 0.0).is_err());
}

/// Full enumeration, written independently of the library.
fn enumerate_argmax(q: &[f64], n_agents: usize, n_actions: usize) -> Vec<usize> {
    let mut best = 0;
    for idx in 1..q.len() {
        if q[idx] > q[best] {
            best = idx;
        }
    }
    let mut joint = vec![0; n_agents];
    let mut rem = best;
    for slot in joint.iter_mut().rev() {
        *slot = rem % n_actions;
        rem /= n_actions;
    }
    joint
}

#[test]
fn check_igm_matches_enumeration() {
    let mut rng = stream(5, Stream::Test);
    for trial in 0..500 {
        let (n, m): (usize, usize) = [(2, 3), (3, 2), (2, 4)][trial % 3];
        let values: Vec<f64> = (0..m.pow(n as u32))
            .map(|_| rng.gen_range(-10.0..10.0))
            .collect();
        let table = JointTable::new(n, m, values.clone()).unwrap();
        let truth = enumerate_argmax(&values, n, m);
        let a_star: Vec<usize> = if trial % 2 == 0 {
            truth.clone()
        } else {
            (0..n).map(|_| rng.gen_range(0..m)).collect()
        };
        let r = check_table(&table, &a_star, 0.0).unwrap();
        assert_eq!(r.theorem1.holds, truth == a_star, "trial {trial}");
        assert_eq!(r.igm, truth == a_star, "trial {trial}");
        assert_eq!(r.joint_argmax, truth);
    }
}

#[test]
fn run_files_are_reproducible() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let cfg_a = quick(EnvKind::Matrix3, Variant::Qfree, 600, a.path());
    let cfg_b = quick(EnvKind::Matrix3, Variant::Qfree, 600, b.path());
    let report = train_run(&cfg_a, 3, &seed_dir(a.path(), 3)).unwrap();
    train_run(&cfg_b, 3, &seed_dir(b.path(), 3)).unwrap();
    for name in [METRICS_FILE, QTOT_FILE, CHECKPOINT_FILE] {
        let x = fs::read(seed_dir(a.path(), 3).join(name)).unwrap();
        let y = fs::read(seed_dir(b.path(), 3).join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let manifest = fs::read_to_string(seed_dir(a.path(), 3).join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("created_unix = "));
    assert!(manifest.contains("seed = 3"));

    let summary = summarize_run(&seed_dir(a.path(), 3)).unwrap();
    assert_eq!(summary.seed, 3);
    assert_eq!(summary.greedy_action, report.final_greedy);
    assert_eq!(summary.success, report.success());
    assert_eq!(summary.final_return, report.final_window_return());
    assert_eq!(summary.qtot_at_optimum, report.qtot().unwrap().get(&[0, 0]));

    let ckpt = Checkpoint::load(&seed_dir(a.path(), 3).join(CHECKPOINT_FILE)).unwrap();
    let igm = check_checkpoint(&ckpt, 1e-9).unwrap();
    assert_eq!(Some(igm.a_star), report.final_greedy);
}

#[test]
fn memory_runs_have_no_table() {
    let dir = tempdir().unwrap();
    let cfg = quick(EnvKind::MemoryPair, Variant::Qfree, 300, dir.path());
    train_run(&cfg, 0, &seed_dir(dir.path(), 0)).unwrap();
    assert!(!seed_dir(dir.path(), 0).join(QTOT_FILE).exists());
    let s = summarize_run(&seed_dir(dir.path(), 0)).unwrap();
    assert_eq!((s.greedy_action, s.comparison), (None, None));
}

#[test]
fn sweep_aggregates_and_verifies() {
    let dir = tempdir().unwrap();
    let mut cfg = quick(EnvKind::Matrix3, Variant::Vdn, 400, dir.path());
    cfg.seeds = vec![0, 1, 2];
    let summary = sweep(&cfg, 2, |_, _| {}).unwrap();
    assert_eq!(
        summary.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
    assert_eq!(summary.variant, Variant::Vdn);
    assert_eq!(summary.curve.len(), 4);
    verify_sweep(dir.path()).unwrap();

    let summary_text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert!(summary_text.starts_with(
        "seed,final_return,success,greedy_action,linf,rmse,argmax_match,qtot_at_optimum\n"
    ));
    assert_eq!(summary_text.lines().count(), 4);

    // One worker gives the same files as two.
    let serial = tempdir().unwrap();
    let mut cfg1 = cfg.clone();
    cfg1.out = serial.path().to_path_buf();
    sweep(&cfg1, 1, |_, _| {}).unwrap();
    for name in [SUMMARY_FILE, CURVE_FILE] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(serial.path().join(name)).unwrap()
        );
    }

    fs::write(
        dir.path().join(CURVE_FILE),
        "env_step,mean,ci_low,ci_high\n",
    )
    .unwrap();
    assert!(verify_sweep(dir.path()).is_err());
}

fn qfree_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qfree"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cli_train_dump_and_check() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(
        &cfg_path,
        "# short run\nenv = matrix3\nalgo = qfree\nbatch_episodes = 4\n",
    )
    .unwrap();
    let o = qfree_cli(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "1",
        "--steps",
        "200",
        "--out",
        out,
        "--v1",
        "0.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = seed_dir(dir.path(), 1);
    assert!(fs::read_to_string(run.join(MANIFEST_FILE))
        .unwrap()
        .contains("v1 = 0.5"));

    let ckpt = run.join(CHECKPOINT_FILE);
    let o = qfree_cli(&["dump-qtot", ckpt.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(o.stdout, fs::read(run.join(QTOT_FILE)).unwrap());

    let o = qfree_cli(&["check-igm", ckpt.to_str().unwrap(), "--tol", "1e-9"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("theorem1 = "));

    let truth = dir.path().join("truth.csv");
    files::write_qtot(&truth, &matrix3_truth()).unwrap();
    let o = qfree_cli(&[
        "check-igm",
        truth.to_str().unwrap(),
        "--a-star",
        "0,0",
        "--assert",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(text.contains("a_star_residual = 0\n") && text.contains("max_violation = 0\n"));
    let o = qfree_cli(&[
        "check-igm",
        truth.to_str().unwrap(),
        "--a-star",
        "2,2",
        "--assert",
    ]);
    assert!(!o.status.success());
}

#[test]
fn cli_errors_exit_nonzero() {
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "learning_rat = 0.1\n").unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["train", "--config", bad.to_str().unwrap(), "--out", out],
        vec!["train", "--config", "/nonexistent.cfg", "--out", out],
        vec![
            "train",
            "--algo",
            "qfree_ablation",
            "--v1",
            "1",
            "--out",
            out,
        ],
        vec!["train", "--env", "chess", "--out", out],
        vec!["check-igm", "/nonexistent/qtot.csv", "--a-star", "0,0"],
        vec!["aggregate", out],
    ] {
        let o = qfree_cli(&args);
        assert!(!o.status.success(), "{args:?} should fail");
        assert!(
            String::from_utf8_lossy(&o.stderr).contains("error"),
            "{args:?}"
        );
    }
}

#[test]
fn cli_sweep_assert_reports_threshold() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = qfree_cli(&[
        "sweep", "--env", "matrix3", "--algo", "qfree", "--seeds", "2", "--steps", "100", "--out",
        out, "--jobs", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join(SUMMARY_FILE).exists() && dir.path().join(CURVE_FILE).exists());
    let o = qfree_cli(&["aggregate", out, "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 100 steps cannot meet the optimality threshold.
    let o = qfree_cli(&["aggregate", out, "--assert"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("acceptance: FAIL"));
}
