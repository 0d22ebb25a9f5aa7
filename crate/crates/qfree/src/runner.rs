//! Training runs and seed sweeps on disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use anyhow::{anyhow, Context, Result};
use qfree_core::train::{run_training, RunReport};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::files::{self, MetricsRecord, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE, QTOT_FILE};
use crate::report::{self, SweepSummary};

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Trains `seed` and writes `metrics.csv`, `checkpoint.bin`, `qtot.csv`
/// (one-step games) and `manifest.txt` into `dir`.
pub fn train_run(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<RunReport> {
    let mut train = cfg.train;
    train.seed = seed;
    let report = run_training(cfg.env, &train)?;

    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rows: Vec<MetricsRecord> = report.rows.iter().map(MetricsRecord::from).collect();
    files::write_metrics(&dir.join(METRICS_FILE), &rows)?;
    Checkpoint {
        env: cfg.env,
        model: report.model.clone(),
        seed,
    }
    .save(&dir.join(CHECKPOINT_FILE))?;
    let mut written = vec![METRICS_FILE, CHECKPOINT_FILE];
    if let Some(q) = report.qtot() {
        files::write_qtot(&dir.join(QTOT_FILE), q)?;
        written.push(QTOT_FILE);
    }
    let mut run_cfg = cfg.clone();
    run_cfg.train.seed = seed;
    run_cfg.seeds = vec![seed];
    files::write_manifest(&dir.join(MANIFEST_FILE), &run_cfg, &written)?;
    Ok(report)
}

/// Runs every seed of `cfg` on up to `jobs` threads, then aggregates the
/// run directories into `summary.csv` and `curve.csv`.
pub fn sweep(
    cfg: &RunConfig,
    jobs: usize,
    progress: impl Fn(u64, &RunReport) + Sync,
) -> Result<SweepSummary> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let next = AtomicUsize::new(0);
    let failure = Mutex::new(None);
    thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cfg.seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                match train_run(cfg, seed, &seed_dir(&cfg.out, seed)) {
                    Ok(report) => progress(seed, &report),
                    Err(e) => {
                        failure
                            .lock()
                            .unwrap()
                            .get_or_insert(e.context(format!("seed {seed}")));
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure
        .into_inner()
        .map_err(|_| anyhow!("worker panicked"))?
    {
        return Err(e);
    }
    let summary = report::aggregate_sweep(&cfg.out)?;
    report::write_sweep_files(&cfg.out, &summary)?;
    Ok(summary)
}

pub fn default_jobs() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}
