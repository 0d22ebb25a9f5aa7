//! Sweep summaries, learning-curve aggregation and table comparison.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use qfree_core::env::{DecPomdp, EnvKind};
use qfree_core::factor::Variant;
use qfree_core::igm::JointTable;
use qfree_core::train::{run_success, FINAL_WINDOW};

use crate::checkpoint::Checkpoint;
use crate::files::{
    self, MetricsRecord, CHECKPOINT_FILE, CURVE_FILE, METRICS_FILE, QTOT_FILE, SUMMARY_FILE,
};

/// Lower and upper quantiles of the central 75% band.
pub const BAND: (f64, f64) = (0.125, 0.875);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableComparison {
    pub linf: f64,
    pub rmse: f64,
    pub argmax_match: bool,
}

pub fn compare_table(learned: &JointTable, truth: &JointTable) -> Result<TableComparison> {
    ensure!(
        learned.n_agents() == truth.n_agents() && learned.n_actions() == truth.n_actions(),
        "table shapes differ: {}x{} vs {}x{}",
        learned.n_agents(),
        learned.n_actions(),
        truth.n_agents(),
        truth.n_actions()
    );
    let diffs = learned
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| a - b);
    let (mut linf, mut sq) = (0.0f64, 0.0);
    for d in diffs {
        linf = linf.max(d.abs());
        sq += d * d;
    }
    Ok(TableComparison {
        linf,
        rmse: (sq / truth.len() as f64).sqrt(),
        argmax_match: learned.argmax() == truth.argmax(),
    })
}

/// The exact payoff table of a one-step game.
pub fn truth_table(env: &dyn DecPomdp) -> Option<JointTable> {
    let spec = env.spec();
    env.payoff(&vec![0; spec.n_agents])?;
    Some(JointTable::from_fn(spec.n_agents, spec.n_actions, |j| {
        env.payoff(j).expect("payoff defined on every cell")
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub env_step: u64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Linear interpolation between order statistics of a sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise mean and central 75% band of `mean_return` across runs.
pub fn aggregate_runs(runs: &[Vec<MetricsRecord>]) -> Result<Vec<CurvePoint>> {
    let Some(first) = runs.first() else {
        bail!("no runs to aggregate");
    };
    for (k, run) in runs.iter().enumerate() {
        ensure!(
            run.len() == first.len()
                && run.iter().zip(first).all(|(a, b)| a.env_step == b.env_step),
            "run {k} is logged on a different grid than run 0"
        );
    }
    Ok((0..first.len())
        .map(|i| {
            let mut xs: Vec<f64> = runs.iter().map(|r| r[i].mean_return).collect();
            xs.sort_by(f64::total_cmp);
            CurvePoint {
                env_step: first[i].env_step,
                mean: xs.iter().sum::<f64>() / xs.len() as f64,
                ci_low: quantile(&xs, BAND.0),
                ci_high: quantile(&xs, BAND.1),
            }
        })
        .collect())
}

pub fn curve_csv(curve: &[CurvePoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["env_step", "mean", "ci_low", "ci_high"])?;
    for p in curve {
        w.write_record([
            p.env_step.to_string(),
            p.mean.to_string(),
            p.ci_low.to_string(),
            p.ci_high.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// What one finished run directory says about its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub final_return: f64,
    pub success: bool,
    pub greedy_action: Option<Vec<usize>>,
    /// Known optimum of a tabular game.
    pub optimal_action: Option<Vec<usize>>,
    pub comparison: Option<TableComparison>,
    /// Learned `Q_tot` at the true optimum.
    pub qtot_at_optimum: Option<f64>,
}

pub fn final_window(rows: &[MetricsRecord]) -> f64 {
    let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.mean_return).sum::<f64>() / tail.len() as f64
}

/// Rebuilds a run's summary from its files alone.
pub fn summarize_run(dir: &Path) -> Result<RunSummary> {
    let rows = files::read_metrics(&dir.join(METRICS_FILE))?;
    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    let mut env = ckpt.env.build(ckpt.seed);
    let final_return = final_window(&rows);
    let optimal = env.optimal_joint_action();

    let (greedy_action, comparison, qtot_at_optimum) = match truth_table(env.as_ref()) {
        Some(truth) => {
            let histories: Vec<Vec<Vec<f64>>> = env.reset().into_iter().map(|o| vec![o]).collect();
            let greedy = ckpt.model.greedy_joint_action(&histories)?;
            let learned = files::read_qtot(&dir.join(QTOT_FILE))?;
            let at_opt = optimal.as_deref().and_then(|a| learned.get(a));
            (Some(greedy), Some(compare_table(&learned, &truth)?), at_opt)
        }
        None => (None, None, None),
    };
    Ok(RunSummary {
        seed: ckpt.seed,
        final_return,
        success: run_success(
            optimal.as_deref(),
            greedy_action.as_deref(),
            final_return,
            env.optimal_return(),
        ),
        greedy_action,
        optimal_action: optimal,
        comparison,
        qtot_at_optimum,
    })
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "seed",
    "final_return",
    "success",
    "greedy_action",
    "linf",
    "rmse",
    "argmax_match",
    "qtot_at_optimum",
];

pub fn summary_csv(runs: &[RunSummary]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in runs {
        let c = r.comparison.as_ref();
        w.write_record([
            r.seed.to_string(),
            r.final_return.to_string(),
            r.success.to_string(),
            r.greedy_action
                .as_deref()
                .map(files::cell_label)
                .unwrap_or_default(),
            opt(c.map(|c| c.linf)),
            opt(c.map(|c| c.rmse)),
            c.map(|c| c.argmax_match.to_string()).unwrap_or_default(),
            opt(r.qtot_at_optimum),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// `seed_<k>` subdirectories of a sweep, ordered by seed.
pub fn run_dirs(sweep_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<(u64, PathBuf)> = Vec::new();
    for entry in
        fs::read_dir(sweep_dir).with_context(|| format!("reading {}", sweep_dir.display()))?
    {
        let path = entry?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|s| s.parse().ok());
        if let (Some(seed), true) = (seed, path.is_dir()) {
            dirs.push((seed, path));
        }
    }
    ensure!(
        !dirs.is_empty(),
        "no seed_<k> run directories in {}",
        sweep_dir.display()
    );
    dirs.sort();
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub env: EnvKind,
    pub variant: Variant,
    pub runs: Vec<RunSummary>,
    pub curve: Vec<CurvePoint>,
}

impl SweepSummary {
    pub fn successes(&self) -> usize {
        self.runs.iter().filter(|r| r.success).count()
    }
}

/// Recomputes a sweep's summary and curve from its run directories.
pub fn aggregate_sweep(sweep_dir: &Path) -> Result<SweepSummary> {
    let dirs = run_dirs(sweep_dir)?;
    let metrics = dirs
        .iter()
        .map(|d| files::read_metrics(&d.join(METRICS_FILE)))
        .collect::<Result<Vec<_>>>()?;
    let runs = dirs
        .iter()
        .map(|d| summarize_run(d))
        .collect::<Result<Vec<_>>>()?;
    let first = Checkpoint::load(&dirs[0].join(CHECKPOINT_FILE))?;
    Ok(SweepSummary {
        env: first.env,
        variant: first.model.variant,
        runs,
        curve: aggregate_runs(&metrics)?,
    })
}

pub fn write_sweep_files(sweep_dir: &Path, summary: &SweepSummary) -> Result<()> {
    fs::write(sweep_dir.join(SUMMARY_FILE), summary_csv(&summary.runs)?)?;
    fs::write(sweep_dir.join(CURVE_FILE), curve_csv(&summary.curve)?)?;
    Ok(())
}

/// Checks that `summary.csv` and `curve.csv` match a fresh aggregation byte for byte.
pub fn verify_sweep(sweep_dir: &Path) -> Result<()> {
    let summary = aggregate_sweep(sweep_dir)?;
    for (name, fresh) in [
        (SUMMARY_FILE, summary_csv(&summary.runs)?),
        (CURVE_FILE, curve_csv(&summary.curve)?),
    ] {
        let stored = fs::read(sweep_dir.join(name)).with_context(|| format!("reading {name}"))?;
        ensure!(fresh == stored, "{name} does not match the run directories");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.0), 0.0);
        assert_eq!(quantile(&xs, 0.5), 2.0);
        assert_eq!(quantile(&xs, 0.125), 0.5);
        assert_eq!(quantile(&[7.0], 0.875), 7.0);
    }
}
