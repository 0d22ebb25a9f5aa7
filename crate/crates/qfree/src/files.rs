//! Per-run output files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! file back yields the exact values. A metric that was not measured in its
//! logging interval (`NaN`) is written as an empty field.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, ensure, Context, Result};
use qfree_core::igm::JointTable;
use qfree_core::train::MetricsRow;

use crate::config::RunConfig;

pub const METRICS_FILE: &str = "metrics.csv";
pub const QTOT_FILE: &str = "qtot.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVE_FILE: &str = "curve.csv";

pub const METRICS_HEADER: [&str; 10] = [
    "env_step",
    "episode",
    "train_step",
    "mean_return",
    "loss",
    "td_loss",
    "eq_residual",
    "ineq_penalty",
    "epsilon",
    "seed",
];

/// One row of `metrics.csv`; `None` marks an empty field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub env_step: u64,
    pub episode: u64,
    pub train_step: u64,
    pub mean_return: f64,
    pub loss: Option<f64>,
    pub td_loss: Option<f64>,
    pub eq_residual: Option<f64>,
    pub ineq_penalty: Option<f64>,
    pub epsilon: f64,
    pub seed: u64,
}

impl From<&MetricsRow> for MetricsRecord {
    fn from(r: &MetricsRow) -> Self {
        let opt = |x: f64| (!x.is_nan()).then_some(x);
        Self {
            env_step: r.env_step,
            episode: r.episode,
            train_step: r.train_step,
            mean_return: r.mean_return,
            loss: opt(r.loss),
            td_loss: opt(r.td_loss),
            eq_residual: opt(r.eq_residual),
            ineq_penalty: opt(r.ineq_penalty),
            epsilon: r.epsilon,
            seed: r.seed,
        }
    }
}

fn field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_metrics(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.env_step.to_string(),
            r.episode.to_string(),
            r.train_step.to_string(),
            r.mean_return.to_string(),
            field(r.loss),
            field(r.td_loss),
            field(r.eq_residual),
            field(r.ineq_penalty),
            r.epsilon.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    ensure!(
        r.headers()?.iter().eq(METRICS_HEADER),
        "{}: unexpected header",
        path.display()
    );
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("{} row {}", path.display(), i + 1);
        let opt = |k: usize| -> Result<Option<f64>> {
            match &rec[k] {
                "" => Ok(None),
                s => Ok(Some(s.parse()?)),
            }
        };
        let parse = || -> Result<MetricsRecord> {
            Ok(MetricsRecord {
                env_step: rec[0].parse()?,
                episode: rec[1].parse()?,
                train_step: rec[2].parse()?,
                mean_return: rec[3].parse()?,
                loss: opt(4)?,
                td_loss: opt(5)?,
                eq_residual: opt(6)?,
                ineq_penalty: opt(7)?,
                epsilon: rec[8].parse()?,
                seed: rec[9].parse()?,
            })
        };
        rows.push(parse().with_context(ctx)?);
    }
    Ok(rows)
}

/// `(a1,a2,...)`.
pub fn cell_label(joint: &[usize]) -> String {
    let inner: Vec<String> = joint.iter().map(usize::to_string).collect();
    format!("({})", inner.join(","))
}

fn parse_label(label: &str) -> Result<Vec<usize>> {
    let inner = label
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .with_context(|| format!("bad cell label {label:?}"))?;
    Ok(inner
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()?)
}

/// Header of joint-action labels `(a1,a2,...)` in row-major order, then one row of values.
pub fn qtot_csv(table: &JointTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(table.joint_actions().map(|j| cell_label(&j)))?;
    w.write_record(table.values().iter().map(f64::to_string))?;
    Ok(w.into_inner()?)
}

pub fn write_qtot(path: &Path, table: &JointTable) -> Result<()> {
    std::fs::write(path, qtot_csv(table)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_qtot(path: &Path) -> Result<JointTable> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let labels: Vec<Vec<usize>> = r
        .headers()?
        .iter()
        .map(parse_label)
        .collect::<Result<_>>()?;
    let mut records = r.records();
    let Some(values) = records.next() else {
        bail!("{}: no value row", path.display());
    };
    ensure!(
        records.next().is_none(),
        "{}: more than one value row",
        path.display()
    );
    let values: Vec<f64> = values?
        .iter()
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()?;
    ensure!(
        values.len() == labels.len(),
        "{}: ragged table",
        path.display()
    );

    let n_agents = labels.first().map_or(0, Vec::len);
    ensure!(n_agents > 0, "{}: empty table", path.display());
    let n_actions = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let table = JointTable::new(n_agents, n_actions, values)?;
    for (idx, label) in labels.iter().enumerate() {
        ensure!(
            table.index_of(label) == Some(idx),
            "{}: cell {} is out of row-major order",
            path.display(),
            cell_label(label)
        );
    }
    Ok(table)
}

/// The only run file that varies between identical runs.
pub fn write_manifest(path: &Path, cfg: &RunConfig, files: &[&str]) -> Result<()> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default();
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "created_unix = {}", now.as_secs())?;
    writeln!(f, "qfree_version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "files = {}", files.join(","))?;
    writeln!(f, "# config")?;
    write!(f, "{}", cfg.to_text())?;
    Ok(())
}
