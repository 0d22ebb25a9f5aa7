use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qfree::acceptance::sweep_threshold;
use qfree::analysis::{self, IgmReport};
use qfree::checkpoint::Checkpoint;
use qfree::config::{parse_seeds, RunConfig};
use qfree::files;
use qfree::report;
use qfree::runner;
use qfree_core::env::EnvKind;
use qfree_core::factor::Variant;

#[derive(Parser)]
#[command(
    name = "qfree",
    version,
    about = "Value factorization experiments on cooperative matrix and memory games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one seed into <out>/seed_<seed>.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fail unless the run meets the success criterion.
        #[arg(long = "assert")]
        check: bool,
    },
    /// Train several seeds and aggregate them.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// A count `N` (seeds 0..N), a range `a..b` or a list `0,3,7`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = runner::default_jobs())]
        jobs: usize,
        /// Fail unless the sweep meets its acceptance threshold.
        #[arg(long = "assert")]
        check: bool,
    },
    /// Write the Q_tot table of a one-step game checkpoint as CSV.
    DumpQtot {
        checkpoint: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the advantage conditions and IGM on a Q_tot CSV or a checkpoint.
    CheckIgm {
        /// `qtot.csv` or `checkpoint.bin`.
        path: PathBuf,
        /// Per-agent greedy tuple for a CSV table, e.g. `0,0`.
        #[arg(long)]
        a_star: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
        /// Fail unless both checks hold.
        #[arg(long = "assert")]
        check: bool,
    },
    /// Rebuild summary.csv and curve.csv of a sweep directory.
    Aggregate {
        dir: PathBuf,
        /// Compare with the stored files instead of writing them.
        #[arg(long)]
        verify: bool,
        /// Fail unless the sweep meets its acceptance threshold.
        #[arg(long = "assert")]
        check: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    algo: Option<Variant>,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    v1: Option<f64>,
    #[arg(long)]
    v2: Option<f64>,
    #[arg(long)]
    literal_min_penalty: bool,
    #[arg(long)]
    no_param_sharing: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut cfg = RunConfig::parse_with(&text, self.env, self.algo)?;
        let t = &mut cfg.train;
        if let Some(s) = self.steps {
            t.total_steps = s;
        }
        if let Some(v) = self.v1 {
            t.v1 = v;
        }
        if let Some(v) = self.v2 {
            t.v2 = v;
        }
        t.literal_min_penalty |= self.literal_min_penalty;
        t.share_params &= !self.no_param_sharing;
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.train.validate(cfg.env)?;
        Ok(cfg)
    }
}

fn print_igm(report: &IgmReport, check: bool) -> Result<()> {
    println!("{report}");
    if check && !(report.theorem1.holds && report.igm) {
        bail!("the advantage conditions or IGM do not hold");
    }
    Ok(())
}

fn threshold(summary: &report::SweepSummary) -> Result<()> {
    let Some(rule) = sweep_threshold(summary.env, summary.variant) else {
        bail!(
            "no acceptance threshold for {} on {}",
            summary.variant,
            summary.env
        );
    };
    let verdict = rule(summary);
    println!("acceptance: {verdict}");
    if !verdict.pass {
        bail!("acceptance threshold not met");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, seed, check } => {
            let cfg = run.resolve()?;
            let dir = runner::seed_dir(&cfg.out, seed);
            let report = runner::train_run(&cfg, seed, &dir)?;
            println!(
                "{} {} seed {seed}: final return {} greedy {:?} success {} -> {}",
                cfg.env,
                cfg.variant(),
                report.final_window_return(),
                report.final_greedy,
                report.success(),
                dir.display()
            );
            if check && !report.success() {
                bail!("run did not reach the optimum");
            }
        }
        Command::Sweep {
            run,
            seeds,
            jobs,
            check,
        } => {
            let mut cfg = run.resolve()?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            let summary = runner::sweep(&cfg, jobs, |seed, r| {
                eprintln!(
                    "seed {seed}: final return {} success {}",
                    r.final_window_return(),
                    r.success()
                );
            })?;
            println!(
                "{} {}: {}/{} successful -> {}",
                cfg.env,
                cfg.variant(),
                summary.successes(),
                summary.runs.len(),
                cfg.out.display()
            );
            if check {
                threshold(&summary)?;
            }
        }
        Command::DumpQtot { checkpoint, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let table = ckpt.model.qtot_table(ckpt.env.build(ckpt.seed).as_mut())?;
            match out {
                Some(p) => files::write_qtot(&p, &table)?,
                None => std::io::stdout().write_all(&files::qtot_csv(&table)?)?,
            }
        }
        Command::CheckIgm {
            path,
            a_star,
            tol,
            check,
        } => {
            let report = if path.extension().is_some_and(|e| e == "csv") {
                let Some(a) = a_star else {
                    bail!("--a-star is required for a CSV table");
                };
                analysis::check_table(&files::read_qtot(&path)?, &analysis::parse_joint(&a)?, tol)?
            } else {
                analysis::check_checkpoint(&Checkpoint::load(&path)?, tol)?
            };
            print_igm(&report, check)?;
        }
        Command::Aggregate { dir, verify, check } => {
            if verify {
                report::verify_sweep(&dir)?;
                println!("summary.csv and curve.csv match the run directories");
            }
            let summary = report::aggregate_sweep(&dir)?;
            if !verify {
                report::write_sweep_files(&dir, &summary)?;
                println!(
                    "{}/{} successful -> {}",
                    summary.successes(),
                    summary.runs.len(),
                    dir.display()
                );
            }
            if check {
                threshold(&summary)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
