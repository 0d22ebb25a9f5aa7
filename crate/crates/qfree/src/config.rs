//! Flat `key = value` run configuration files.
//!
//! `#` starts a comment; blank lines are ignored; every key may appear once.
//! `env` and `algo` pick the defaults (see [`TrainConfig::for_env`]), the
//! remaining keys override them. Unknown keys are rejected.
//!
//! | key | default |
//! |---|---|
//! | `env` | `matrix3` |
//! | `algo` | `qfree` |
//! | `out` | `runs/<env>_<algo>` |
//! | `seeds` | `20`, meaning `0..20` (also a range `a..b` or a list `0,3,7`) |
//! | any [`TrainConfig`] field | per environment |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use qfree_core::env::EnvKind;
use qfree_core::factor::Variant;
use qfree_core::train::TrainConfig;

pub const DEFAULT_SWEEP_SEEDS: u64 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn new(env: EnvKind, variant: Variant) -> Self {
        Self {
            env,
            train: TrainConfig::for_env(env, variant),
            out: PathBuf::from(format!("runs/{env}_{variant}")),
            seeds: (0..DEFAULT_SWEEP_SEEDS).collect(),
        }
    }

    pub fn variant(&self) -> Variant {
        self.train.variant
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, None, None)
    }

    /// Like [`RunConfig::parse`], with `env` and `algo` taken from the
    /// arguments when given.
    pub fn parse_with(text: &str, env: Option<EnvKind>, variant: Option<Variant>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if entries
                .insert(k.to_string(), (lineno + 1, v.to_string()))
                .is_some()
            {
                bail!("line {}: duplicate key `{k}`", lineno + 1);
            }
        }

        let file_env = entries
            .remove("env")
            .map(|(_, v)| v.parse::<EnvKind>())
            .transpose()?;
        let file_variant = entries
            .remove("algo")
            .map(|(_, v)| v.parse::<Variant>())
            .transpose()?;
        let env = env.or(file_env).unwrap_or(EnvKind::Matrix3);
        let variant = variant.or(file_variant).unwrap_or(Variant::Qfree);
        let mut cfg = Self::new(env, variant);
        for (key, (lineno, value)) in &entries {
            cfg.set(key, value)
                .with_context(|| format!("line {lineno}: `{key}`"))?;
        }
        Ok(cfg)
    }

    /// Sets one key other than `env` and `algo`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "out" => self.out = PathBuf::from(value),
            "seeds" => self.seeds = parse_seeds(value)?,
            "gamma" => t.gamma = num(value)?,
            "epsilon_start" => t.epsilon_start = num(value)?,
            "epsilon_end" => t.epsilon_end = num(value)?,
            "epsilon_anneal_steps" => t.epsilon_anneal_steps = num(value)?,
            "learning_rate" => t.learning_rate = num(value)?,
            "batch_episodes" => t.batch_episodes = num(value)?,
            "buffer_capacity" => t.buffer_capacity = num(value)?,
            "target_update_interval" => t.target_update_interval = num(value)?,
            "v1" => t.v1 = num(value)?,
            "v2" => t.v2 = num(value)?,
            "total_steps" => t.total_steps = num(value)?,
            "seed" => t.seed = num(value)?,
            "history_window" => t.history_window = num(value)?,
            "grad_clip" => t.grad_clip = num(value)?,
            "uniform_joint_prob" => t.uniform_joint_prob = num(value)?,
            "share_params" => t.share_params = num(value)?,
            "literal_min_penalty" => t.literal_min_penalty = num(value)?,
            "penalty_all_actions" => t.penalty_all_actions = num(value)?,
            "regularize_next_obs" => t.regularize_next_obs = num(value)?,
            "unconstrained_omega" => t.unconstrained_omega = num(value)?,
            "log_interval" => t.log_interval = num(value)?,
            "eval_episodes" => t.eval_episodes = num(value)?,
            "env" | "algo" => bail!("`{key}` can only be set at the top of the file"),
            _ => bail!("unknown key"),
        }
        Ok(())
    }

    /// The file form of this configuration; parsing it gives `self` back.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", &self.env);
        kv("algo", &t.variant);
        kv("out", &self.out.display());
        kv("seeds", &format_seeds(&self.seeds));
        kv("gamma", &t.gamma);
        kv("epsilon_start", &t.epsilon_start);
        kv("epsilon_end", &t.epsilon_end);
        kv("epsilon_anneal_steps", &t.epsilon_anneal_steps);
        kv("learning_rate", &t.learning_rate);
        kv("batch_episodes", &t.batch_episodes);
        kv("buffer_capacity", &t.buffer_capacity);
        kv("target_update_interval", &t.target_update_interval);
        kv("v1", &t.v1);
        kv("v2", &t.v2);
        kv("total_steps", &t.total_steps);
        kv("seed", &t.seed);
        kv("history_window", &t.history_window);
        kv("grad_clip", &t.grad_clip);
        kv("uniform_joint_prob", &t.uniform_joint_prob);
        kv("share_params", &t.share_params);
        kv("literal_min_penalty", &t.literal_min_penalty);
        kv("penalty_all_actions", &t.penalty_all_actions);
        kv("regularize_next_obs", &t.regularize_next_obs);
        kv("unconstrained_omega", &t.unconstrained_omega);
        kv("log_interval", &t.log_interval);
        kv("eval_episodes", &t.eval_episodes);
        s
    }
}

fn num<T: FromStr>(value: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    Ok(value.parse()?)
}

/// `N` is shorthand for `0..N`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = value.split_once("..") {
        (a.trim().parse()?..b.trim().parse()?).collect()
    } else if let Ok(n) = value.trim().parse::<u64>() {
        (0..n).collect()
    } else {
        value
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        bail!("empty seed list");
    }
    Ok(seeds)
}

fn format_seeds(seeds: &[u64]) -> String {
    let contiguous = seeds.windows(2).all(|w| w[1] == w[0] + 1);
    match (seeds.first(), seeds.last()) {
        (Some(a), Some(b)) if contiguous => format!("{a}..{}", b + 1),
        _ => seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    }
}
