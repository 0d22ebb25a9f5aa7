//! Episodic Q-learning with the regularized factorized loss.
//!
//! Each environment step picks per-agent ε-greedy actions from the online
//! network. Whole episodes go into a replay ring; every step after the buffer
//! holds a full batch triggers one optimization step on a sampled batch.
//! Targets use double DQN: the online network picks `a*` at `z'`, the target
//! network evaluates it.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::env::{DecPomdp, EnvKind};
use crate::error::{Error, Result};
use crate::factor::{AgentOutputs, FactorizationModel, ModelConfig, ObsView, TabularView, Variant};
use crate::graph::{Graph, Var};
use crate::igm::JointTable;
use crate::nn::{hard_copy, Adam, AdamConfig, Bound, ParamSet};
use crate::replay::{Episode, EpisodeBatch, ReplayBuffer};
use crate::rng::{stream, Rng, Stream};
use crate::tensor::argmax;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    pub learning_rate: f64,
    pub batch_episodes: usize,
    pub buffer_capacity: usize,
    /// Train steps between target synchronizations.
    pub target_update_interval: u64,
    pub v1: f64,
    pub v2: f64,
    /// Environment steps.
    pub total_steps: u64,
    pub seed: u64,
    /// Observation steps an agent conditions on. Must cover the episode limit,
    /// since the recurrent state is carried over the whole episode.
    pub history_window: usize,
    pub grad_clip: f64,
    /// Probability of replacing the whole joint action with a uniform one.
    pub uniform_joint_prob: f64,
    pub share_params: bool,
    /// Penalize `min(A_tot, 0)²` instead of `max(A_tot, 0)²`.
    pub literal_min_penalty: bool,
    /// Sum the inequality penalty over every joint action (tabular games only).
    pub penalty_all_actions: bool,
    /// Evaluate both regularizers at `z'` instead of `z`.
    pub regularize_next_obs: bool,
    pub unconstrained_omega: bool,
    /// Environment steps between metric rows and greedy evaluations.
    pub log_interval: u64,
    pub eval_episodes: usize,
}

impl TrainConfig {
    pub fn for_env(env: EnvKind, variant: Variant) -> Self {
        let spec = env.spec();
        let (anneal, total, uniform) = match env {
            EnvKind::Matrix3 => (2_000, 20_000, 0.1),
            EnvKind::Matrix21 => (2_000, 8_000, 0.1),
            EnvKind::MemoryPair => (50_000, 50_000, 0.0),
        };
        let mut cfg = Self {
            variant,
            gamma: spec.gamma,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: anneal,
            learning_rate: 5e-4,
            batch_episodes: 32,
            buffer_capacity: 5000,
            target_update_interval: 200,
            v1: 1.0,
            v2: 1.0,
            total_steps: total,
            seed: 0,
            history_window: spec.episode_limit,
            grad_clip: 10.0,
            uniform_joint_prob: uniform,
            share_params: true,
            literal_min_penalty: false,
            penalty_all_actions: false,
            regularize_next_obs: true,
            unconstrained_omega: false,
            log_interval: 100,
            eval_episodes: 1,
        };
        cfg.apply_variant();
        cfg
    }

    /// `qfree_ablation` trains with both coefficients at zero.
    pub fn apply_variant(&mut self) {
        if self.variant == Variant::QfreeAblation {
            self.v1 = 0.0;
            self.v2 = 0.0;
        }
    }

    pub fn validate(&self, env: EnvKind) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        let finite = [
            self.gamma,
            self.epsilon_start,
            self.epsilon_end,
            self.learning_rate,
            self.v1,
            self.v2,
            self.grad_clip,
            self.uniform_joint_prob,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("non-finite value");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0 <= self.epsilon_end
            && self.epsilon_end <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return bad("need 0 <= epsilon_end <= epsilon_start <= 1");
        }
        if self.v1 < 0.0 || self.v2 < 0.0 {
            return bad("v1 and v2 must be non-negative");
        }
        if self.variant == Variant::QfreeAblation && (self.v1 != 0.0 || self.v2 != 0.0) {
            return bad("qfree_ablation requires v1 = v2 = 0");
        }
        if self.learning_rate <= 0.0 || self.grad_clip <= 0.0 {
            return bad("learning_rate and grad_clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.uniform_joint_prob) {
            return bad("uniform_joint_prob must lie in [0, 1]");
        }
        if self.batch_episodes == 0 || self.buffer_capacity < self.batch_episodes {
            return bad("need 0 < batch_episodes <= buffer_capacity");
        }
        if self.target_update_interval == 0 || self.log_interval == 0 || self.eval_episodes == 0 {
            return bad("intervals and eval_episodes must be positive");
        }
        if self.history_window < env.spec().episode_limit {
            return bad("history_window shorter than the episode limit is not supported");
        }
        if self.penalty_all_actions
            && env
                .build(self.seed)
                .payoff(&vec![0; env.spec().n_agents])
                .is_none()
        {
            return bad("penalty_all_actions needs a tabular environment");
        }
        Ok(())
    }

    /// Linear schedule from `epsilon_start` to `epsilon_end`.
    pub fn epsilon_at(&self, env_step: u64) -> f64 {
        if env_step >= self.epsilon_anneal_steps {
            return self.epsilon_end;
        }
        let frac = env_step as f64 / self.epsilon_anneal_steps as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }

    pub fn model_config(&self, env: EnvKind) -> ModelConfig {
        let mut c = ModelConfig::for_env(&env.spec());
        c.share_params = self.share_params;
        c.unconstrained_omega = self.unconstrained_omega;
        c
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            v1: self.v1,
            v2: self.v2,
            literal_min_penalty: self.literal_min_penalty,
            penalty_all_actions: self.penalty_all_actions,
            regularize_next_obs: self.regularize_next_obs,
        }
    }
}

/// Greedy with probability `1 - epsilon`, otherwise uniform.
pub fn act_epsilon_greedy(q_row: &[f64], epsilon: f64, rng: &mut Rng) -> Result<usize> {
    let greedy = argmax(q_row).ok_or(Error::EmptyRow)?;
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..q_row.len()))
    } else {
        Ok(greedy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub v1: f64,
    pub v2: f64,
    pub literal_min_penalty: bool,
    pub penalty_all_actions: bool,
    pub regularize_next_obs: bool,
}

/// Scalar summaries of one loss evaluation, all masked means over valid steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub td_loss: f64,
    /// `|A_tot(·, a*)|` at the regularized observations.
    pub eq_residual: f64,
    /// Unscaled inequality penalty.
    pub ineq_penalty: f64,
    /// `|A_tot(z, a*(z))|` at the current observation.
    pub eq_residual_current: f64,
    /// `|A_tot(z', a*(z'))|` at the next observation.
    pub eq_residual_next: f64,
}

/// The loss graph, ready for `backward`.
pub struct LossGraph {
    pub graph: Graph,
    pub bound: Bound,
    pub loss: Var,
    pub terms: LossTerms,
}

/// `(step, episode)` pairs for every step of the batch, step-major.
fn step_rows(batch: &EpisodeBatch, offset: usize) -> Vec<(usize, usize)> {
    (0..batch.max_len)
        .flat_map(|t| (0..batch.episodes).map(move |b| (t + offset, b)))
        .collect()
}

fn greedy_at(agents: &AgentOutputs, g: &Graph, rows: &[(usize, usize)]) -> Vec<usize> {
    rows.iter()
        .flat_map(|&(t, b)| agents.greedy(g, t, b))
        .collect()
}

/// Double-DQN targets, one per `(step, episode)` in step-major order; for
/// `iql` one per `(step, episode, agent)`. Values are plain numbers, so no
/// gradient reaches them.
pub fn td_targets(
    online: &FactorizationModel,
    target: &ParamSet,
    batch: &EpisodeBatch,
    gamma: f64,
) -> Result<Vec<f64>> {
    let view = batch.obs_view();
    let mut g = Graph::new();
    let bound = online.params.bind_frozen(&mut g);
    let agents = online.unroll_agents(&mut g, &bound, &view)?;
    let next = step_rows(batch, 1);
    let a_star = greedy_at(&agents, &g, &next);
    targets_for(online, target, batch, &view, &next, &a_star, gamma)
}

fn targets_for(
    online: &FactorizationModel,
    target: &ParamSet,
    batch: &EpisodeBatch,
    view: &ObsView<'_>,
    next: &[(usize, usize)],
    a_star: &[usize],
    gamma: f64,
) -> Result<Vec<f64>> {
    if !online.params.same_structure(target) {
        return Err(Error::Structure(
            "target parameters differ from the online model".into(),
        ));
    }
    let n = online.config.n_agents;
    let mut g = Graph::new();
    let bound = target.bind_frozen(&mut g);
    let agents = online.unroll_agents(&mut g, &bound, view)?;
    let boot: Vec<f64> = if online.variant == Variant::Iql {
        next.iter()
            .enumerate()
            .flat_map(|(k, &(t, b))| {
                let agents = &agents;
                let g = &g;
                (0..n).map(move |i| agents.q_row(g, t, b, i)[a_star[k * n + i]])
            })
            .collect()
    } else {
        let jv = online.joint_values(&mut g, &bound, &agents, view, next, a_star)?;
        g.data(jv.q_tot).to_vec()
    };
    let per_row = if online.variant == Variant::Iql { n } else { 1 };
    Ok(next
        .iter()
        .enumerate()
        .flat_map(|(k, &(t, b))| {
            let s = batch.step_index(b, t - 1);
            let (r, done) = (batch.reward[s], batch.done[s]);
            let cont = if done { 0.0 } else { gamma };
            boot[k * per_row..(k + 1) * per_row]
                .iter()
                .map(move |q| r + cont * q)
        })
        .collect())
}

/// Builds the training loss for any variant.
///
/// For the dueling variants this is
/// `TD² + v1·A_tot(z', a*)² + v2·max(A_tot(z', a), 0)²`, where `a*` is the
/// per-agent greedy action and `a` the replayed one; with `regularize_next_obs`
/// off both terms are taken at the current observation `z` instead. Other variants get the plain TD loss
/// (`iql` per agent).
pub fn build_loss(
    model: &FactorizationModel,
    target: &ParamSet,
    batch: &EpisodeBatch,
    cfg: &LossConfig,
) -> Result<LossGraph> {
    if !(cfg.v1 >= 0.0 && cfg.v2 >= 0.0) {
        return Err(Error::Config("v1 and v2 must be non-negative".into()));
    }
    let n = model.config.n_agents;
    let view = batch.obs_view();
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g);
    let agents = model.unroll_agents(&mut g, &bound, &view)?;
    let cur = step_rows(batch, 0);
    let next = step_rows(batch, 1);
    let k = cur.len();
    let a_star = greedy_at(&agents, &g, &next);
    let y = targets_for(model, target, batch, &view, &next, &a_star, cfg.gamma)?;
    let actions: Vec<usize> = cur
        .iter()
        .flat_map(|&(t, b)| batch.joint_action(b, t).iter().copied())
        .collect();
    let mask: Vec<f64> = cur
        .iter()
        .map(|&(t, b)| batch.mask[batch.step_index(b, t)])
        .collect();
    let count = mask.iter().sum::<f64>();
    if count == 0.0 {
        return Err(Error::InsufficientData { have: 0, need: 1 });
    }
    let inv = 1.0 / count;
    let mask_var = g.constant(&[k, 1], mask.clone())?;

    let mut terms = LossTerms::default();
    let loss = if model.variant == Variant::Iql {
        let index: Vec<usize> = cur
            .iter()
            .flat_map(|&(t, b)| (0..n).map(move |i| (t, b, i)))
            .map(|(t, b, i)| agents.row(t, b, i))
            .collect();
        let q = g.gather_rows(agents.q, &index)?;
        let q = g.pick(q, &actions)?;
        let q = g.reshape(q, &[k, n])?;
        let yv = g.constant(&[k, n], y)?;
        let td = g.sub(q, yv)?;
        let td2 = g.square(td);
        let per_row = g.sum_axis(td2, 1)?;
        let masked = g.mul(per_row, mask_var)?;
        let total = g.sum(masked);
        let loss = g.scalar_mul(total, inv / n as f64);
        terms.td_loss = g.data(loss)[0];
        loss
    } else {
        let jv = model.joint_values(&mut g, &bound, &agents, &view, &cur, &actions)?;
        let yv = g.constant(&[k, 1], y)?;
        let td = g.sub(jv.q_tot, yv)?;
        let td2 = g.square(td);
        let td_masked = masked_values(g.data(td2), &mask);
        terms.td_loss = td_masked.iter().sum::<f64>() * inv;

        // Regularizers sit at z' by default; clearing `regularize_next_obs` moves them to z.
        let (reg_rows, reg_star) = if cfg.regularize_next_obs {
            (&next, a_star.clone())
        } else {
            (&cur, greedy_at(&agents, &g, &cur))
        };
        let star = model.joint_values(&mut g, &bound, &agents, &view, reg_rows, &reg_star)?;
        let eq2 = g.square(star.a_tot);
        terms.eq_residual = mean_abs(g.data(star.a_tot), &mask, inv);

        let pen2 = if cfg.penalty_all_actions {
            let joints = JointTable::from_fn(n, model.config.n_actions, |_| 0.0);
            let cells = joints.len();
            let rows: Vec<(usize, usize)> = reg_rows
                .iter()
                .flat_map(|&r| core::iter::repeat_n(r, cells))
                .collect();
            let acts: Vec<usize> = (0..k)
                .flat_map(|_| joints.joint_actions().flatten())
                .collect();
            let all = model.joint_values(&mut g, &bound, &agents, &view, &rows, &acts)?;
            let p = penalty(&mut g, all.a_tot, cfg.literal_min_penalty);
            let p = g.reshape(p, &[k, cells])?;
            g.sum_axis(p, 1)?
        } else {
            let rep = model.joint_values(&mut g, &bound, &agents, &view, reg_rows, &actions)?;
            penalty(&mut g, rep.a_tot, cfg.literal_min_penalty)
        };
        terms.ineq_penalty = masked_values(g.data(pen2), &mask).iter().sum::<f64>() * inv;

        let per_row = if model.variant.is_dueling_mixer() {
            let e = g.scalar_mul(eq2, cfg.v1);
            let p = g.scalar_mul(pen2, cfg.v2);
            let with_eq = g.add(td2, e)?;
            g.add(with_eq, p)?
        } else {
            td2
        };
        let masked = g.mul(per_row, mask_var)?;
        let total = g.sum(masked);
        g.scalar_mul(total, inv)
    };
    terms.loss = g.data(loss)[0];

    if model.variant != Variant::Iql {
        if cfg.regularize_next_obs {
            let a_now = greedy_at(&agents, &g, &cur);
            let now = model.joint_values(&mut g, &bound, &agents, &view, &cur, &a_now)?;
            terms.eq_residual_current = mean_abs(g.data(now.a_tot), &mask, inv);
            terms.eq_residual_next = terms.eq_residual;
        } else {
            let then = model.joint_values(&mut g, &bound, &agents, &view, &next, &a_star)?;
            terms.eq_residual_next = mean_abs(g.data(then.a_tot), &mask, inv);
            terms.eq_residual_current = terms.eq_residual;
        }
    }
    Ok(LossGraph {
        graph: g,
        bound,
        loss,
        terms,
    })
}

/// The loss restricted to the regularized variants.
pub fn qfree_loss(
    model: &FactorizationModel,
    target: &ParamSet,
    batch: &EpisodeBatch,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    if !model.variant.is_dueling_mixer() {
        return Err(Error::Config(alloc::format!(
            "{} has no advantage regularizers",
            model.variant
        )));
    }
    Ok(build_loss(model, target, batch, cfg)?.terms)
}

fn penalty(g: &mut Graph, a_tot: Var, literal_min: bool) -> Var {
    let side = if literal_min { g.neg(a_tot) } else { a_tot };
    let pos = g.relu(side);
    g.square(pos)
}

fn mean_abs(values: &[f64], mask: &[f64], inv: f64) -> f64 {
    values
        .iter()
        .zip(mask)
        .map(|(v, m)| v.abs() * m)
        .sum::<f64>()
        * inv
}

fn masked_values(values: &[f64], mask: &[f64]) -> Vec<f64> {
    values.iter().zip(mask).map(|(v, m)| v * m).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepMetrics {
    pub terms: LossTerms,
    pub grad_norm: f64,
}

/// Online model, target copy, optimizer and replay.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: FactorizationModel,
    pub target: ParamSet,
    pub buffer: ReplayBuffer,
    optimizer: Adam,
    loss_cfg: LossConfig,
    batch_episodes: usize,
    target_update_interval: u64,
    grad_clip: f64,
    train_steps: u64,
}

impl Learner {
    pub fn new(model: FactorizationModel, cfg: &TrainConfig) -> Self {
        let target = model.params.clone();
        Self {
            model,
            target,
            buffer: ReplayBuffer::new(cfg.buffer_capacity, cfg.seed),
            optimizer: Adam::new(AdamConfig {
                lr: cfg.learning_rate,
                ..AdamConfig::default()
            }),
            loss_cfg: cfg.loss_config(),
            batch_episodes: cfg.batch_episodes,
            target_update_interval: cfg.target_update_interval,
            grad_clip: cfg.grad_clip,
            train_steps: 0,
        }
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// One optimization step. `Ok(None)` while the buffer holds fewer than a batch.
    pub fn train_step(&mut self) -> Result<Option<StepMetrics>> {
        let batch = match self.buffer.sample(self.batch_episodes) {
            Ok(b) => b,
            Err(Error::InsufficientData { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut lg = build_loss(&self.model, &self.target, &batch, &self.loss_cfg)?;
        if !lg.terms.loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        lg.graph.backward(lg.loss)?;
        self.model.params.zero_grads();
        self.model.params.accumulate_grads(&lg.graph, &lg.bound)?;
        let grad_norm = self.model.params.clip_grad_norm(self.grad_clip);
        self.optimizer.step(&mut self.model.params)?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.target_update_interval) {
            hard_copy(&self.model.params, &mut self.target)?;
        }
        Ok(Some(StepMetrics {
            terms: lg.terms,
            grad_norm,
        }))
    }
}

/// One logged row; `NaN` losses mean no train step happened in the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub env_step: u64,
    pub episode: u64,
    pub train_step: u64,
    /// Greedy evaluation return.
    pub mean_return: f64,
    pub loss: f64,
    pub td_loss: f64,
    pub eq_residual: f64,
    pub ineq_penalty: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub eq_residual_current: f64,
    pub eq_residual_next: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub env: EnvKind,
    pub config: TrainConfig,
    pub rows: Vec<MetricsRow>,
    /// Training-episode returns (exploratory).
    pub episode_returns: Vec<f64>,
    pub model: FactorizationModel,
    /// Greedy joint action at the initial observation of a one-step game.
    pub final_greedy: Option<Vec<usize>>,
    pub tabular: Option<TabularView>,
    pub optimal_return: f64,
    pub optimal_action: Option<Vec<usize>>,
}

/// Evaluations averaged for the final-window return.
pub const FINAL_WINDOW: usize = 10;
/// Allowed gap between the final-window return and the optimum in tabular games.
pub const SUCCESS_RETURN_TOL: f64 = 0.05;
/// Fraction of the optimal return a non-tabular run must reach.
pub const SUCCESS_RETURN_FRACTION: f64 = 0.9;

/// Tabular games: greedy action is the optimum and the final-window return is
/// within [`SUCCESS_RETURN_TOL`] of the optimal return. Otherwise the
/// final-window return must reach [`SUCCESS_RETURN_FRACTION`] of the optimum.
pub fn run_success(
    optimal_action: Option<&[usize]>,
    greedy: Option<&[usize]>,
    final_return: f64,
    optimal_return: f64,
) -> bool {
    match (optimal_action, greedy) {
        (Some(opt), Some(greedy)) => {
            greedy == opt && (final_return - optimal_return).abs() <= SUCCESS_RETURN_TOL
        }
        _ => final_return >= SUCCESS_RETURN_FRACTION * optimal_return,
    }
}

impl RunReport {
    pub fn final_window_return(&self) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(FINAL_WINDOW)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().map(|r| r.mean_return).sum::<f64>() / tail.len() as f64
    }

    pub fn success(&self) -> bool {
        run_success(
            self.optimal_action.as_deref(),
            self.final_greedy.as_deref(),
            self.final_window_return(),
            self.optimal_return,
        )
    }

    pub fn qtot(&self) -> Option<&JointTable> {
        self.tabular.as_ref().map(|t| &t.q_tot)
    }
}

/// Runs one greedy episode with decentralized agents.
pub fn greedy_episode(model: &FactorizationModel, env: &mut dyn DecPomdp) -> Result<f64> {
    let c = &model.config;
    let mut obs = env.reset();
    let mut hidden = vec![vec![0.0; c.rnn_hidden]; c.n_agents];
    let mut total = 0.0;
    loop {
        let q = model.act_values(&obs, &mut hidden)?;
        let actions: Vec<usize> = q
            .iter()
            .map(|row| argmax(row).ok_or(Error::EmptyRow))
            .collect::<Result<_>>()?;
        let out = env.step(&actions)?;
        total += out.reward;
        if out.done {
            return Ok(total);
        }
        obs = out.obs;
    }
}

pub fn evaluate(
    model: &FactorizationModel,
    env: &mut dyn DecPomdp,
    episodes: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    for _ in 0..episodes {
        sum += greedy_episode(model, env)?;
    }
    Ok(sum / episodes.max(1) as f64)
}

/// Keeps evaluation episodes independent of the training environment's draws.
const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Trains one model from scratch; fully determined by `(env, cfg)`.
pub fn run_training(env_kind: EnvKind, cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate(env_kind)?;
    let model = FactorizationModel::new(cfg.variant, cfg.model_config(env_kind), cfg.seed);
    let mut learner = Learner::new(model, cfg);
    let mut env = env_kind.build(cfg.seed);
    let mut eval_env = env_kind.build(cfg.seed.wrapping_add(EVAL_SEED_OFFSET));
    let mut explore = stream(cfg.seed, Stream::Explore);
    let spec = env.spec();
    let (n, n_actions, d) = (spec.n_agents, spec.n_actions, spec.obs_dim);

    let mut rows = Vec::new();
    let mut episode_returns = Vec::new();
    let mut env_step = 0u64;
    let mut episodes = 0u64;
    let mut acc = (LossTerms::default(), 0usize);

    let mut obs = env.reset();
    let mut hidden = vec![vec![0.0; learner.model.config.rnn_hidden]; n];
    let mut episode = Episode::new(n, d, &obs);
    while env_step < cfg.total_steps {
        let eps = cfg.epsilon_at(env_step);
        let q = learner.model.act_values(&obs, &mut hidden)?;
        let actions: Vec<usize> =
            if cfg.uniform_joint_prob > 0.0 && explore.gen::<f64>() < cfg.uniform_joint_prob {
                (0..n).map(|_| explore.gen_range(0..n_actions)).collect()
            } else {
                q.iter()
                    .map(|row| act_epsilon_greedy(row, eps, &mut explore))
                    .collect::<Result<_>>()?
            };
        let out = env.step(&actions)?;
        episode.push(&actions, out.reward, out.done, &out.obs);
        env_step += 1;
        if out.done {
            episode_returns.push(episode.total_return());
            episodes += 1;
            learner
                .buffer
                .push(core::mem::replace(&mut episode, Episode::new(n, d, &[])));
            obs = env.reset();
            hidden.iter_mut().for_each(|h| h.fill(0.0));
            episode = Episode::new(n, d, &obs);
        } else {
            obs = out.obs;
        }

        if let Some(m) = learner.train_step()? {
            let t = &mut acc.0;
            t.loss += m.terms.loss;
            t.td_loss += m.terms.td_loss;
            t.eq_residual += m.terms.eq_residual;
            t.ineq_penalty += m.terms.ineq_penalty;
            t.eq_residual_current += m.terms.eq_residual_current;
            t.eq_residual_next += m.terms.eq_residual_next;
            acc.1 += 1;
        }

        if env_step.is_multiple_of(cfg.log_interval) || env_step == cfg.total_steps {
            let mean_return = evaluate(&learner.model, eval_env.as_mut(), cfg.eval_episodes)?;
            let avg = |x: f64| {
                if acc.1 == 0 {
                    f64::NAN
                } else {
                    x / acc.1 as f64
                }
            };
            rows.push(MetricsRow {
                env_step,
                episode: episodes,
                train_step: learner.train_steps(),
                mean_return,
                loss: avg(acc.0.loss),
                td_loss: avg(acc.0.td_loss),
                eq_residual: avg(acc.0.eq_residual),
                ineq_penalty: avg(acc.0.ineq_penalty),
                epsilon: eps,
                seed: cfg.seed,
                eq_residual_current: avg(acc.0.eq_residual_current),
                eq_residual_next: avg(acc.0.eq_residual_next),
            });
            acc = (LossTerms::default(), 0);
        }
    }

    let model = learner.model;
    let (final_greedy, tabular) = if env.is_tabular() {
        let first = env.reset();
        let histories: Vec<Vec<Vec<f64>>> = first.into_iter().map(|o| vec![o]).collect();
        (
            Some(model.greedy_joint_action(&histories)?),
            Some(model.tabular_view(env.as_mut())?),
        )
    } else {
        (None, None)
    };
    Ok(RunReport {
        env: env_kind,
        config: *cfg,
        rows,
        episode_returns,
        optimal_return: env.optimal_return(),
        optimal_action: env.optimal_joint_action(),
        model,
        final_greedy,
        tabular,
    })
}
