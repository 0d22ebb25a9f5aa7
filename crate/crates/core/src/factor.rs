//! Factorized joint action-value models.
//!
//! Every variant shares the same per-agent network: a dense layer, a gated
//! recurrent cell and two heads producing a state value `V_i` and an advantage
//! row `A_i`. The advantage row is shifted so that its maximum is exactly zero,
//! which makes `V_i = max_a Q_i` with `Q_i = V_i + A_i`.
//!
//! The variants differ in how the per-agent values become the joint value:
//!
//! | variant          | joint value                                                       |
//! |------------------|-------------------------------------------------------------------|
//! | `qfree`          | `V_tot = f_v(ω∘V + b)`, `A_tot = f_a(ω∘A)`, free two-layer mixers |
//! | `qfree_ablation` | same network as `qfree`, trained without the advantage penalties  |
//! | `qfree_sum`      | `V_tot = Σ(ω∘V + b)`, `A_tot = Σ ω∘A`                             |
//! | `vdn`            | `Q_tot = Σ Q_i`                                                   |
//! | `qmix`           | monotone hypernetwork mixer over the chosen `Q_i`                 |
//! | `iql`            | none; each agent regresses the team reward on its own `Q_i`       |
//!
//! `ω(z)` and `b(z)` come from a transformation network fed with the joint
//! observation; `ω` is kept positive (`|·| + 1e-8`) unless the model is built
//! with `unconstrained_omega`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::env::{DecPomdp, EnvSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::igm::JointTable;
use crate::nn::{dense_forward, gru_step, Activation, Bound, ParamSet};
use crate::rng::{stream, Stream};
use crate::tensor::argmax;

/// Lower bound added to `|ω|`.
pub const OMEGA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Qfree,
    QfreeSum,
    QfreeAblation,
    Vdn,
    Qmix,
    Iql,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Qfree,
        Variant::QfreeSum,
        Variant::QfreeAblation,
        Variant::Vdn,
        Variant::Qmix,
        Variant::Iql,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Qfree => "qfree",
            Variant::QfreeSum => "qfree_sum",
            Variant::QfreeAblation => "qfree_ablation",
            Variant::Vdn => "vdn",
            Variant::Qmix => "qmix",
            Variant::Iql => "iql",
        }
    }

    /// Variants built on the transformation network and the V/A split.
    pub fn is_dueling_mixer(self) -> bool {
        matches!(
            self,
            Variant::Qfree | Variant::QfreeSum | Variant::QfreeAblation
        )
    }

    /// Variants whose loss carries the advantage-condition penalties.
    pub fn is_regularized(self) -> bool {
        matches!(self, Variant::Qfree | Variant::QfreeSum)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub agent_hidden: usize,
    pub rnn_hidden: usize,
    pub mixer_hidden: usize,
    pub transform_hidden: usize,
    pub hyper_embed: usize,
    /// One agent network for everyone, with a one-hot agent id appended to the input.
    pub share_params: bool,
    pub unconstrained_omega: bool,
}

impl ModelConfig {
    pub fn for_env(spec: &EnvSpec) -> Self {
        Self {
            n_agents: spec.n_agents,
            n_actions: spec.n_actions,
            obs_dim: spec.obs_dim,
            agent_hidden: 64,
            rnn_hidden: 64,
            mixer_hidden: 32,
            transform_hidden: 32,
            hyper_embed: 32,
            share_params: true,
            unconstrained_omega: false,
        }
    }

    pub fn agent_input_dim(&self) -> usize {
        self.obs_dim + if self.share_params { self.n_agents } else { 0 }
    }

    pub fn state_dim(&self) -> usize {
        self.n_agents * self.obs_dim
    }

    pub fn agent_prefix(&self, agent: usize) -> String {
        if self.share_params {
            String::from("agent.shared")
        } else {
            format!("agent.{agent}")
        }
    }

    /// Agents grouped by the network they run on.
    fn agent_groups(&self) -> Vec<(String, Vec<usize>)> {
        if self.share_params {
            vec![(self.agent_prefix(0), (0..self.n_agents).collect())]
        } else {
            (0..self.n_agents)
                .map(|i| (self.agent_prefix(i), vec![i]))
                .collect()
        }
    }
}

/// Parameters plus the wiring that interprets them.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationModel {
    pub variant: Variant,
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// Observations laid out as `[episode][step][agent][obs_dim]`.
#[derive(Debug, Clone, Copy)]
pub struct ObsView<'a> {
    pub episodes: usize,
    pub steps: usize,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub data: &'a [f64],
}

impl<'a> ObsView<'a> {
    pub fn new(
        episodes: usize,
        steps: usize,
        n_agents: usize,
        obs_dim: usize,
        data: &'a [f64],
    ) -> Result<Self> {
        if data.len() != episodes * steps * n_agents * obs_dim {
            return Err(Error::Shape {
                op: "observations",
                lhs: vec![episodes, steps, n_agents, obs_dim],
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            episodes,
            steps,
            n_agents,
            obs_dim,
            data,
        })
    }

    pub fn agent_obs(&self, episode: usize, step: usize, agent: usize) -> &'a [f64] {
        let start = ((episode * self.steps + step) * self.n_agents + agent) * self.obs_dim;
        &self.data[start..start + self.obs_dim]
    }

    /// All agents' observations concatenated.
    pub fn joint_obs(&self, episode: usize, step: usize) -> &'a [f64] {
        let width = self.n_agents * self.obs_dim;
        let start = (episode * self.steps + step) * width;
        &self.data[start..start + width]
    }
}

/// Per-agent outputs for every (step, episode, agent), rows in that order.
#[derive(Debug, Clone)]
pub struct AgentOutputs {
    pub episodes: usize,
    pub steps: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    /// `[rows × 1]` state values.
    pub v: Var,
    /// `[rows × |A|]` advantages, maximum zero in every row.
    pub a: Var,
    /// `[rows × |A|]`, `v + a`.
    pub q: Var,
}

impl AgentOutputs {
    pub fn row(&self, step: usize, episode: usize, agent: usize) -> usize {
        (step * self.episodes + episode) * self.n_agents + agent
    }

    pub fn q_row<'g>(&self, g: &'g Graph, step: usize, episode: usize, agent: usize) -> &'g [f64] {
        let r = self.row(step, episode, agent);
        &g.data(self.q)[r * self.n_actions..(r + 1) * self.n_actions]
    }

    /// Per-agent argmax of `Q_i` at `(step, episode)`, lowest index on ties.
    pub fn greedy(&self, g: &Graph, step: usize, episode: usize) -> Vec<usize> {
        (0..self.n_agents)
            .map(|i| argmax(self.q_row(g, step, episode, i)).expect("non-empty row"))
            .collect()
    }
}

/// Joint values for a list of (step, episode) rows, each `[k × 1]`.
#[derive(Debug, Clone, Copy)]
pub struct JointValues {
    pub v_tot: Var,
    pub a_tot: Var,
    pub q_tot: Var,
}

/// One decentralized agent update.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub v: f64,
    pub a: Vec<f64>,
    pub h: Vec<f64>,
}

impl AgentStep {
    pub fn q(&self) -> Vec<f64> {
        self.a.iter().map(|a| self.v + a).collect()
    }
}

/// Everything a tabular (one-step) game lets us enumerate about a model.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularView {
    pub q_tot: JointTable,
    pub a_tot: JointTable,
    pub v_tot: f64,
    pub agent_q: Vec<Vec<f64>>,
    pub agent_a: Vec<Vec<f64>>,
}

impl FactorizationModel {
    /// Builds a model with parameters drawn deterministically from `seed`.
    pub fn new(variant: Variant, config: ModelConfig, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Init);
        let mut params = ParamSet::new();
        let c = config;
        for (prefix, _) in c.agent_groups() {
            params.init_dense(
                &format!("{prefix}.fc"),
                c.agent_input_dim(),
                c.agent_hidden,
                &mut rng,
            );
            params.init_gru(
                &format!("{prefix}.rnn"),
                c.agent_hidden,
                c.rnn_hidden,
                &mut rng,
            );
            params.init_dense(&format!("{prefix}.value"), c.rnn_hidden, 1, &mut rng);
            params.init_dense(
                &format!("{prefix}.advantage"),
                c.rnn_hidden,
                c.n_actions,
                &mut rng,
            );
        }
        if variant.is_dueling_mixer() {
            params.init_dense(
                "transform.hidden",
                c.state_dim(),
                c.transform_hidden,
                &mut rng,
            );
            params.init_dense(
                "transform.out",
                c.transform_hidden,
                2 * c.n_agents,
                &mut rng,
            );
        }
        if matches!(variant, Variant::Qfree | Variant::QfreeAblation) {
            for head in ["mixer.v", "mixer.a"] {
                params.init_dense(
                    &format!("{head}.hidden"),
                    c.n_agents,
                    c.mixer_hidden,
                    &mut rng,
                );
                params.init_dense(&format!("{head}.out"), c.mixer_hidden, 1, &mut rng);
            }
        }
        if variant == Variant::Qmix {
            let e = c.hyper_embed;
            params.init_dense("qmix.hyper_w1", c.state_dim(), c.n_agents * e, &mut rng);
            params.init_dense("qmix.hyper_b1", c.state_dim(), e, &mut rng);
            params.init_dense("qmix.hyper_w2", c.state_dim(), e, &mut rng);
            params.init_dense("qmix.hyper_v.hidden", c.state_dim(), e, &mut rng);
            params.init_dense("qmix.hyper_v.out", e, 1, &mut rng);
        }
        Self {
            variant,
            config,
            params,
        }
    }

    /// The same network with every parameter set to zero.
    pub fn zeroed(variant: Variant, config: ModelConfig) -> Self {
        let mut m = Self::new(variant, config, 0);
        m.params.fill_zero();
        m
    }

    /// Runs the agent networks over whole histories.
    ///
    /// Rows with identical (agent, observation history) share one unroll; the
    /// results are gathered back, which leaves values and gradients unchanged.
    pub fn unroll_agents(
        &self,
        g: &mut Graph,
        params: &Bound,
        obs: &ObsView<'_>,
    ) -> Result<AgentOutputs> {
        let c = &self.config;
        if obs.n_agents != c.n_agents || obs.obs_dim != c.obs_dim {
            return Err(Error::Shape {
                op: "unroll_agents",
                lhs: vec![c.n_agents, c.obs_dim],
                rhs: vec![obs.n_agents, obs.obs_dim],
            });
        }
        let (episodes, steps, n) = (obs.episodes, obs.steps, c.n_agents);
        // Position of (episode, agent) inside the concatenated per-group blocks.
        let mut slot_of = vec![(0usize, 0usize); episodes * n];
        let mut v_blocks = Vec::new();
        let mut a_blocks = Vec::new();
        let mut block_start = Vec::new();
        let mut block_rows = Vec::new();
        let mut offset = 0;
        for (gi, (prefix, agents)) in c.agent_groups().into_iter().enumerate() {
            let mut unique: BTreeMap<(usize, Vec<u64>), usize> = BTreeMap::new();
            let mut reps: Vec<(usize, usize)> = Vec::new();
            for b in 0..episodes {
                for &i in &agents {
                    let key: Vec<u64> = (0..steps)
                        .flat_map(|t| obs.agent_obs(b, t, i).iter().map(|v| v.to_bits()))
                        .collect();
                    let next = reps.len();
                    let u = *unique.entry((i, key)).or_insert(next);
                    if u == next {
                        reps.push((b, i));
                    }
                    slot_of[b * n + i] = (gi, u);
                }
            }
            let rows = reps.len();
            let mut h = g.constant(&[rows, c.rnn_hidden], vec![0.0; rows * c.rnn_hidden])?;
            let mut vs = Vec::with_capacity(steps);
            let mut advs = Vec::with_capacity(steps);
            for t in 0..steps {
                let width = c.agent_input_dim();
                let mut input = Vec::with_capacity(rows * width);
                for &(b, i) in &reps {
                    input.extend_from_slice(obs.agent_obs(b, t, i));
                    if c.share_params {
                        input.extend((0..n).map(|k| if k == i { 1.0 } else { 0.0 }));
                    }
                }
                let x = g.constant(&[rows, width], input)?;
                let (v, a, h_next) = agent_cell(g, params, &prefix, x, h)?;
                h = h_next;
                vs.push(v);
                advs.push(a);
            }
            v_blocks.push(g.concat_rows(&vs)?);
            a_blocks.push(g.concat_rows(&advs)?);
            block_start.push(offset);
            block_rows.push(rows);
            offset += rows * steps;
        }
        let v_all = g.concat_rows(&v_blocks)?;
        let a_all = g.concat_rows(&a_blocks)?;
        let mut index = Vec::with_capacity(steps * episodes * n);
        for t in 0..steps {
            for slot in slot_of.iter().take(episodes * n) {
                let (gi, u) = *slot;
                index.push(block_start[gi] + t * block_rows[gi] + u);
            }
        }
        let v = g.gather_rows(v_all, &index)?;
        let a = g.gather_rows(a_all, &index)?;
        let q = g.add(a, v)?;
        Ok(AgentOutputs {
            episodes,
            steps,
            n_agents: n,
            n_actions: c.n_actions,
            v,
            a,
            q,
        })
    }

    /// `(ω, b)` for each row of `state`, both `[k × n]`.
    pub fn omega_bias(&self, g: &mut Graph, params: &Bound, state: Var) -> Result<(Var, Var)> {
        let n = self.config.n_agents;
        let h = dense_forward(g, params, "transform.hidden", state, Activation::Elu)?;
        let out = dense_forward(g, params, "transform.out", h, Activation::Identity)?;
        let raw_w = g.slice_cols(out, 0, n)?;
        let bias = g.slice_cols(out, n, n)?;
        let omega = if self.config.unconstrained_omega {
            raw_w
        } else {
            let w = g.abs(raw_w);
            g.add_scalar(w, OMEGA_FLOOR)
        };
        Ok((omega, bias))
    }

    /// `V_i(z) = ω V_i + b`, `A_i(z) = ω A_i`, all `[k × n]`.
    pub fn transform(
        &self,
        g: &mut Graph,
        params: &Bound,
        v: Var,
        a: Var,
        state: Var,
    ) -> Result<(Var, Var)> {
        let (omega, bias) = self.omega_bias(g, params, state)?;
        let wv = g.mul(omega, v)?;
        let v_out = g.add(wv, bias)?;
        let a_out = g.mul(omega, a)?;
        Ok((v_out, a_out))
    }

    /// Combines per-agent values (`[k × n]` each) into joint values (`[k × 1]`).
    ///
    /// For the dueling variants `v` and `a` are the transformed values; for
    /// the others they are the raw `V_i` and chosen `A_i`. `state` conditions
    /// the monotone mixer.
    pub fn mix(
        &self,
        g: &mut Graph,
        params: &Bound,
        v: Var,
        a: Var,
        state: Var,
    ) -> Result<JointValues> {
        let (v_tot, a_tot) = match self.variant {
            Variant::Qfree | Variant::QfreeAblation => {
                let vh = dense_forward(g, params, "mixer.v.hidden", v, Activation::Elu)?;
                let v_tot = dense_forward(g, params, "mixer.v.out", vh, Activation::Identity)?;
                let ah = dense_forward(g, params, "mixer.a.hidden", a, Activation::Elu)?;
                let a_tot = dense_forward(g, params, "mixer.a.out", ah, Activation::Identity)?;
                (v_tot, a_tot)
            }
            Variant::QfreeSum | Variant::Vdn | Variant::Iql => {
                (g.sum_axis(v, 1)?, g.sum_axis(a, 1)?)
            }
            Variant::Qmix => {
                let q = g.add(v, a)?;
                let q_tot = self.qmix(g, params, q, state)?;
                let v_tot = g.sum_axis(v, 1)?;
                let a_tot = g.sub(q_tot, v_tot)?;
                (v_tot, a_tot)
            }
        };
        let q_tot = assemble_qtot(g, v_tot, a_tot)?;
        Ok(JointValues {
            v_tot,
            a_tot,
            q_tot,
        })
    }

    fn qmix(&self, g: &mut Graph, params: &Bound, q: Var, state: Var) -> Result<Var> {
        let (n, e) = (self.config.n_agents, self.config.hyper_embed);
        let w1 = dense_forward(g, params, "qmix.hyper_w1", state, Activation::Identity)?;
        let w1 = g.abs(w1);
        let b1 = dense_forward(g, params, "qmix.hyper_b1", state, Activation::Identity)?;
        let mut hidden = b1;
        for i in 0..n {
            let qi = g.slice_cols(q, i, 1)?;
            let wi = g.slice_cols(w1, i * e, e)?;
            let term = g.mul(wi, qi)?;
            hidden = g.add(hidden, term)?;
        }
        let hidden = g.elu(hidden);
        let w2 = dense_forward(g, params, "qmix.hyper_w2", state, Activation::Identity)?;
        let w2 = g.abs(w2);
        let weighted = g.mul(hidden, w2)?;
        let y = g.sum_axis(weighted, 1)?;
        let vh = dense_forward(g, params, "qmix.hyper_v.hidden", state, Activation::Relu)?;
        let v = dense_forward(g, params, "qmix.hyper_v.out", vh, Activation::Identity)?;
        g.add(y, v)
    }

    /// Joint values at the given `(step, episode)` rows under the joint actions
    /// `actions` (`rows.len() × n`, row-major).
    pub fn joint_values(
        &self,
        g: &mut Graph,
        params: &Bound,
        agents: &AgentOutputs,
        obs: &ObsView<'_>,
        rows: &[(usize, usize)],
        actions: &[usize],
    ) -> Result<JointValues> {
        let n = self.config.n_agents;
        if actions.len() != rows.len() * n {
            return Err(Error::AgentCount {
                expected: rows.len() * n,
                got: actions.len(),
            });
        }
        let k = rows.len();
        let mut index = Vec::with_capacity(k * n);
        let mut state = Vec::with_capacity(k * self.config.state_dim());
        for &(t, b) in rows {
            for i in 0..n {
                index.push(agents.row(t, b, i));
            }
            state.extend_from_slice(obs.joint_obs(b, t));
        }
        let v = g.gather_rows(agents.v, &index)?;
        let v = g.reshape(v, &[k, n])?;
        let a = g.gather_rows(agents.a, &index)?;
        let a = g.pick(a, actions)?;
        let a = g.reshape(a, &[k, n])?;
        let state = g.constant(&[k, self.config.state_dim()], state)?;
        if self.variant.is_dueling_mixer() {
            let (v, a) = self.transform(g, params, v, a, state)?;
            self.mix(g, params, v, a, state)
        } else {
            self.mix(g, params, v, a, state)
        }
    }

    /// One decentralized step of agent `agent`: observation plus previous hidden state in,
    /// `(V_i, A_i, h')` out. `A_i` is normalized.
    pub fn agent_forward(&self, agent: usize, obs: &[f64], h: &[f64]) -> Result<AgentStep> {
        let c = &self.config;
        if obs.len() != c.obs_dim || h.len() != c.rnn_hidden || agent >= c.n_agents {
            return Err(Error::Shape {
                op: "agent_forward",
                lhs: vec![c.obs_dim, c.rnn_hidden],
                rhs: vec![obs.len(), h.len()],
            });
        }
        let prefix = c.agent_prefix(agent);
        let mut g = Graph::new();
        let bound = self.bind_agent_frozen(&mut g, &prefix);
        let mut input = obs.to_vec();
        if c.share_params {
            input.extend((0..c.n_agents).map(|k| if k == agent { 1.0 } else { 0.0 }));
        }
        let x = g.constant(&[1, input.len()], input)?;
        let h0 = g.constant(&[1, c.rnn_hidden], h.to_vec())?;
        let (v, a, h1) = agent_cell(&mut g, &bound, &prefix, x, h0)?;
        Ok(AgentStep {
            v: g.data(v)[0],
            a: g.data(a).to_vec(),
            h: g.data(h1).to_vec(),
        })
    }

    /// One decentralized step for all agents at once. `hidden[i]` is agent
    /// `i`'s recurrent state and is updated in place; returns each agent's `Q_i` row.
    pub fn act_values(&self, obs: &[Vec<f64>], hidden: &mut [Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let c = &self.config;
        if obs.len() != c.n_agents || hidden.len() != c.n_agents {
            return Err(Error::AgentCount {
                expected: c.n_agents,
                got: obs.len().min(hidden.len()),
            });
        }
        let mut q = vec![Vec::new(); c.n_agents];
        let mut g = Graph::new();
        for (prefix, agents) in c.agent_groups() {
            let bound = self.bind_agent_frozen(&mut g, &prefix);
            let width = c.agent_input_dim();
            let mut input = Vec::with_capacity(agents.len() * width);
            let mut h = Vec::with_capacity(agents.len() * c.rnn_hidden);
            for &i in &agents {
                if obs[i].len() != c.obs_dim || hidden[i].len() != c.rnn_hidden {
                    return Err(Error::Shape {
                        op: "act_values",
                        lhs: vec![c.obs_dim, c.rnn_hidden],
                        rhs: vec![obs[i].len(), hidden[i].len()],
                    });
                }
                input.extend_from_slice(&obs[i]);
                if c.share_params {
                    input.extend((0..c.n_agents).map(|k| if k == i { 1.0 } else { 0.0 }));
                }
                h.extend_from_slice(&hidden[i]);
            }
            let x = g.constant(&[agents.len(), width], input)?;
            let h0 = g.constant(&[agents.len(), c.rnn_hidden], h)?;
            let (v, a, h1) = agent_cell(&mut g, &bound, &prefix, x, h0)?;
            for (row, &i) in agents.iter().enumerate() {
                let vi = g.data(v)[row];
                let ai = &g.data(a)[row * c.n_actions..(row + 1) * c.n_actions];
                q[i] = ai.iter().map(|a| vi + a).collect();
                hidden[i]
                    .copy_from_slice(&g.data(h1)[row * c.rnn_hidden..(row + 1) * c.rnn_hidden]);
            }
        }
        Ok(q)
    }

    fn bind_agent_frozen(&self, g: &mut Graph, prefix: &str) -> Bound {
        let mut subset = ParamSet::new();
        for (path, t) in self.params.iter() {
            if path.starts_with(prefix) {
                subset.insert(path, t.clone());
            }
        }
        subset.bind_frozen(g)
    }

    /// Greedy joint action after each agent has seen its own observation history.
    /// Decentralized: agent `i` only uses `histories[i]`.
    pub fn greedy_joint_action(&self, histories: &[Vec<Vec<f64>>]) -> Result<Vec<usize>> {
        if histories.len() != self.config.n_agents {
            return Err(Error::AgentCount {
                expected: self.config.n_agents,
                got: histories.len(),
            });
        }
        histories
            .iter()
            .enumerate()
            .map(|(i, history)| {
                let mut h = vec![0.0; self.config.rnn_hidden];
                let mut q = Vec::new();
                for obs in history {
                    let step = self.agent_forward(i, obs, &h)?;
                    q = step.q();
                    h = step.h;
                }
                argmax(&q).ok_or(Error::EmptyRow)
            })
            .collect()
    }

    /// Joint and per-agent values for every joint action of a one-step game,
    /// evaluated at the initial observation.
    pub fn tabular_view(&self, env: &mut dyn DecPomdp) -> Result<TabularView> {
        if !env.is_tabular() {
            return Err(Error::NotTabular(env.kind().name().into()));
        }
        let c = &self.config;
        let obs0 = env.reset();
        let flat: Vec<f64> = obs0.iter().flatten().copied().collect();
        let view = ObsView::new(1, 1, c.n_agents, c.obs_dim, &flat)?;
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let agents = self.unroll_agents(&mut g, &bound, &view)?;
        let shape = JointTable::from_fn(c.n_agents, c.n_actions, |_| 0.0);
        let joints: Vec<Vec<usize>> = shape.joint_actions().collect();
        let rows = vec![(0, 0); joints.len()];
        let actions: Vec<usize> = joints.iter().flatten().copied().collect();
        let jv = self.joint_values(&mut g, &bound, &agents, &view, &rows, &actions)?;
        let agent_q = (0..c.n_agents)
            .map(|i| agents.q_row(&g, 0, 0, i).to_vec())
            .collect();
        let agent_a = (0..c.n_agents)
            .map(|i| {
                let r = agents.row(0, 0, i);
                g.data(agents.a)[r * c.n_actions..(r + 1) * c.n_actions].to_vec()
            })
            .collect();
        Ok(TabularView {
            q_tot: JointTable::new(c.n_agents, c.n_actions, g.data(jv.q_tot).to_vec())?,
            a_tot: JointTable::new(c.n_agents, c.n_actions, g.data(jv.a_tot).to_vec())?,
            v_tot: g.data(jv.v_tot)[0],
            agent_q,
            agent_a,
        })
    }

    /// `Q_tot` for every joint action at the initial observation of a one-step game.
    pub fn qtot_table(&self, env: &mut dyn DecPomdp) -> Result<JointTable> {
        Ok(self.tabular_view(env)?.q_tot)
    }
}

/// `Q_tot = V_tot + A_tot`.
pub fn assemble_qtot(g: &mut Graph, v_tot: Var, a_tot: Var) -> Result<Var> {
    g.add(v_tot, a_tot)
}

/// Dense → GRU → (value head, normalized advantage head).
fn agent_cell(
    g: &mut Graph,
    params: &Bound,
    prefix: &str,
    x: Var,
    h: Var,
) -> Result<(Var, Var, Var)> {
    let hidden = dense_forward(g, params, &format!("{prefix}.fc"), x, Activation::Relu)?;
    let h_next = gru_step(g, params, &format!("{prefix}.rnn"), hidden, h)?;
    let v = dense_forward(
        g,
        params,
        &format!("{prefix}.value"),
        h_next,
        Activation::Identity,
    )?;
    let raw = dense_forward(
        g,
        params,
        &format!("{prefix}.advantage"),
        h_next,
        Activation::Identity,
    )?;
    let top = g.max_axis(raw, 1)?;
    let a = g.sub(raw, top)?;
    Ok((v, a, h_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;

    fn matrix3_config() -> ModelConfig {
        ModelConfig::for_env(&EnvKind::Matrix3.spec())
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>(), Ok(v));
        }
        assert!("qplex".parse::<Variant>().is_err());
    }

    #[test]
    fn advantage_max_is_zero_and_v_is_max_q() {
        let model = FactorizationModel::new(Variant::Qfree, matrix3_config(), 11);
        let mut h = vec![0.0; 64];
        for step in 0..3 {
            let out = model.agent_forward(step % 2, &[1.0], &h).unwrap();
            let max_a = out.a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(max_a, 0.0);
            let max_q = out.q().into_iter().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(max_q, out.v);
            h = out.h;
        }
    }

    #[test]
    fn zero_model_has_zero_advantages_and_table() {
        let model = FactorizationModel::zeroed(Variant::QfreeSum, matrix3_config());
        let out = model.agent_forward(0, &[1.0], &[0.0; 64]).unwrap();
        assert_eq!(out.a, vec![0.0; 3]);
        let table = model.qtot_table(&mut *EnvKind::Matrix3.build(0)).unwrap();
        assert_eq!(table.len(), 9);
        assert!(table.values().iter().all(|&v| v == 0.0));
        assert_eq!(
            model
                .greedy_joint_action(&[vec![vec![1.0]], vec![vec![1.0]]])
                .unwrap(),
            vec![0, 0]
        );
    }

    #[test]
    fn table_sizes() {
        let cfg = ModelConfig::for_env(&EnvKind::Matrix21.spec());
        let model = FactorizationModel::new(Variant::Qfree, cfg, 1);
        let table = model.qtot_table(&mut *EnvKind::Matrix21.build(0)).unwrap();
        assert_eq!(table.len(), 441);
        let mp = ModelConfig::for_env(&EnvKind::MemoryPair.spec());
        let model = FactorizationModel::new(Variant::Qfree, mp, 1);
        assert!(matches!(
            model.qtot_table(&mut *EnvKind::MemoryPair.build(0)),
            Err(Error::NotTabular(_))
        ));
    }

    fn constant(g: &mut Graph, rows: usize, data: &[f64]) -> Var {
        g.constant(&[rows, data.len() / rows], data.to_vec())
            .unwrap()
    }

    #[test]
    fn sum_mixer_adds() {
        let model = FactorizationModel::new(Variant::QfreeSum, matrix3_config(), 0);
        let mut g = Graph::new();
        let bound = model.params.bind_frozen(&mut g);
        let v = constant(&mut g, 1, &[1.0, 2.0]);
        let a = constant(&mut g, 1, &[-1.0, 0.0]);
        let s = constant(&mut g, 1, &[1.0, 1.0]);
        let out = model.mix(&mut g, &bound, v, a, s).unwrap();
        assert_eq!(g.data(out.v_tot), &[3.0]);
        assert_eq!(g.data(out.a_tot), &[-1.0]);
        assert_eq!(g.data(out.q_tot), &[2.0]);
    }

    #[test]
    fn vdn_sums_q() {
        let model = FactorizationModel::new(Variant::Vdn, matrix3_config(), 0);
        let mut g = Graph::new();
        let bound = model.params.bind_frozen(&mut g);
        let v = constant(&mut g, 1, &[-7.7, -7.7]);
        let a = constant(&mut g, 1, &[0.0, 0.0]);
        let s = constant(&mut g, 1, &[1.0, 1.0]);
        let out = model.mix(&mut g, &bound, v, a, s).unwrap();
        assert_eq!(g.data(out.q_tot), &[-15.4]);
    }

    #[test]
    fn transform_identity_and_sign() {
        let mut model = FactorizationModel::new(Variant::Qfree, matrix3_config(), 0);
        // ω = |1| + 1e-8, b = 0 for any state.
        model
            .params
            .get_mut("transform.out.weight")
            .unwrap()
            .data_mut()
            .fill(0.0);
        let bias = model.params.get_mut("transform.out.bias").unwrap();
        bias.data_mut().copy_from_slice(&[1.0, 1.0, 0.0, 0.0]);
        let mut g = Graph::new();
        let bound = model.params.bind_frozen(&mut g);
        let v = constant(&mut g, 1, &[0.5, -2.0]);
        let a = constant(&mut g, 1, &[-0.25, 0.0]);
        let s = constant(&mut g, 1, &[1.0, 1.0]);
        let (v2, a2) = model.transform(&mut g, &bound, v, a, s).unwrap();
        for (x, y) in g.data(v2).iter().zip([0.5, -2.0]) {
            assert!((x - y).abs() < 1e-7);
        }
        assert!(g.data(a2)[0] < 0.0 && g.data(a2)[1] == 0.0);
    }

    #[test]
    fn omega_positive() {
        let model = FactorizationModel::new(Variant::Qfree, matrix3_config(), 5);
        let mut g = Graph::new();
        let bound = model.params.bind_frozen(&mut g);
        let s = constant(&mut g, 3, &[1.0, 1.0, -3.0, 0.0, 100.0, -100.0]);
        let (w, _) = model.omega_bias(&mut g, &bound, s).unwrap();
        assert!(g.data(w).iter().all(|&x| x >= OMEGA_FLOOR));
    }

    #[test]
    fn dedup_matches_direct_unroll() {
        // Two identical episodes plus a different one: outputs must match the
        // per-episode unrolls exactly.
        let cfg = ModelConfig::for_env(&EnvKind::MemoryPair.spec());
        for share in [true, false] {
            let cfg = ModelConfig {
                share_params: share,
                ..cfg
            };
            let model = FactorizationModel::new(Variant::Qfree, cfg, 2);
            let ep = |b0: usize, b1: usize| {
                let mut o = vec![0.0; 3 * 2 * 2];
                o[b0] = 1.0;
                o[2 + b1] = 1.0;
                o
            };
            let mut data = ep(0, 1);
            data.extend(ep(0, 1));
            data.extend(ep(1, 1));
            let view = ObsView::new(3, 3, 2, 2, &data).unwrap();
            let mut g = Graph::new();
            let bound = model.params.bind_frozen(&mut g);
            let out = model.unroll_agents(&mut g, &bound, &view).unwrap();
            for b in 0..3 {
                for i in 0..2 {
                    let mut h = vec![0.0; 64];
                    for t in 0..3 {
                        let step = model.agent_forward(i, view.agent_obs(b, t, i), &h).unwrap();
                        assert_eq!(out.q_row(&g, t, b, i), step.q().as_slice());
                        h = step.h;
                    }
                }
            }
        }
    }
}
