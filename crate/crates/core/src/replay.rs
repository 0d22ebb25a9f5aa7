//! Episode storage and padded minibatches.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::factor::ObsView;
use crate::rng::{stream, Rng, Stream};

/// One recorded episode. `obs` has one more step than `actions`: the
/// observation that followed the last action.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub n_agents: usize,
    pub obs_dim: usize,
    /// `[(len + 1) × n_agents × obs_dim]`.
    pub obs: Vec<f64>,
    /// `[len × n_agents]`.
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
}

impl Episode {
    pub fn new(n_agents: usize, obs_dim: usize, first_obs: &[Vec<f64>]) -> Self {
        Self {
            n_agents,
            obs_dim,
            obs: first_obs.iter().flatten().copied().collect(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: Vec::new(),
        }
    }

    pub fn push(&mut self, actions: &[usize], reward: f64, done: bool, next_obs: &[Vec<f64>]) {
        self.actions.extend_from_slice(actions);
        self.rewards.push(reward);
        self.terminated.push(done);
        self.obs.extend(next_obs.iter().flatten());
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// One step of a batch, as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
    pub mask: f64,
}

/// Episodes padded to a common length. Padding rows carry zero observations,
/// action 0, zero reward and mask 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub episodes: usize,
    pub max_len: usize,
    pub n_agents: usize,
    pub obs_dim: usize,
    /// `[episodes × (max_len + 1) × n_agents × obs_dim]`.
    pub obs: Vec<f64>,
    /// `[episodes × max_len × n_agents]`.
    pub actions: Vec<usize>,
    /// `[episodes × max_len]`.
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub mask: Vec<f64>,
}

impl EpisodeBatch {
    /// Pads `episodes` to their longest length, or to `pad_to` when larger.
    pub fn from_episodes(episodes: &[&Episode], pad_to: Option<usize>) -> Result<Self> {
        let first = episodes
            .first()
            .ok_or(Error::InsufficientData { have: 0, need: 1 })?;
        let (n, d) = (first.n_agents, first.obs_dim);
        let longest = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let max_len = pad_to.map_or(longest, |p| p.max(longest));
        let b = episodes.len();
        let mut batch = Self {
            episodes: b,
            max_len,
            n_agents: n,
            obs_dim: d,
            obs: vec![0.0; b * (max_len + 1) * n * d],
            actions: vec![0; b * max_len * n],
            reward: vec![0.0; b * max_len],
            done: vec![false; b * max_len],
            mask: vec![0.0; b * max_len],
        };
        for (e, ep) in episodes.iter().enumerate() {
            if ep.n_agents != n || ep.obs_dim != d {
                return Err(Error::Shape {
                    op: "episode_batch",
                    lhs: vec![n, d],
                    rhs: vec![ep.n_agents, ep.obs_dim],
                });
            }
            let obs_start = e * (max_len + 1) * n * d;
            batch.obs[obs_start..obs_start + ep.obs.len()].copy_from_slice(&ep.obs);
            let act_start = e * max_len * n;
            batch.actions[act_start..act_start + ep.actions.len()].copy_from_slice(&ep.actions);
            for t in 0..ep.len() {
                batch.reward[e * max_len + t] = ep.rewards[t];
                batch.done[e * max_len + t] = ep.terminated[t];
                batch.mask[e * max_len + t] = 1.0;
            }
        }
        Ok(batch)
    }

    /// Observations over `max_len + 1` steps.
    pub fn obs_view(&self) -> ObsView<'_> {
        ObsView {
            episodes: self.episodes,
            steps: self.max_len + 1,
            n_agents: self.n_agents,
            obs_dim: self.obs_dim,
            data: &self.obs,
        }
    }

    pub fn step_index(&self, episode: usize, t: usize) -> usize {
        episode * self.max_len + t
    }

    pub fn joint_action(&self, episode: usize, t: usize) -> &[usize] {
        let start = self.step_index(episode, t) * self.n_agents;
        &self.actions[start..start + self.n_agents]
    }

    pub fn transition(&self, episode: usize, t: usize) -> Transition {
        let view = self.obs_view();
        let per_agent = |step| {
            (0..self.n_agents)
                .map(|i| view.agent_obs(episode, step, i).to_vec())
                .collect()
        };
        let k = self.step_index(episode, t);
        Transition {
            obs: per_agent(t),
            actions: self.joint_action(episode, t).to_vec(),
            reward: self.reward[k],
            next_obs: per_agent(t + 1),
            done: self.done[k],
            mask: self.mask[k],
        }
    }
}

/// Fixed-capacity ring of episodes with seeded uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: Vec<Episode>,
    next: usize,
    rng: Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity: capacity.max(1),
            episodes: Vec::new(),
            next: 0,
            rng: stream(seed, Stream::Replay),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Stores an episode, overwriting the oldest once full.
    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() < self.capacity {
            self.episodes.push(episode);
        } else {
            self.episodes[self.next] = episode;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Draws `batch` distinct episodes uniformly.
    pub fn sample(&mut self, batch: usize) -> Result<EpisodeBatch> {
        if batch == 0 || self.episodes.len() < batch {
            return Err(Error::InsufficientData {
                have: self.episodes.len(),
                need: batch.max(1),
            });
        }
        let picks = sample(&mut self.rng, self.episodes.len(), batch);
        let chosen: Vec<&Episode> = picks.iter().map(|i| &self.episodes[i]).collect();
        EpisodeBatch::from_episodes(&chosen, None)
    }
}
