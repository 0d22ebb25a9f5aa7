//! Cooperative benchmark environments behind one Dec-POMDP interface.
//!
//! * `matrix3`: the 3×3 nonmonotonic one-step game (optimum 1 at (0, 0)).
//! * `matrix21`: the 21×21 one-step game whose payoff is the upper envelope of
//!   two quadratic bumps, global optimum 10 at (5, 15), local optimum 5 at (15, 5).
//! * `memory_pair`: a two-step game that can only be solved by remembering a
//!   privately observed bit.
//!
//! Matrix games show every agent the constant observation `[1.0]`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub episode_limit: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub obs: Vec<Vec<f64>>,
}

pub trait DecPomdp {
    fn kind(&self) -> EnvKind;

    fn spec(&self) -> EnvSpec;

    /// Starts a new episode and returns one observation per agent.
    fn reset(&mut self) -> Vec<Vec<f64>>;

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome>;

    /// Payoff of a joint action for one-step games with an enumerable table.
    fn payoff(&self, _joint: &[usize]) -> Option<f64> {
        None
    }

    /// Best achievable expected episode return.
    fn optimal_return(&self) -> f64;

    /// The unique optimal joint action of a tabular game.
    fn optimal_joint_action(&self) -> Option<Vec<usize>> {
        None
    }

    fn is_tabular(&self) -> bool {
        self.payoff(&vec![0; self.spec().n_agents]).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Matrix3,
    Matrix21,
    MemoryPair,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Matrix3, EnvKind::Matrix21, EnvKind::MemoryPair];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Matrix3 => "matrix3",
            EnvKind::Matrix21 => "matrix21",
            EnvKind::MemoryPair => "memory_pair",
        }
    }

    /// A fresh instance whose randomness is fully determined by `seed`.
    pub fn build(self, seed: u64) -> Box<dyn DecPomdp + Send> {
        match self {
            EnvKind::Matrix3 => Box::new(MatrixGame::matrix3()),
            EnvKind::Matrix21 => Box::new(MatrixGame::matrix21()),
            EnvKind::MemoryPair => Box::new(MemoryPair::new(seed)),
        }
    }

    pub fn spec(self) -> EnvSpec {
        self.build(0).spec()
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownEnv(s.into()))
    }
}

fn check_actions(actions: &[usize], n_agents: usize, n_actions: usize) -> Result<()> {
    if actions.len() != n_agents {
        return Err(Error::AgentCount {
            expected: n_agents,
            got: actions.len(),
        });
    }
    match actions.iter().find(|&&a| a >= n_actions) {
        Some(&action) => Err(Error::ActionOutOfRange {
            action,
            actions: n_actions,
        }),
        None => Ok(()),
    }
}

/// Payoff of the 3×3 game: 1 when both play 0, −12 when exactly one does, 0 otherwise.
pub fn matrix3_reward(a1: usize, a2: usize) -> Result<f64> {
    check_actions(&[a1, a2], 2, 3)?;
    Ok(match (a1 == 0, a2 == 0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => -12.0,
        (false, false) => 0.0,
    })
}

/// Payoff of the 21×21 game: `max(f1, f2)` with
/// `f1 = 5 − ((15 − a1)/3)² − ((5 − a2)/3)²` and `f2 = 10 − (5 − a1)² − (15 − a2)²`.
pub fn matrix21_reward(a1: usize, a2: usize) -> Result<f64> {
    check_actions(&[a1, a2], 2, 21)?;
    let (x, y) = (a1 as f64, a2 as f64);
    let f1 = 5.0 - ((15.0 - x) / 3.0) * ((15.0 - x) / 3.0) - ((5.0 - y) / 3.0) * ((5.0 - y) / 3.0);
    let f2 = 10.0 - (5.0 - x) * (5.0 - x) - (15.0 - y) * (15.0 - y);
    Ok(f1.max(f2))
}

/// A single-step two-player cooperative game with a payoff table.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    kind: EnvKind,
    n_actions: usize,
    table: Vec<f64>,
    finished: bool,
}

impl MatrixGame {
    pub fn matrix3() -> Self {
        Self::from_fn(EnvKind::Matrix3, 3, matrix3_reward)
    }

    pub fn matrix21() -> Self {
        Self::from_fn(EnvKind::Matrix21, 21, matrix21_reward)
    }

    fn from_fn(kind: EnvKind, n: usize, f: fn(usize, usize) -> Result<f64>) -> Self {
        let mut table = Vec::with_capacity(n * n);
        for a1 in 0..n {
            for a2 in 0..n {
                table.push(f(a1, a2).expect("in range"));
            }
        }
        Self {
            kind,
            n_actions: n,
            table,
            finished: true,
        }
    }

    /// Row-major payoff table: entry `a1 * n + a2`.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    fn constant_obs() -> Vec<Vec<f64>> {
        vec![vec![1.0]; 2]
    }
}

impl DecPomdp for MatrixGame {
    fn kind(&self) -> EnvKind {
        self.kind
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            n_agents: 2,
            n_actions: self.n_actions,
            obs_dim: 1,
            episode_limit: 1,
            gamma: 0.99,
        }
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.finished = false;
        Self::constant_obs()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        check_actions(actions, 2, self.n_actions)?;
        self.finished = true;
        Ok(StepOutcome {
            reward: self.table[actions[0] * self.n_actions + actions[1]],
            done: true,
            obs: Self::constant_obs(),
        })
    }

    fn payoff(&self, joint: &[usize]) -> Option<f64> {
        check_actions(joint, 2, self.n_actions).ok()?;
        Some(self.table[joint[0] * self.n_actions + joint[1]])
    }

    fn optimal_return(&self) -> f64 {
        self.table.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn optimal_joint_action(&self) -> Option<Vec<usize>> {
        let best = crate::tensor::argmax(&self.table)?;
        Some(vec![best / self.n_actions, best % self.n_actions])
    }
}

/// Two agents, two actions, two steps. At the first step each agent privately
/// sees a random bit (one-hot encoded); at the second step observations are
/// zero. The team earns 1 at the second step iff every agent's second action
/// equals its own bit.
#[derive(Debug, Clone)]
pub struct MemoryPair {
    rng: Rng,
    bits: [usize; 2],
    t: usize,
    finished: bool,
}

impl MemoryPair {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream(seed, Stream::Env),
            bits: [0; 2],
            t: 0,
            finished: true,
        }
    }

    /// The bits drawn for the current episode.
    pub fn bits(&self) -> [usize; 2] {
        self.bits
    }

    fn bit_obs(bit: usize) -> Vec<f64> {
        let mut o = vec![0.0; 2];
        o[bit] = 1.0;
        o
    }
}

impl DecPomdp for MemoryPair {
    fn kind(&self) -> EnvKind {
        EnvKind::MemoryPair
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            n_agents: 2,
            n_actions: 2,
            obs_dim: 2,
            episode_limit: 2,
            gamma: 0.99,
        }
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.bits = [self.rng.gen_range(0..2), self.rng.gen_range(0..2)];
        self.t = 0;
        self.finished = false;
        self.bits.iter().map(|&b| Self::bit_obs(b)).collect()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        check_actions(actions, 2, 2)?;
        self.t += 1;
        let zeros = vec![vec![0.0; 2]; 2];
        if self.t == 1 {
            return Ok(StepOutcome {
                reward: 0.0,
                done: false,
                obs: zeros,
            });
        }
        self.finished = true;
        let hit = actions.iter().zip(&self.bits).all(|(a, b)| a == b);
        Ok(StepOutcome {
            reward: if hit { 1.0 } else { 0.0 },
            done: true,
            obs: zeros,
        })
    }

    fn optimal_return(&self) -> f64 {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix3_payoffs() {
        assert_eq!(matrix3_reward(0, 0), Ok(1.0));
        assert_eq!(matrix3_reward(0, 2), Ok(-12.0));
        assert_eq!(matrix3_reward(2, 2), Ok(0.0));
        let expected = [[1.0, -12.0, -12.0], [-12.0, 0.0, 0.0], [-12.0, 0.0, 0.0]];
        for (a1, row) in expected.iter().enumerate() {
            for (a2, &v) in row.iter().enumerate() {
                assert_eq!(matrix3_reward(a1, a2).unwrap(), v);
            }
        }
        assert!(matrix3_reward(3, 0).is_err());
    }

    #[test]
    fn matrix21_payoffs() {
        assert_eq!(matrix21_reward(5, 15), Ok(10.0));
        assert_eq!(matrix21_reward(15, 5), Ok(5.0));
        // f1 = 5 - 25 - 25/9, f2 = 10 - 25 - 225
        let expected = 5.0 - 25.0 - 25.0 / 9.0;
        assert!((matrix21_reward(0, 0).unwrap() - expected).abs() < 1e-12);
        assert!((matrix21_reward(0, 0).unwrap() + 22.7777).abs() < 1e-3);
        assert!(matrix21_reward(21, 0).is_err());
    }

    #[test]
    fn matrix21_unique_argmax() {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        let mut count = 0;
        for a1 in 0..21 {
            for a2 in 0..21 {
                let r = matrix21_reward(a1, a2).unwrap();
                if r > best.0 {
                    best = (r, a1, a2);
                }
            }
        }
        for a1 in 0..21 {
            for a2 in 0..21 {
                if matrix21_reward(a1, a2).unwrap() == best.0 {
                    count += 1;
                }
            }
        }
        assert_eq!((best.1, best.2), (5, 15));
        assert_eq!(count, 1);
        assert_eq!(
            MatrixGame::matrix21().optimal_joint_action(),
            Some(vec![5, 15])
        );
    }

    #[test]
    fn matrix_episode() {
        let mut env = EnvKind::Matrix3.build(0);
        assert!(env.step(&[0, 0]).is_err());
        let obs = env.reset();
        assert_eq!(obs, vec![vec![1.0], vec![1.0]]);
        let out = env.step(&[0, 0]).unwrap();
        assert_eq!(out.reward, 1.0);
        assert!(out.done);
        assert_eq!(env.step(&[0, 0]), Err(Error::EpisodeFinished));
        env.reset();
        assert!(matches!(
            env.step(&[0, 3]),
            Err(Error::ActionOutOfRange { .. })
        ));
        assert!(env.is_tabular());
        assert!(!EnvKind::MemoryPair.build(0).is_tabular());
    }

    #[test]
    fn matrix21_delegates() {
        let mut env = EnvKind::Matrix21.build(0);
        for (a1, a2) in [(0, 0), (5, 15), (20, 3), (11, 11)] {
            env.reset();
            let out = env.step(&[a1, a2]).unwrap();
            assert_eq!(out.reward, matrix21_reward(a1, a2).unwrap());
        }
    }

    #[test]
    fn memory_pair_episode_shape() {
        let mut env = MemoryPair::new(7);
        for _ in 0..20 {
            let obs = env.reset();
            let bits = env.bits();
            for (o, b) in obs.iter().zip(bits) {
                assert_eq!(o.len(), 2);
                assert_eq!(o[b], 1.0);
                assert_eq!(o.iter().sum::<f64>(), 1.0);
            }
            let first = env.step(&[0, 1]).unwrap();
            assert!(!first.done);
            assert_eq!(first.reward, 0.0);
            assert!(first.obs.iter().flatten().all(|&v| v == 0.0));
            let second = env.step(&bits).unwrap();
            assert!(second.done);
            assert_eq!(second.reward, 1.0);
            assert_eq!(env.step(&[0, 0]), Err(Error::EpisodeFinished));
        }
    }

    #[test]
    fn memory_pair_is_seeded() {
        let draw = |seed| {
            let mut env = MemoryPair::new(seed);
            (0..16)
                .map(|_| {
                    env.reset();
                    env.bits()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn env_names_roundtrip() {
        for kind in EnvKind::ALL {
            assert_eq!(kind.name().parse::<EnvKind>(), Ok(kind));
        }
        assert!("smac".parse::<EnvKind>().is_err());
    }
}
