//! Joint-action value tables and the IGM consistency checks.
//!
//! Two equivalent ways of asking whether per-agent greedy actions recover the
//! joint optimum:
//!
//! * [`igm_check`] compares the argmax of the joint advantage table with the
//!   tuple of per-agent argmaxes directly;
//! * [`theorem1_check`] asks whether the joint advantage is exactly zero at the
//!   per-agent greedy tuple `a*` and non-positive everywhere else.
//!
//! For a normalized joint advantage (maximum zero) with a unique maximizer the
//! two answers coincide.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::argmax;

/// Values over all joint actions of `n_agents` agents with `n_actions` each,
/// stored row-major (agent 0 varies slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    n_agents: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl JointTable {
    pub fn new(n_agents: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        let cells = n_actions.pow(n_agents as u32);
        if values.len() != cells || n_agents == 0 || n_actions == 0 {
            return Err(Error::Shape {
                op: "joint_table",
                lhs: vec![n_actions; n_agents],
                rhs: vec![values.len()],
            });
        }
        Ok(Self {
            n_agents,
            n_actions,
            values,
        })
    }

    pub fn from_fn(n_agents: usize, n_actions: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let cells = n_actions.pow(n_agents as u32);
        let mut joint = vec![0; n_agents];
        let values = (0..cells)
            .map(|idx| {
                decode(idx, n_actions, &mut joint);
                f(&joint)
            })
            .collect();
        Self {
            n_agents,
            n_actions,
            values,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, joint: &[usize]) -> Option<usize> {
        if joint.len() != self.n_agents || joint.iter().any(|&a| a >= self.n_actions) {
            return None;
        }
        Some(joint.iter().fold(0, |acc, &a| acc * self.n_actions + a))
    }

    pub fn joint_action(&self, idx: usize) -> Vec<usize> {
        let mut joint = vec![0; self.n_agents];
        decode(idx, self.n_actions, &mut joint);
        joint
    }

    pub fn get(&self, joint: &[usize]) -> Option<f64> {
        self.index_of(joint).map(|i| self.values[i])
    }

    /// Joint action with the largest value, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.joint_action(argmax(&self.values).expect("table is non-empty"))
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// The table shifted so that its maximum is exactly zero.
    pub fn normalized(&self) -> Self {
        let m = self.max();
        Self {
            values: self.values.iter().map(|v| v - m).collect(),
            ..self.clone()
        }
    }

    /// All joint actions in table order.
    pub fn joint_actions(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.values.len()).map(|i| self.joint_action(i))
    }
}

fn decode(mut idx: usize, n_actions: usize, joint: &mut [usize]) {
    for slot in joint.iter_mut().rev() {
        *slot = idx % n_actions;
        idx /= n_actions;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Report {
    /// `|A_tot(a*)|`.
    pub eq_residual: f64,
    /// Largest positive part of `A_tot(a)` over `a ≠ a*`.
    pub max_violation: f64,
    pub holds: bool,
}

/// Checks `A_tot(a*) = 0` and `A_tot(a) ≤ 0` for every `a ≠ a*`, both within `tol`.
pub fn theorem1_check(a_tot: &JointTable, a_star: &[usize], tol: f64) -> Result<Theorem1Report> {
    let star = a_tot
        .index_of(a_star)
        .ok_or_else(|| Error::MissingJointAction(a_star.to_vec()))?;
    let eq_residual = libm::fabs(a_tot.values[star]);
    let max_violation = a_tot
        .values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != star)
        .map(|(_, &v)| v.max(0.0))
        .fold(0.0, f64::max);
    Ok(Theorem1Report {
        eq_residual,
        max_violation,
        holds: eq_residual <= tol && max_violation <= tol,
    })
}

/// Per-agent argmaxes, lowest index on ties.
pub fn per_agent_argmax(per_agent: &[Vec<f64>]) -> Result<Vec<usize>> {
    per_agent
        .iter()
        .map(|row| argmax(row).ok_or(Error::EmptyRow))
        .collect()
}

/// True iff the joint argmax of `a_tot` equals the tuple of per-agent argmaxes.
/// Assumes unique maxima; ties resolve to the lowest index on both sides.
pub fn igm_check(a_tot: &JointTable, per_agent: &[Vec<f64>]) -> bool {
    if per_agent.len() != a_tot.n_agents || per_agent.iter().any(|row| row.len() != a_tot.n_actions)
    {
        return false;
    }
    match per_agent_argmax(per_agent) {
        Ok(local) => a_tot.argmax() == local,
        Err(_) => false,
    }
}
