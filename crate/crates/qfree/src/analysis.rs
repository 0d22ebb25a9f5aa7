//! The `check-igm` surface: the advantage conditions and IGM on a table or model.

use std::fmt;

use anyhow::{ensure, Result};
use qfree_core::igm::{igm_check, per_agent_argmax, theorem1_check, JointTable, Theorem1Report};

use crate::checkpoint::Checkpoint;

#[derive(Debug, Clone, PartialEq)]
pub struct IgmReport {
    pub a_star: Vec<usize>,
    pub joint_argmax: Vec<usize>,
    pub theorem1: Theorem1Report,
    pub igm: bool,
}

impl fmt::Display for IgmReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "a_star = {:?}", self.a_star)?;
        writeln!(f, "joint_argmax = {:?}", self.joint_argmax)?;
        writeln!(f, "a_star_residual = {}", self.theorem1.eq_residual)?;
        writeln!(f, "max_violation = {}", self.theorem1.max_violation)?;
        writeln!(f, "theorem1 = {}", self.theorem1.holds)?;
        write!(f, "igm = {}", self.igm)
    }
}

/// Treats `q` as `Q_tot` and `a_star` as the per-agent greedy tuple:
/// `A_tot = Q_tot - max Q_tot`, per-agent utilities are one-hot at `a_star`.
pub fn check_table(q: &JointTable, a_star: &[usize], tol: f64) -> Result<IgmReport> {
    ensure!(
        a_star.len() == q.n_agents() && a_star.iter().all(|&a| a < q.n_actions()),
        "a* {a_star:?} does not index a {}-agent, {}-action table",
        q.n_agents(),
        q.n_actions()
    );
    let a_tot = q.normalized();
    let one_hot: Vec<Vec<f64>> = a_star
        .iter()
        .map(|&a| {
            (0..q.n_actions())
                .map(|k| if k == a { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(IgmReport {
        a_star: a_star.to_vec(),
        joint_argmax: q.argmax(),
        theorem1: theorem1_check(&a_tot, a_star, tol)?,
        igm: igm_check(&a_tot, &one_hot),
    })
}

/// Uses the model's own `A_tot` table and per-agent greedy actions at the
/// initial observation of a one-step game.
pub fn check_checkpoint(ckpt: &Checkpoint, tol: f64) -> Result<IgmReport> {
    let mut env = ckpt.env.build(ckpt.seed);
    let view = ckpt.model.tabular_view(env.as_mut())?;
    let a_star = per_agent_argmax(&view.agent_q)?;
    Ok(IgmReport {
        theorem1: theorem1_check(&view.a_tot, &a_star, tol)?,
        igm: igm_check(&view.q_tot, &view.agent_q),
        joint_argmax: view.q_tot.argmax(),
        a_star,
    })
}

pub fn parse_joint(s: &str) -> Result<Vec<usize>> {
    let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
    Ok(inner
        .split(',')
        .map(|x| x.trim().parse())
        .collect::<Result<_, _>>()?)
}
