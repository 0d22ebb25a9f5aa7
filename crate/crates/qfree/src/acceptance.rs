//! Pass/fail thresholds for sweep outcomes, shared by `sweep --assert` and
//! the acceptance test target.

use std::fmt;

use qfree_core::env::EnvKind;
use qfree_core::factor::Variant;

use crate::report::{RunSummary, SweepSummary};

pub const SEEDS: usize = 20;
pub const MATRIX3_STEPS: u64 = 20_000;
pub const MATRIX21_STEPS: u64 = 8_000;
pub const MEMORY_STEPS: u64 = 50_000;

pub const MATRIX3_MIN_SUCCESS: usize = 18;
pub const MATRIX3_LINF: f64 = 0.5;
pub const BASELINE_MIN_FAIL: usize = 18;
pub const MATRIX21_MIN_SUCCESS: usize = 15;
pub const MATRIX21_RMSE: f64 = 1.5;
pub const SUM_MIN_FAIL: usize = 15;
pub const MEMORY_MIN_SUCCESS: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({})",
            if self.pass { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

fn count(runs: &[RunSummary], pred: impl Fn(&RunSummary) -> bool) -> usize {
    runs.iter().filter(|r| pred(r)).count()
}

/// Successes counted only where the learned table is also close to the truth.
fn tabular(
    s: &SweepSummary,
    min: usize,
    close: impl Fn(&RunSummary) -> bool,
    what: &str,
) -> Verdict {
    let ok = count(&s.runs, |r| r.success);
    let far = count(&s.runs, |r| r.success && !close(r));
    Verdict {
        pass: ok >= min && far == 0,
        detail: format!(
            "{ok}/{} successful, need {min}; {far} successful seeds miss the {what} bound",
            s.runs.len()
        ),
    }
}

pub fn matrix3_optimality(s: &SweepSummary) -> Verdict {
    tabular(
        s,
        MATRIX3_MIN_SUCCESS,
        |r| r.comparison.is_some_and(|c| c.linf <= MATRIX3_LINF),
        "L-inf",
    )
}

/// Greedy action off the optimum and a negative learned value at the optimum.
pub fn baseline_failure(s: &SweepSummary) -> Verdict {
    let failed = count(&s.runs, |r| {
        r.greedy_action.is_some()
            && r.greedy_action != r.optimal_action
            && r.qtot_at_optimum.is_some_and(|q| q < 0.0)
    });
    Verdict {
        pass: failed >= BASELINE_MIN_FAIL,
        detail: format!(
            "{failed}/{} fail with Q_tot(opt) < 0, need {BASELINE_MIN_FAIL}",
            s.runs.len()
        ),
    }
}

pub fn matrix21_optimality(s: &SweepSummary) -> Verdict {
    tabular(
        s,
        MATRIX21_MIN_SUCCESS,
        |r| r.comparison.is_some_and(|c| c.rmse <= MATRIX21_RMSE),
        "RMSE",
    )
}

pub fn sum_ablation(s: &SweepSummary) -> Verdict {
    let failed = count(&s.runs, |r| !r.success);
    Verdict {
        pass: failed >= SUM_MIN_FAIL,
        detail: format!(
            "{failed}/{} miss the optimum, need {SUM_MIN_FAIL}",
            s.runs.len()
        ),
    }
}

pub fn regularizer_ablation(qfree: &SweepSummary, ablation: &SweepSummary) -> Verdict {
    let (a, b) = (qfree.successes(), ablation.successes());
    Verdict {
        pass: b < a,
        detail: format!(
            "ablation {b}/{} vs qfree {a}/{}",
            ablation.runs.len(),
            qfree.runs.len()
        ),
    }
}

pub fn memory(s: &SweepSummary) -> Verdict {
    let ok = s.successes();
    Verdict {
        pass: ok >= MEMORY_MIN_SUCCESS,
        detail: format!(
            "{ok}/{} reach 0.9 of the optimum, need {MEMORY_MIN_SUCCESS}",
            s.runs.len()
        ),
    }
}

/// The single-sweep threshold that applies to `(env, variant)`, if any.
pub fn sweep_threshold(env: EnvKind, variant: Variant) -> Option<fn(&SweepSummary) -> Verdict> {
    match (env, variant) {
        (EnvKind::Matrix3, Variant::Qfree) => Some(matrix3_optimality),
        (EnvKind::Matrix3, Variant::Qmix | Variant::Vdn) => Some(baseline_failure),
        (EnvKind::Matrix21, Variant::Qfree) => Some(matrix21_optimality),
        (EnvKind::Matrix21, Variant::QfreeSum) => Some(sum_ablation),
        (EnvKind::MemoryPair, Variant::Qfree) => Some(memory),
        _ => None,
    }
}
