//! Chain combination locks: `t` states, "advance" or "stay", reward only for
//! advancing out of the last state.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit_slope, flat_learner, median, quantile_sorted, curriculum_learner, DeterministicTask, JointPolicySpace,
    TheoryError,
};
use crate::rng;

/// Action per state: `true` advances, `false` stays.
pub type LockPolicy = Vec<bool>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CombinationLock {
    pub states: usize,
}

impl CombinationLock {
    /// Every state-to-action map, in lexicographic order with "stay" first.
    pub fn all_policies(&self) -> Vec<LockPolicy> {
        let t = self.states;
        (0..1u64 << t).map(|bits| (0..t).map(|s| bits >> (t - 1 - s) & 1 == 1).collect()).collect()
    }
}

impl DeterministicTask for CombinationLock {
    type Policy = LockPolicy;

    fn horizon(&self) -> usize {
        self.states
    }

    fn episode_return(&self, policy: &LockPolicy) -> f64 {
        let mut state = 0;
        for _ in 0..self.horizon() {
            if policy[state] {
                if state + 1 == self.states {
                    return 1.0;
                }
                state += 1;
            }
        }
        0.0
    }

    fn optimal_policy(&self) -> LockPolicy {
        vec![true; self.states]
    }
}

/// Locks of sizes `1..=max_t` (task `i` has `i + 1` states) and the joint
/// class in which a smaller lock's policy is a prefix of a larger one's.
pub fn lock_family(max_t: usize) -> (Vec<CombinationLock>, JointPolicySpace<LockPolicy>) {
    let locks: Vec<CombinationLock> = (1..=max_t).map(|states| CombinationLock { states }).collect();
    let policies = locks.iter().map(CombinationLock::all_policies).collect();
    let space = JointPolicySpace::new(
        policies,
        Box::new(|_, p: &LockPolicy, _, q: &LockPolicy| {
            let n = p.len().min(q.len());
            p[..n] == q[..n]
        }),
    );
    (locks, space)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockRow {
    pub t: usize,
    pub trials: usize,
    pub curriculum_median_steps: f64,
    /// Empirical `1 - δ` quantile of curriculum steps.
    pub curriculum_quantile_steps: f64,
    /// Coupon-collector bound on the curriculum steps at the configured constant.
    pub bound: f64,
    pub bound_holds: bool,
    pub flat_median_episodes: f64,
    pub flat_mean_episodes: f64,
    /// Trials whose curriculum learner ended on the all-advance policy for every lock.
    pub exact_recoveries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockReport {
    pub delta: f64,
    pub constant: f64,
    pub rows: Vec<LockRow>,
    /// Slope of ln(median curriculum steps) against ln(t).
    pub curriculum_loglog_slope: f64,
    /// `exp` of the slope of ln(median flat episodes) against t.
    pub flat_growth_factor: f64,
}

impl LockReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,trials,curriculum_median_steps,curriculum_quantile_steps,bound,bound_holds,flat_median_episodes,flat_mean_episodes,exact_recoveries\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.trials,
                r.curriculum_median_steps,
                r.curriculum_quantile_steps,
                r.bound,
                r.bound_holds,
                r.flat_median_episodes,
                r.flat_mean_episodes,
                r.exact_recoveries
            ));
        }
        out
    }
}

/// Curriculum learner against flat search on lock families of each size in
/// `sizes`, over `trials` seeded runs per size.
pub fn lock_experiment(
    sizes: &[usize],
    trials: usize,
    seed: u64,
    delta: f64,
    constant: f64,
) -> Result<LockReport, TheoryError> {
    if sizes.len() < 2 || trials == 0 || sizes.contains(&0) || *sizes.iter().max().expect("non-empty") > 16 {
        return Err(TheoryError::InvalidParameter("need at least two lock sizes in 1..=16 and trials >= 1".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &t in sizes {
        let (locks, space) = lock_family(t);
        let order: Vec<usize> = (0..t).collect();
        let horizons: Vec<usize> = locks.iter().map(|l| l.horizon()).collect();
        let target = locks[t - 1];
        let flat_space = target.all_policies();
        let optimal = target.optimal_policy();
        let results = (0..trials)
            .into_par_iter()
            .map(|i| {
                let s = rng::derive(seed, (t * 100_003 + i) as u64).next_u64();
                let out = curriculum_learner(&locks, &space, &order, s)?;
                let exact = out.policies.iter().zip(&locks).all(|(p, l)| *p == l.optimal_policy());
                let bound = out.bound(&horizons, delta, constant);
                let flat = flat_learner(&flat_space, &optimal, s ^ 0x666c_6174);
                Ok((out.total_steps as f64, bound, flat as f64, exact))
            })
            .collect::<Result<Vec<_>, TheoryError>>()?;
        let mut steps: Vec<f64> = results.iter().map(|r| r.0).collect();
        steps.sort_by(f64::total_cmp);
        let flat: Vec<f64> = results.iter().map(|r| r.2).collect();
        let quantile = quantile_sorted(&steps, 1.0 - delta);
        // Marginal sizes are fixed by construction, so every trial has the same bound.
        let bound = results[0].1;
        rows.push(LockRow {
            t,
            trials,
            curriculum_median_steps: median(&steps),
            curriculum_quantile_steps: quantile,
            bound,
            bound_holds: quantile <= bound,
            flat_median_episodes: median(&flat),
            flat_mean_episodes: flat.iter().sum::<f64>() / trials as f64,
            exact_recoveries: results.iter().filter(|r| r.3).count(),
        });
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.t as f64).collect();
    let log_ts: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let log_steps: Vec<f64> = rows.iter().map(|r| r.curriculum_median_steps.ln()).collect();
    let log_flat: Vec<f64> = rows.iter().map(|r| r.flat_median_episodes.ln()).collect();
    Ok(LockReport {
        delta,
        constant,
        curriculum_loglog_slope: fit_slope(&log_ts, &log_steps),
        flat_growth_factor: fit_slope(&ts, &log_flat).exp(),
        rows,
    })
}
