//! Sample-complexity experiments for curriculum learning over families of
//! deterministic tasks: coupon collection, version-space search over joint
//! policies, the combination lock and the Hamming-ball conformer bandit.

mod bandit;
mod lock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Rng};

pub use bandit::{
    ball_size, bandit_curriculum, nearest_optimum_chain, BanditReport, BanditStage, HammingBallSpace, OptimumChain,
    RadiusSchedule,
};
pub use lock::{lock_experiment, CombinationLock, LockPolicy, LockReport, LockRow};

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("strings of length {0} and {1} cannot be compared")]
    LengthMismatch(usize, usize),
    #[error("task {task}: optimal policy is outside the restricted policy space")]
    OptimumEscapedSpace { task: usize },
    #[error("curriculum is not a permutation of the tasks")]
    BadCurriculum,
    #[error("invalid experiment parameter: {0}")]
    InvalidParameter(String),
}

/// Number of positions where `a` and `b` differ.
pub fn hamming<T: PartialEq>(a: &[T], b: &[T]) -> Result<usize, TheoryError> {
    if a.len() != b.len() {
        return Err(TheoryError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Uniform draws from `0..n` until every value has appeared.
pub fn coupon_draws(n: usize, r: &mut Rng) -> u64 {
    let mut seen = vec![false; n];
    let mut missing = n;
    let mut draws = 0;
    while missing > 0 {
        let k = rng::uniform_index(r, n);
        draws += 1;
        if !seen[k] {
            seen[k] = true;
            missing -= 1;
        }
    }
    draws
}

/// Empirical `q`-quantile of sorted data: the smallest value with at least
/// a `q` fraction of the sample at or below it.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `n·ln²(n/δ)`, the coupon-collector high-probability scale.
pub fn coupon_scale(n: usize, delta: f64) -> f64 {
    let l = (n as f64 / delta).ln();
    n as f64 * l * l
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouponReport {
    pub n: usize,
    pub delta: f64,
    pub trials: usize,
    pub mean: f64,
    pub median: f64,
    /// Empirical `1 - δ` quantile of the draw count.
    pub quantile: f64,
    /// Constant the bound was checked with.
    pub constant: f64,
    /// `constant · n · ln²(n/δ)`.
    pub bound: f64,
    /// Smallest constant that would still make the quantile fit.
    pub calibrated_constant: f64,
    pub holds: bool,
}

impl CouponReport {
    pub const CSV_HEADER: &'static str = "n,delta,trials,mean,median,quantile,constant,bound,calibrated_constant,pass";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.delta,
            self.trials,
            self.mean,
            self.median,
            self.quantile,
            self.constant,
            self.bound,
            self.calibrated_constant,
            self.holds
        )
    }
}

/// Repeats coupon collection over `n` items; trial `i` uses its own derived
/// stream, so results do not depend on thread scheduling.
pub fn coupon_collector_sim(
    n: usize,
    delta: f64,
    trials: usize,
    seed: u64,
    constant: f64,
) -> Result<CouponReport, TheoryError> {
    if n == 0 || trials == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(TheoryError::InvalidParameter("need n >= 1, trials >= 1 and 0 < delta < 1".into()));
    }
    let mut draws: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| coupon_draws(n, &mut rng::derive(seed, i as u64)) as f64)
        .collect();
    draws.sort_by(f64::total_cmp);
    let quantile = quantile_sorted(&draws, 1.0 - delta);
    let scale = coupon_scale(n, delta);
    let bound = constant * scale;
    Ok(CouponReport {
        n,
        delta,
        trials,
        mean: draws.iter().sum::<f64>() / trials as f64,
        median: median(&draws),
        quantile,
        constant,
        bound,
        calibrated_constant: quantile / scale,
        holds: quantile <= bound,
    })
}

/// Exact expected draws, `n·H_n`.
pub fn coupon_expectation(n: usize) -> f64 {
    n as f64 * (1..=n).map(|k| 1.0 / k as f64).sum::<f64>()
}

/// Consistency of policy `p` for task `t` with policy `q` for task `s`.
pub type Compatibility<P> = Box<dyn Fn(usize, &P, usize, &P) -> bool + Send + Sync>;

/// Finite joint policy class over `T` tasks. A joint policy belongs to the
/// class when every pair of its components is compatible.
pub struct JointPolicySpace<P> {
    policies: Vec<Vec<P>>,
    compatible: Compatibility<P>,
}

impl<P: Clone + PartialEq> JointPolicySpace<P> {
    pub fn new(policies: Vec<Vec<P>>, compatible: Compatibility<P>) -> Self {
        JointPolicySpace { policies, compatible }
    }

    pub fn tasks(&self) -> usize {
        self.policies.len()
    }

    pub fn policies(&self, task: usize) -> &[P] {
        &self.policies[task]
    }

    /// Whether a full assignment lies in the class.
    pub fn contains(&self, joint: &[P]) -> bool {
        joint.len() == self.tasks()
            && (0..joint.len()).all(|t| {
                self.policies[t].contains(&joint[t])
                    && (0..t).all(|s| (self.compatible)(t, &joint[t], s, &joint[s]))
            })
    }

    /// Policies of `task` compatible with every fixed `(task, policy)` pair:
    /// the marginal of the restricted class.
    pub fn marginal(&self, task: usize, fixed: &[(usize, P)]) -> Vec<P> {
        self.policies[task]
            .iter()
            .filter(|p| fixed.iter().all(|(s, q)| *s == task && *p == q || *s != task && (self.compatible)(task, p, *s, q)))
            .cloned()
            .collect()
    }
}

/// A deterministic finite-horizon task: one episode per policy is enough to
/// know its return.
pub trait DeterministicTask {
    type Policy: Clone + PartialEq;

    fn horizon(&self) -> usize;

    fn episode_return(&self, policy: &Self::Policy) -> f64;

    /// The unique optimal policy.
    fn optimal_policy(&self) -> Self::Policy;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumRound {
    pub task: usize,
    pub marginal_size: usize,
    pub episodes: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumOutcome<P> {
    pub rounds: Vec<CurriculumRound>,
    /// Chosen policy per task, indexed by task.
    pub policies: Vec<P>,
    pub total_steps: u64,
}

impl<P> CurriculumOutcome<P> {
    /// `constant · Σ_t K_t·|M_t|·ln²(T·|M_t|/δ)` over the rounds.
    pub fn bound(&self, horizons: &[usize], delta: f64, constant: f64) -> f64 {
        let t = self.rounds.len() as f64;
        self.rounds
            .iter()
            .map(|r| {
                let m = r.marginal_size as f64;
                let l = (t * m / delta).ln();
                horizons[r.task] as f64 * m * l * l
            })
            .sum::<f64>()
            * constant
    }
}

/// Round by round along `curriculum`, draws policies uniformly (with
/// replacement) from the current marginal until each has been tried once,
/// keeps the first best, and fixes it for later rounds.
pub fn curriculum_learner<M: DeterministicTask>(
    tasks: &[M],
    space: &JointPolicySpace<M::Policy>,
    curriculum: &[usize],
    seed: u64,
) -> Result<CurriculumOutcome<M::Policy>, TheoryError> {
    let mut sorted = curriculum.to_vec();
    sorted.sort_unstable();
    if sorted != (0..tasks.len()).collect::<Vec<_>>() || space.tasks() != tasks.len() {
        return Err(TheoryError::BadCurriculum);
    }
    let mut r = rng::seeded(seed);
    let mut fixed: Vec<(usize, M::Policy)> = Vec::with_capacity(tasks.len());
    let mut rounds = Vec::with_capacity(tasks.len());
    let mut total_steps = 0;
    for &task in curriculum {
        let mdp = &tasks[task];
        let marginal = space.marginal(task, &fixed);
        if !marginal.contains(&mdp.optimal_policy()) {
            return Err(TheoryError::OptimumEscapedSpace { task });
        }
        let mut seen = vec![false; marginal.len()];
        let mut missing = marginal.len();
        let mut episodes = 0u64;
        let mut best: Option<(usize, f64)> = None;
        while missing > 0 {
            let k = rng::uniform_index(&mut r, marginal.len());
            episodes += 1;
            if seen[k] {
                continue;
            }
            seen[k] = true;
            missing -= 1;
            let ret = mdp.episode_return(&marginal[k]);
            if best.is_none_or(|(_, b)| ret > b) {
                best = Some((k, ret));
            }
        }
        let steps = episodes * mdp.horizon() as u64;
        total_steps += steps;
        rounds.push(CurriculumRound { task, marginal_size: marginal.len(), episodes, steps });
        let (k, _) = best.expect("marginal is non-empty");
        fixed.push((task, marginal[k].clone()));
    }
    fixed.sort_by_key(|(t, _)| *t);
    Ok(CurriculumOutcome { rounds, policies: fixed.into_iter().map(|(_, p)| p).collect(), total_steps })
}

/// Uniform search over a task's whole policy set until the optimum is drawn.
/// Returns the number of episodes.
pub fn flat_learner<P: PartialEq>(policies: &[P], optimal: &P, seed: u64) -> u64 {
    assert!(policies.contains(optimal), "optimal policy must be in the search space");
    let mut r = rng::seeded(seed);
    let mut episodes = 0;
    loop {
        episodes += 1;
        if policies[rng::uniform_index(&mut r, policies.len())] == *optimal {
            return episodes;
        }
    }
}

#[cfg(test)]
mod tests;
