//! Stage-wise bucket search where stage `t` only looks at strings whose
//! first `t - 1` buckets lie within a Hamming radius of the previous
//! stage's optimum.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{hamming, TheoryError};
use crate::rng;
use crate::search::{OracleTable, ORACLE_TIE_TOLERANCE};

/// `Σ_{j ≤ radius} C(t-1, j)·(A-1)^j · A` for strings of length `t`.
pub fn ball_size(t: usize, radius: usize, alphabet: usize) -> u64 {
    let prefix = t.saturating_sub(1);
    let mut total = 0u64;
    let mut choose = 1u64;
    for j in 0..=radius.min(prefix) {
        if j > 0 {
            choose = choose * (prefix - j + 1) as u64 / j as u64;
        }
        total += choose * ((alphabet - 1) as u64).pow(j as u32);
    }
    total * alphabet as u64
}

/// Length-`t` bucket strings whose first `t - 1` entries are within
/// `radius` of `center`; the last entry is free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HammingBallSpace {
    pub center: Vec<usize>,
    pub radius: usize,
    pub alphabet: usize,
}

impl HammingBallSpace {
    pub fn len(&self) -> u64 {
        ball_size(self.center.len() + 1, self.radius, self.alphabet)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, a: &[usize]) -> bool {
        a.len() == self.center.len() + 1
            && a.iter().all(|&b| b < self.alphabet)
            && hamming(&a[..self.center.len()], &self.center).is_ok_and(|d| d <= self.radius)
    }

    /// Members in lexicographic order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut current = Vec::with_capacity(self.center.len() + 1);
        self.extend(&mut current, self.radius, &mut out);
        out
    }

    fn extend(&self, current: &mut Vec<usize>, budget: usize, out: &mut Vec<Vec<usize>>) {
        let pos = current.len();
        if pos == self.center.len() + 1 {
            out.push(current.clone());
            return;
        }
        for b in 0..self.alphabet {
            let cost = usize::from(pos < self.center.len() && b != self.center[pos]);
            if cost <= budget {
                current.push(b);
                self.extend(current, budget - cost, out);
                current.pop();
            }
        }
    }
}

/// Radius per stage `t >= 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusSchedule {
    Constant(usize),
    /// Entry `i` is the radius of stage `i + 2`; the last entry repeats.
    Table(Vec<usize>),
    /// Radii of the [`nearest_optimum_chain`] of the oracle optima.
    Measured,
}

/// Distance of `a`'s prefix from `center`, the first key of the tie rule.
fn prefix_distance(a: &[usize], center: &[usize]) -> usize {
    a.iter().zip(center).filter(|(x, y)| x != y).count()
}

/// Many bucket strings relax into the same global minimum, so stage optima
/// are sets. The chain picks one per stage: the first optimum at stage 1,
/// then the optimum whose prefix is nearest the previous pick (ties to the
/// lower odometer index). `radii[i]` is that distance for stage `i + 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimumChain {
    pub centers: Vec<Vec<usize>>,
    pub radii: Vec<usize>,
}

/// `optimal_sets[i]` lists the optima of stage `i + 1` in odometer order.
pub fn nearest_optimum_chain(optimal_sets: &[Vec<Vec<usize>>]) -> Result<OptimumChain, TheoryError> {
    let mut centers: Vec<Vec<usize>> = Vec::with_capacity(optimal_sets.len());
    let mut radii = Vec::with_capacity(optimal_sets.len().saturating_sub(1));
    for (i, set) in optimal_sets.iter().enumerate() {
        let prev: &[usize] = centers.last().map_or(&[], Vec::as_slice);
        if set.is_empty() || set.iter().any(|a| a.len() != i + 1) {
            return Err(TheoryError::InvalidParameter(format!("stage {} needs optima of length {}", i + 1, i + 1)));
        }
        // Sets are in odometer order, so min_by_key keeps the lowest index on ties.
        let pick = set.iter().min_by_key(|a| prefix_distance(a, prev)).expect("non-empty");
        if i > 0 {
            radii.push(prefix_distance(pick, prev));
        }
        centers.push(pick.clone());
    }
    Ok(OptimumChain { centers, radii })
}

fn odometer_index(action: &[usize], alphabet: usize) -> usize {
    action.iter().fold(0, |acc, &b| acc * alphabet + b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditStage {
    pub t: usize,
    pub radius: usize,
    pub ball_size: u64,
    pub samples: u64,
    pub best_action: Vec<usize>,
    pub best_energy: f64,
    pub oracle_energy: f64,
    pub found_optimum: bool,
    /// Chain radius of this stage.
    pub measured_radius: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditReport {
    pub stages: Vec<BanditStage>,
    pub total_samples: u64,
    /// `A^T`, the cost of searching the last stage without a curriculum.
    pub flat_samples: u64,
}

impl BanditReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,radius,measured_radius,ball_size,samples,best_energy,oracle_energy,found_optimum,pass\n",
        );
        for s in &self.stages {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.t,
                s.radius,
                s.measured_radius.map_or(String::new(), |r| r.to_string()),
                s.ball_size,
                s.samples,
                s.best_energy,
                s.oracle_energy,
                s.found_optimum,
                s.samples <= s.ball_size
            ));
        }
        out
    }
}

/// Searches each stage's ball exhaustively in a seeded random order. `tables`
/// holds the oracle tables of stages `1..=T` in order; rewards are negative
/// relaxed energies. Near-ties go to the string whose prefix is nearest
/// the center, then to the lowest odometer index, as in [`nearest_optimum_chain`].
pub fn bandit_curriculum(
    tables: &[OracleTable],
    schedule: &RadiusSchedule,
    seed: u64,
) -> Result<BanditReport, TheoryError> {
    if tables.is_empty() {
        return Err(TheoryError::InvalidParameter("bandit curriculum needs at least one stage".into()));
    }
    let alphabet = tables[0].buckets;
    for (i, t) in tables.iter().enumerate() {
        if t.torsions != i + 1 || t.buckets != alphabet {
            return Err(TheoryError::InvalidParameter(format!(
                "stage {} table has {} torsions and {} buckets",
                i + 1,
                t.torsions,
                t.buckets
            )));
        }
    }
    let sets: Vec<Vec<Vec<usize>>> = tables.iter().map(OracleTable::optimal_actions).collect();
    let measured = nearest_optimum_chain(&sets)?.radii;
    let radius_for = |t: usize| -> usize {
        match schedule {
            RadiusSchedule::Constant(r) => *r,
            RadiusSchedule::Table(v) => *v.get(t - 2).or(v.last()).unwrap_or(&0),
            RadiusSchedule::Measured => measured[t - 2],
        }
    };
    let mut r = rng::seeded(seed);
    let mut center: Vec<usize> = Vec::new();
    let mut stages = Vec::with_capacity(tables.len());
    for (i, table) in tables.iter().enumerate() {
        let t = i + 1;
        let radius = if t == 1 { 0 } else { radius_for(t) };
        let ball = HammingBallSpace { center: center.clone(), radius, alphabet };
        let mut order = ball.members();
        order.shuffle(&mut r);
        let energies: Vec<f64> = order.iter().map(|a| table.energy(odometer_index(a, alphabet))).collect();
        let ball_best = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let index = order
            .iter()
            .zip(&energies)
            .filter(|(_, &e)| e <= ball_best + ORACLE_TIE_TOLERANCE)
            .map(|(a, _)| (prefix_distance(a, &center), odometer_index(a, alphabet)))
            .min()
            .expect("balls are never empty")
            .1;
        let best_energy = table.energy(index);
        let oracle_energy = table.best().energy;
        let best_action = crate::search::odometer(index as u64, t, alphabet);
        stages.push(BanditStage {
            t,
            radius,
            ball_size: ball.len(),
            samples: order.len() as u64,
            best_action: best_action.clone(),
            best_energy,
            oracle_energy,
            found_optimum: best_energy <= oracle_energy + ORACLE_TIE_TOLERANCE,
            measured_radius: (t >= 2).then(|| measured[t - 2]),
        });
        center = best_action;
    }
    let total_samples = stages.iter().map(|s| s.samples).sum();
    Ok(BanditReport { stages, total_samples, flat_samples: (alphabet as u64).pow(tables.len() as u32) })
}
