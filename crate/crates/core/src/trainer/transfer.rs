//! Sequential training on the T-branched alkane family with parameters
//! carried from one stage to the next, scored against the oracle optimum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{greedy_rollout, MoleculePool, TrainError, Trainer, TrainerConfig, TrainingMolecule};
use crate::agent::{AgentConfig, Policy};
use crate::chem::t_branched_alkane;
use crate::env::{RewardMode, DEFAULT_BUCKETS};
use crate::forcefield::{EnergyModel, ForceField};
use crate::search::Oracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Largest family member; stages run over `1..=max_t`.
    pub max_t: usize,
    pub seeds: Vec<u64>,
    /// Environment steps of training per stage.
    pub stage_steps: usize,
    pub agent: AgentConfig,
    pub trainer: TrainerConfig,
    /// Reset seed of every evaluation rollout.
    pub eval_seed: u64,
    pub reference_budget: usize,
    pub reward_mode: RewardMode,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            max_t: 4,
            seeds: (0..5).collect(),
            stage_steps: 12_000,
            agent: AgentConfig::default(),
            trainer: TrainerConfig::default(),
            eval_seed: 0,
            reference_budget: 200,
            reward_mode: RewardMode::Pruned,
        }
    }
}

/// `gaps[seed][stage][target]`: best greedy energy on `target` after
/// training through `stage`, minus the oracle optimum (both zero-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub seeds: Vec<u64>,
    pub oracle_energies: Vec<f64>,
    pub gaps: Vec<Vec<Vec<f64>>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl TransferResult {
    pub fn stages(&self) -> usize {
        self.oracle_energies.len()
    }

    /// Gap across seeds for one (stage, target) cell.
    pub fn cell(&self, stage: usize, target: usize) -> Vec<f64> {
        self.gaps.iter().map(|g| g[stage][target]).collect()
    }

    pub fn mean(&self, stage: usize, target: usize) -> f64 {
        mean(&self.cell(stage, target))
    }

    /// Standard error of the mean; zero for a single seed.
    pub fn standard_error(&self, stage: usize, target: usize) -> f64 {
        let v = self.cell(stage, target);
        if v.len() < 2 {
            return 0.0;
        }
        let m = mean(&v);
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (var / v.len() as f64).sqrt()
    }

    pub fn median(&self, stage: usize, target: usize) -> f64 {
        let mut v = self.cell(stage, target);
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
    }

    /// One row per (stage, target) with t-values, summary and per-seed gaps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage_t,target_t,mean_gap,stderr_gap,median_gap");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push('\n');
        let n = self.stages();
        for stage in 0..n {
            for target in 0..n {
                out.push_str(&format!(
                    "{},{},{},{},{}",
                    stage + 1,
                    target + 1,
                    self.mean(stage, target),
                    self.standard_error(stage, target),
                    self.median(stage, target)
                ));
                for g in self.cell(stage, target) {
                    out.push_str(&format!(",{g}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Runs every seed (in parallel) through stages `1..=max_t`.
pub fn transfer_experiment(
    config: &TransferConfig,
    ff: &ForceField,
    oracle: &Oracle,
) -> Result<TransferResult, TrainError> {
    config.trainer.validate()?;
    config.agent.validate()?;
    if config.max_t == 0 || config.seeds.is_empty() {
        return Err(TrainError::InvalidConfig("transfer needs max_t >= 1 and at least one seed".into()));
    }
    let ff_hash = ff.content_hash();
    let mut molecules = Vec::with_capacity(config.max_t);
    let mut oracle_energies = Vec::with_capacity(config.max_t);
    for t in 1..=config.max_t {
        let g = t_branched_alkane(t);
        let model = EnergyModel::new(&g, ff)?;
        let table = oracle.table(&model, &g.content_hash(), &ff_hash, DEFAULT_BUCKETS)?;
        oracle_energies.push(table.best().energy);
        molecules.push(TrainingMolecule::prepare(g, ff, config.reward_mode, config.reference_budget)?);
    }
    let gaps = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, ff, &molecules, &oracle_energies, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TransferResult { seeds: config.seeds.clone(), oracle_energies, gaps })
}

fn run_seed(
    config: &TransferConfig,
    ff: &ForceField,
    molecules: &[TrainingMolecule],
    oracle_energies: &[f64],
    seed: u64,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let policy = Policy::new(config.agent, seed)?;
    let mut trainer = Trainer::new(policy, config.trainer.clone(), seed)?;
    let mut rows = Vec::with_capacity(molecules.len());
    for stage in molecules {
        let mut pool = MoleculePool::new(vec![stage.clone()], ff)?;
        let start = trainer.env_steps();
        while trainer.env_steps() - start < config.stage_steps {
            trainer.iterate(&mut pool, 0, 1)?;
        }
        let row = molecules
            .iter()
            .zip(oracle_energies)
            .map(|(m, e_star)| {
                let ep = greedy_rollout(&trainer.policy, &m.graph, ff, m.env, config.eval_seed)?;
                Ok(ep.best_energy - e_star)
            })
            .collect::<Result<Vec<f64>, TrainError>>()?;
        rows.push(row);
    }
    Ok(rows)
}
