//! Doubling curriculum: the active set is the first `2^(round-1)` molecules
//! and doubles whenever the newest molecule's rolling score clears its
//! threshold, or the round's step cap runs out.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{MoleculePool, TrainError, Trainer, TrainingMolecule, UpdateRecord};
use crate::agent::Policy;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    /// Fraction of the reference score the rolling mean must reach.
    pub threshold_ratio: f64,
    /// Episodes in the rolling window.
    pub window: usize,
    /// Environment steps after which a round ends regardless.
    pub round_step_cap: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig { threshold_ratio: 0.6, window: 20, round_step_cap: 50_000 }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.window == 0 || self.round_step_cap == 0 {
            return Err(TrainError::InvalidConfig("window and round_step_cap must be positive".into()));
        }
        if !self.threshold_ratio.is_finite() || self.threshold_ratio < 0.0 {
            return Err(TrainError::InvalidConfig("threshold_ratio must be non-negative".into()));
        }
        Ok(())
    }
}

/// Stable sort by torsion count, then atom count.
pub fn sort_curriculum(molecules: &mut [TrainingMolecule]) {
    molecules.sort_by_key(|m| (m.graph.torsion_count(), m.graph.atom_count()));
}

/// Round bookkeeping over an ordered molecule list.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    total: usize,
    round: usize,
    window: VecDeque<f64>,
    window_size: usize,
    round_steps: usize,
}

impl CurriculumState {
    pub fn new(total: usize, window_size: usize) -> Self {
        CurriculumState { total, round: 1, window: VecDeque::new(), window_size, round_steps: 0 }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// `min(2^(round-1), total)`.
    pub fn active_len(&self) -> usize {
        let shift = (self.round - 1).min(usize::BITS as usize - 1);
        (1usize << shift).min(self.total)
    }

    /// Index of the newest molecule in the active set.
    pub fn hardest(&self) -> usize {
        self.active_len() - 1
    }

    pub fn is_final(&self) -> bool {
        self.active_len() == self.total
    }

    pub fn round_steps(&self) -> usize {
        self.round_steps
    }

    pub fn add_steps(&mut self, steps: usize) {
        self.round_steps += steps;
    }

    pub fn record_score(&mut self, score: f64) {
        self.window.push_back(score);
        while self.window.len() > self.window_size {
            self.window.pop_front();
        }
    }

    /// Full window whose mean reaches `target`.
    pub fn threshold_reached(&self, target: f64) -> bool {
        self.window.len() == self.window_size
            && self.window.iter().sum::<f64>() / self.window_size as f64 >= target
    }

    pub fn advance(&mut self) {
        self.round += 1;
        self.window.clear();
        self.round_steps = 0;
    }
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    pub active: usize,
    pub env_steps: usize,
    /// False when the round ended on its step cap.
    pub threshold_reached: bool,
    pub checkpoint: Policy,
}

#[derive(Debug, Clone)]
pub struct CurriculumReport {
    pub rounds: Vec<RoundReport>,
    pub updates: Vec<UpdateRecord>,
    /// Updates drawn per molecule.
    pub samples: Vec<usize>,
}

/// Trains over `pool` in its stored order (see [`sort_curriculum`]). Each
/// iteration draws a molecule uniformly from the active set, collects
/// episodes on it and updates.
pub fn run_curriculum(
    trainer: &mut Trainer,
    pool: &mut MoleculePool,
    config: &CurriculumConfig,
) -> Result<CurriculumReport, TrainError> {
    config.validate()?;
    if pool.is_empty() {
        return Err(TrainError::InvalidConfig("curriculum needs at least one molecule".into()));
    }
    let mut state = CurriculumState::new(pool.len(), config.window);
    let mut report = CurriculumReport { rounds: Vec::new(), updates: Vec::new(), samples: vec![0; pool.len()] };
    loop {
        let i = rng::uniform_index(trainer.rng(), state.active_len());
        report.samples[i] += 1;
        let (buffer, record) = trainer.iterate(pool, i, state.round())?;
        state.add_steps(buffer.steps());
        report.updates.push(record);
        let hardest = state.hardest();
        if i == hardest {
            for ep in &buffer.episodes {
                state.record_score(ep.score);
            }
        }
        let target = config.threshold_ratio * pool.molecule(hardest).reference_score;
        let reached = state.threshold_reached(target);
        if reached || state.round_steps() >= config.round_step_cap {
            report.rounds.push(RoundReport {
                round: state.round(),
                active: state.active_len(),
                env_steps: state.round_steps(),
                threshold_reached: reached,
                checkpoint: trainer.policy.clone(),
            });
            if state.is_final() {
                return Ok(report);
            }
            state.advance();
        }
    }
}
