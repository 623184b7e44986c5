//! Conformer-search episodes: pick a bucket per torsion, relax, get scored.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::MoleculeGraph;
use crate::forcefield::{EnergyModel, ForceField, ForceFieldError};
use crate::geometry::{normalize_pose, Coordinates};
use crate::metrics::{
    gibbs_measure, tfd, ConformerRecord, GibbsNormalizers, MetricsError, DEFAULT_PRUNE_THRESHOLD,
};
use crate::rng;

/// Guards the logarithm of an empty score.
pub const LOG_GIBBS_EPSILON: f64 = 1e-8;

pub const DEFAULT_BUCKETS: usize = 6;

/// Random starts tried before `reset` gives up.
pub const RESET_ATTEMPTS: usize = 10;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    ForceField(#[from] ForceFieldError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no finite starting conformer after {0} attempts")]
    NoFiniteStart(usize),
    #[error("episode already finished")]
    EpisodeDone,
    #[error("action has {got} buckets, molecule has {expected} torsions")]
    ActionLength { expected: usize, got: usize },
    #[error("bucket {bucket} out of range 0..{buckets}")]
    BucketOutOfRange { bucket: usize, buckets: usize },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("episode log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// Gibbs measure of the relaxed conformer, ignoring history.
    Stationary,
    /// Gibbs measure unless the conformer duplicates an accepted one.
    Pruned,
    /// Increment of the log of the running pruned score.
    LogGibbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub horizon: usize,
    pub prune_threshold: f64,
    pub reward_mode: RewardMode,
    pub buckets: usize,
    pub normalizers: GibbsNormalizers,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: 200,
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            reward_mode: RewardMode::Pruned,
            buckets: DEFAULT_BUCKETS,
            normalizers: GibbsNormalizers::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon < 1 {
            return Err(EnvError::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.buckets < 2 {
            return Err(EnvError::InvalidConfig("need at least 2 buckets".into()));
        }
        if !(0.0..=1.0).contains(&self.prune_threshold) {
            return Err(EnvError::InvalidConfig("prune threshold must lie in [0, 1]".into()));
        }
        self.normalizers.validate()?;
        Ok(())
    }
}

/// Angle of zero-based bucket `b`: bucket `b` stands for `(b + 1)·2π/B`, so
/// the last bucket is the full turn.
pub fn bucket_angle(bucket: usize, buckets: usize) -> f64 {
    let angle = (bucket + 1) as f64 * TAU / buckets as f64;
    if angle >= TAU { 0.0 } else { angle }
}

pub fn decode_action(action: &[usize], buckets: usize) -> Vec<f64> {
    action.iter().map(|&b| bucket_angle(b, buckets)).collect()
}

/// A relaxed conformer; `energy` is +∞ when relaxation hit a clash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relaxed {
    pub theta: Vec<f64>,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub record: ConformerRecord,
    /// Within the prune threshold of an accepted conformer (or a clash).
    pub pruned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogEntry {
    pub step: usize,
    pub action: Vec<usize>,
    pub theta: Vec<f64>,
    /// `None` for a clash.
    pub energy: Option<f64>,
    pub reward: f64,
    pub pruned: bool,
}

/// One molecule's search environment. Relaxations are memoized per bucket
/// combination, which is sound because the minimizer is deterministic.
#[derive(Debug, Clone)]
pub struct ConformerEnv {
    graph: MoleculeGraph,
    model: EnergyModel,
    config: EnvConfig,
    cache: HashMap<Vec<usize>, Relaxed>,
    initial: Option<ConformerRecord>,
    records: Vec<ConformerRecord>,
    log: Vec<EpisodeLogEntry>,
    running_score: f64,
    step: usize,
}

impl ConformerEnv {
    pub fn new(graph: MoleculeGraph, ff: &ForceField, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let model = EnergyModel::new(&graph, ff)?;
        Ok(ConformerEnv {
            graph,
            model,
            config,
            cache: HashMap::new(),
            initial: None,
            records: Vec::new(),
            log: Vec::new(),
            running_score: 0.0,
            step: 0,
        })
    }

    pub fn graph(&self) -> &MoleculeGraph {
        &self.graph
    }

    pub fn model(&self) -> &EnergyModel {
        &self.model
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: EnvConfig) -> Result<(), EnvError> {
        config.validate()?;
        if config.buckets != self.config.buckets {
            self.cache.clear();
        }
        self.config = config;
        Ok(())
    }

    pub fn torsion_count(&self) -> usize {
        self.graph.torsion_count()
    }

    /// Starts a new episode from a relaxed random conformer.
    pub fn reset(&mut self, seed: u64) -> Result<&ConformerRecord, EnvError> {
        let mut r = rng::seeded(seed);
        let n = self.torsion_count();
        let mut start = None;
        for _ in 0..RESET_ATTEMPTS {
            let theta: Vec<f64> = (0..n).map(|_| TAU * rng::uniform_unit(&mut r)).collect();
            match self.model.minimize(&theta) {
                Ok(m) if m.report.is_finite() => {
                    start = Some(ConformerRecord::new(m.theta, m.report.total, &self.config.normalizers));
                    break;
                }
                Ok(_) | Err(ForceFieldError::NonFiniteEnergy) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        let initial = start.ok_or(EnvError::NoFiniteStart(RESET_ATTEMPTS))?;
        self.initial = Some(initial);
        self.records.clear();
        self.log.clear();
        self.running_score = 0.0;
        self.step = 0;
        Ok(self.initial.as_ref().expect("just set"))
    }

    /// Relaxation of a bucket combination, memoized.
    pub fn relax(&mut self, action: &[usize]) -> Result<Relaxed, EnvError> {
        self.check_action(action)?;
        if let Some(hit) = self.cache.get(action) {
            return Ok(hit.clone());
        }
        let theta = decode_action(action, self.config.buckets);
        let relaxed = match self.model.minimize(&theta) {
            Ok(m) if m.report.is_finite() => Relaxed { theta: m.theta, energy: m.report.total },
            Ok(_) | Err(ForceFieldError::NonFiniteEnergy) => Relaxed { theta, energy: f64::INFINITY },
            Err(e) => return Err(e.into()),
        };
        self.cache.insert(action.to_vec(), relaxed.clone());
        Ok(relaxed)
    }

    fn check_action(&self, action: &[usize]) -> Result<(), EnvError> {
        if action.len() != self.torsion_count() {
            return Err(EnvError::ActionLength { expected: self.torsion_count(), got: action.len() });
        }
        if let Some(&bucket) = action.iter().find(|&&b| b >= self.config.buckets) {
            return Err(EnvError::BucketOutOfRange { bucket, buckets: self.config.buckets });
        }
        Ok(())
    }

    /// Whether `theta` lies within the prune threshold of the start or of any
    /// accepted conformer so far.
    pub fn is_duplicate(&self, theta: &[f64]) -> bool {
        let m = self.config.prune_threshold;
        let near = |r: &ConformerRecord| tfd(&r.theta, theta, None).expect("torsion counts agree") <= m;
        self.initial.iter().any(near) || self.records.iter().filter(|r| r.accepted).any(near)
    }

    pub fn step(&mut self, action: &[usize]) -> Result<StepOutcome, EnvError> {
        if self.initial.is_none() || self.done() {
            return Err(EnvError::EpisodeDone);
        }
        let relaxed = self.relax(action)?;
        let norm = self.config.normalizers;
        let measure = gibbs_measure(relaxed.energy, &norm);
        let pruned = !relaxed.energy.is_finite() || self.is_duplicate(&relaxed.theta);
        let previous = self.running_score;
        if !pruned {
            self.running_score += measure;
        }
        let reward = match self.config.reward_mode {
            RewardMode::Stationary => measure,
            RewardMode::Pruned => {
                if pruned {
                    0.0
                } else {
                    measure
                }
            }
            RewardMode::LogGibbs => {
                (self.running_score + LOG_GIBBS_EPSILON).ln() - (previous + LOG_GIBBS_EPSILON).ln()
            }
        };
        let record = ConformerRecord {
            theta: relaxed.theta,
            energy: relaxed.energy,
            gibbs: measure,
            accepted: !pruned,
        };
        self.log.push(EpisodeLogEntry {
            step: self.step + 1,
            action: action.to_vec(),
            theta: record.theta.clone(),
            energy: relaxed.energy.is_finite().then_some(relaxed.energy),
            reward,
            pruned,
        });
        self.records.push(record.clone());
        self.step += 1;
        Ok(StepOutcome { reward, done: self.done(), record, pruned })
    }

    pub fn done(&self) -> bool {
        self.step >= self.config.horizon
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// The relaxed starting conformer.
    pub fn initial(&self) -> Option<&ConformerRecord> {
        self.initial.as_ref()
    }

    /// Conformers produced by actions, in order, with uniqueness flags.
    pub fn records(&self) -> &[ConformerRecord] {
        &self.records
    }

    /// Pruned Gibbs score accumulated by this episode's actions.
    pub fn running_score(&self) -> f64 {
        self.running_score
    }

    /// Most recent conformer (the start before any step).
    pub fn current(&self) -> Option<&ConformerRecord> {
        self.records.last().or(self.initial.as_ref())
    }

    /// Pose-normalized coordinates of the current conformer.
    pub fn current_coordinates(&self) -> Result<Coordinates, EnvError> {
        let current = self.current().ok_or(EnvError::EpisodeDone)?;
        Ok(normalize_pose(&self.model.coordinates(&current.theta)?).coords)
    }

    /// Lowest finite energy among the action-produced conformers.
    pub fn best_energy(&self) -> f64 {
        self.records.iter().map(|r| r.energy).fold(f64::INFINITY, f64::min)
    }

    pub fn log(&self) -> &[EpisodeLogEntry] {
        &self.log
    }

    pub fn write_log(&self, mut out: impl Write) -> Result<(), EnvError> {
        for entry in &self.log {
            serde_json::to_writer(&mut out, entry).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn cache_size(&self) -> usize {
        self.cache.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, t_branched_alkane};
    use crate::metrics::gibbs_score;

    fn env(g: MoleculeGraph, mode: RewardMode, horizon: usize) -> ConformerEnv {
        let config = EnvConfig { horizon, reward_mode: mode, ..Default::default() };
        ConformerEnv::new(g, &ForceField::default(), config).unwrap()
    }

    fn random_actions(seed: u64, n: usize, count: usize) -> Vec<Vec<usize>> {
        let mut r = rng::seeded(seed);
        (0..count).map(|_| (0..n).map(|_| rng::uniform_index(&mut r, 6)).collect()).collect()
    }

    #[test]
    fn buckets_decode_to_multiples_of_sixty_degrees() {
        let angles = decode_action(&[0, 1, 2, 3, 4, 5], 6);
        for (k, a) in angles.iter().enumerate() {
            let expected = ((k + 1) % 6) as f64 * TAU / 6.0;
            assert!((a - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn reset_is_deterministic_and_relaxed() {
        let mut a = env(parse_smiles("CCCC").unwrap(), RewardMode::Pruned, 5);
        let mut b = a.clone();
        let first = a.reset(1).unwrap().clone();
        assert_eq!(&first, b.reset(1).unwrap());
        let grad = a.model().gradient(&first.theta).unwrap();
        assert!(grad.iter().all(|g| g.abs() <= 1e-6));
    }

    #[test]
    fn rejects_bad_configs_and_actions() {
        let g = parse_smiles("CCCC").unwrap();
        let ff = ForceField::default();
        for bad in [
            EnvConfig { horizon: 0, ..Default::default() },
            EnvConfig { buckets: 1, ..Default::default() },
            EnvConfig { prune_threshold: 1.5, ..Default::default() },
        ] {
            assert!(matches!(ConformerEnv::new(g.clone(), &ff, bad), Err(EnvError::InvalidConfig(_))));
        }
        let mut e = env(g, RewardMode::Pruned, 1);
        assert!(matches!(e.step(&[0]), Err(EnvError::EpisodeDone)));
        e.reset(0).unwrap();
        assert!(matches!(e.step(&[0, 1]), Err(EnvError::ActionLength { .. })));
        assert!(matches!(e.step(&[6]), Err(EnvError::BucketOutOfRange { .. })));
        e.step(&[2]).unwrap();
        assert!(matches!(e.step(&[2]), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn zero_torsion_episode_is_trivial() {
        let mut e = env(parse_smiles("CC(C)C").unwrap(), RewardMode::Pruned, 3);
        e.reset(5).unwrap();
        for _ in 0..3 {
            let out = e.step(&[]).unwrap();
            assert!(out.pruned);
            assert_eq!(out.reward, 0.0);
        }
        assert!(e.done());
    }

    #[test]
    fn stationary_first_reward_is_the_measure() {
        let mut e = env(t_branched_alkane(2), RewardMode::Stationary, 4);
        e.reset(3).unwrap();
        let out = e.step(&[2, 2]).unwrap();
        assert_eq!(out.reward, gibbs_measure(out.record.energy, &e.config().normalizers));
        // A repeat earns the same stationary reward.
        assert_eq!(e.step(&[2, 2]).unwrap().reward, out.reward);
    }

    #[test]
    fn duplicate_basin_earns_nothing() {
        let mut e = env(t_branched_alkane(2), RewardMode::Pruned, 4);
        e.reset(3).unwrap();
        let first = e.step(&[2, 2]).unwrap();
        let again = e.step(&[2, 2]).unwrap();
        assert!(again.pruned);
        assert_eq!(again.reward, 0.0);
        if !first.pruned {
            assert!(first.reward > 0.0);
        }
    }

    #[test]
    fn pruned_rewards_sum_to_the_score() {
        for seed in 0..5 {
            let g = t_branched_alkane(3);
            let mut e = env(g, RewardMode::Pruned, 30);
            e.reset(seed).unwrap();
            let mut total = 0.0;
            for a in random_actions(seed, 3, 30) {
                total += e.step(&a).unwrap().reward;
            }
            assert!((total - gibbs_score(e.records())).abs() <= 1e-9);
            assert!((total - e.running_score()).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_gibbs_telescopes() {
        let g = t_branched_alkane(3);
        let mut e = env(g, RewardMode::LogGibbs, 25);
        e.reset(7).unwrap();
        let mut total = 0.0;
        for a in random_actions(7, 3, 25) {
            let out = e.step(&a).unwrap();
            if out.pruned {
                assert_eq!(out.reward, 0.0);
            }
            total += out.reward;
        }
        let expected = (e.running_score() + LOG_GIBBS_EPSILON).ln() - LOG_GIBBS_EPSILON.ln();
        assert!((total - expected).abs() <= 1e-9);
    }

    #[test]
    fn log_gibbs_single_contribution() {
        let mut e = env(t_branched_alkane(1), RewardMode::LogGibbs, 6);
        e.reset(0).unwrap();
        for b in 0..6 {
            let out = e.step(&[b]).unwrap();
            if !out.pruned {
                let c = out.record.gibbs;
                let expected = ((c + LOG_GIBBS_EPSILON) / LOG_GIBBS_EPSILON).ln();
                assert!((out.reward - expected).abs() < 1e-9);
                return;
            }
        }
        panic!("no accepted conformer");
    }

    #[test]
    fn accepted_set_is_separated() {
        let g = t_branched_alkane(4);
        let mut e = env(g, RewardMode::Pruned, 60);
        e.reset(2).unwrap();
        for a in random_actions(2, 4, 60) {
            e.step(&a).unwrap();
        }
        let mut accepted: Vec<&ConformerRecord> = e.records().iter().filter(|r| r.accepted).collect();
        accepted.push(e.initial().unwrap());
        for i in 0..accepted.len() {
            for j in i + 1..accepted.len() {
                assert!(tfd(&accepted[i].theta, &accepted[j].theta, None).unwrap() > 0.1);
            }
        }
    }

    #[test]
    fn episode_is_determined_by_seed_and_actions() {
        let run = || {
            let mut e = env(t_branched_alkane(3), RewardMode::Pruned, 10);
            e.reset(11).unwrap();
            for a in random_actions(4, 3, 10) {
                e.step(&a).unwrap();
            }
            let mut buf = Vec::new();
            e.write_log(&mut buf).unwrap();
            buf
        };
        let first = run();
        assert_eq!(first, run());
        let text = String::from_utf8(first).unwrap();
        assert_eq!(text.lines().count(), 10);
        let entry: EpisodeLogEntry = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(entry.step, 1);
    }

    #[test]
    fn relaxations_are_memoized() {
        let mut e = env(t_branched_alkane(2), RewardMode::Pruned, 10);
        e.reset(0).unwrap();
        e.step(&[1, 1]).unwrap();
        e.step(&[1, 1]).unwrap();
        e.step(&[0, 1]).unwrap();
        assert_eq!(e.cache_size(), 2);
    }
}
