//! Policy training: rollouts, advantage estimation, clipped-surrogate updates,
//! the doubling curriculum and the sequential transfer experiment.

mod curriculum;
mod transfer;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{log_softmax, Adam, AgentError, GraphInput, Policy};
use crate::chem::{generate_branched_alkane, MoleculeGraph};
use crate::env::{ConformerEnv, EnvConfig, EnvError, RewardMode, DEFAULT_BUCKETS};
use crate::forcefield::{EnergyModel, ForceField, ForceFieldError};
use crate::metrics::{GibbsNormalizers, DEFAULT_PRUNE_THRESHOLD, DEFAULT_TEMPERATURE};
use crate::rng::{self, Rng};
use crate::search::{reference_normalizers, ConformerSet, SearchBudget, SearchError};

pub use curriculum::{
    run_curriculum, sort_curriculum, CurriculumConfig, CurriculumReport, CurriculumState, RoundReport,
};
pub use transfer::{transfer_experiment, TransferConfig, TransferResult};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    ForceField(#[from] ForceFieldError),
    #[error("non-finite loss; update discarded")]
    NonFiniteLoss,
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
}

/// Optimization knobs. Minibatches hold whole episodes so that gradients
/// can flow back through the memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    /// Target steps per minibatch, rounded up to whole episodes.
    pub minibatch_steps: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `0` disables it.
    pub max_grad_norm: f64,
    /// Episodes collected per update.
    pub episodes_per_update: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 4,
            minibatch_steps: 64,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            episodes_per_update: 8,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.episodes_per_update == 0 {
            return bad("episodes_per_update must be at least 1");
        }
        if self.minibatch_steps == 0 {
            return bad("minibatch_steps must be at least 1");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.max_grad_norm < 0.0 {
            return bad("coefficients must be non-negative");
        }
        Ok(())
    }
}

/// Horizon used when a molecule's config does not set one.
pub fn default_horizon(torsions: usize) -> usize {
    20.max(5 * torsions)
}

/// A molecule with its environment settings and reference score.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMolecule {
    pub graph: MoleculeGraph,
    pub env: EnvConfig,
    /// Score of the normalizing reference run under its own normalizers.
    pub reference_score: f64,
}

impl TrainingMolecule {
    /// Normalizers from one systematic run of `reference_budget` conformers;
    /// horizon from [`default_horizon`].
    pub fn prepare(
        graph: MoleculeGraph,
        ff: &ForceField,
        reward_mode: RewardMode,
        reference_budget: usize,
    ) -> Result<Self, TrainError> {
        let model = EnergyModel::new(&graph, ff)?;
        let budget = SearchBudget::new(reference_budget, DEFAULT_BUCKETS);
        let normalizers =
            reference_normalizers(&model, budget, DEFAULT_TEMPERATURE, DEFAULT_PRUNE_THRESHOLD)?;
        let reference = crate::search::systematic_search(&model, budget, &normalizers, DEFAULT_PRUNE_THRESHOLD)?;
        let env = EnvConfig {
            horizon: default_horizon(graph.torsion_count()),
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            reward_mode,
            buckets: DEFAULT_BUCKETS,
            normalizers,
        };
        Ok(TrainingMolecule { graph, env, reference_score: reference.gibbs_score() })
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.env.horizon = horizon;
        self
    }
}

/// Distinct generated alkanes with a torsion count in range, scanning
/// generator seeds upward from `seed_start` and atom counts in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlkaneSetSpec {
    pub seed_start: u64,
    pub count: usize,
    /// Inclusive atom-count range.
    pub atoms: (usize, usize),
    /// Inclusive torsion-count range.
    pub torsions: (usize, usize),
}

impl Default for AlkaneSetSpec {
    fn default() -> Self {
        AlkaneSetSpec { seed_start: 0, count: 8, atoms: (7, 10), torsions: (3, 5) }
    }
}

/// Generator seeds scanned before giving up on filling a set.
const ALKANE_SCAN_LIMIT: u64 = 100_000;

impl AlkaneSetSpec {
    pub fn build(&self) -> Result<Vec<MoleculeGraph>, TrainError> {
        if self.atoms.0 < 1 || self.atoms.0 > self.atoms.1 || self.torsions.0 > self.torsions.1 {
            return Err(TrainError::InvalidConfig("alkane set ranges must be non-empty".into()));
        }
        let mut out: Vec<MoleculeGraph> = Vec::with_capacity(self.count);
        let mut seen = std::collections::HashSet::new();
        for seed in self.seed_start..self.seed_start.saturating_add(ALKANE_SCAN_LIMIT) {
            for n in self.atoms.0..=self.atoms.1 {
                if out.len() == self.count {
                    return Ok(out);
                }
                let g = generate_branched_alkane(seed, n);
                let k = g.torsion_count();
                if (self.torsions.0..=self.torsions.1).contains(&k) && seen.insert(g.content_hash()) {
                    out.push(g);
                }
            }
        }
        if out.len() == self.count {
            Ok(out)
        } else {
            Err(TrainError::InvalidConfig(format!("only {} alkanes match the set spec", out.len())))
        }
    }
}

/// One environment per parallel episode slot and molecule; relaxation
/// caches persist across updates.
pub struct MoleculePool {
    molecules: Vec<TrainingMolecule>,
    ff: ForceField,
    envs: Vec<Vec<ConformerEnv>>,
}

impl MoleculePool {
    pub fn new(molecules: Vec<TrainingMolecule>, ff: &ForceField) -> Result<Self, TrainError> {
        for m in &molecules {
            m.env.validate()?;
        }
        let envs = molecules.iter().map(|_| Vec::new()).collect();
        Ok(MoleculePool { molecules, ff: ff.clone(), envs })
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn molecule(&self, i: usize) -> &TrainingMolecule {
        &self.molecules[i]
    }

    pub fn molecules(&self) -> &[TrainingMolecule] {
        &self.molecules
    }

    /// The first `n` environments of molecule `i`, created on demand.
    fn envs(&mut self, i: usize, n: usize) -> Result<&mut [ConformerEnv], TrainError> {
        while self.envs[i].len() < n {
            let m = &self.molecules[i];
            self.envs[i].push(ConformerEnv::new(m.graph.clone(), &self.ff, m.env)?);
        }
        Ok(&mut self.envs[i][..n])
    }
}

/// How actions are chosen during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample from the policy with this seed.
    Sample(u64),
    Greedy,
}

/// One finished episode. Index `t` of every per-step vector refers to the
/// same step; observations are the conformers the actions were chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub molecule: usize,
    pub inputs: Vec<GraphInput>,
    pub actions: Vec<Vec<usize>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Sum of per-step policy entropies divided by the step count.
    pub mean_entropy: f64,
    /// Pruned Gibbs score of the episode's conformers.
    pub score: f64,
    pub best_energy: f64,
    /// Relaxed `(theta, energy)` per step.
    pub conformers: Vec<(Vec<f64>, f64)>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// The episode's conformers as an energy-deduplicated scored set.
    pub fn conformer_set(&self, norm: &GibbsNormalizers, threshold: f64) -> ConformerSet {
        ConformerSet::from_relaxed("agent", self.actions.clone(), self.conformers.clone(), norm, threshold)
    }
}

fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Plays one full episode from `env.reset(reset_seed)`. Memory reads each
/// observation before the action for that step is chosen.
pub fn run_episode(
    policy: &Policy,
    env: &mut ConformerEnv,
    molecule: usize,
    reset_seed: u64,
    mode: ActionMode,
) -> Result<Episode, TrainError> {
    env.reset(reset_seed)?;
    let mut sampler = match mode {
        ActionMode::Sample(seed) => Some(rng::seeded(seed)),
        ActionMode::Greedy => None,
    };
    let horizon = env.config().horizon;
    let mut ep = Episode {
        molecule,
        inputs: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        log_probs: Vec::with_capacity(horizon),
        values: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        mean_entropy: 0.0,
        score: 0.0,
        best_energy: f64::INFINITY,
        conformers: Vec::with_capacity(horizon),
    };
    let mut memory = policy.initial_memory();
    let mut entropy_sum = 0.0;
    while !env.done() {
        let input = GraphInput::new(env.graph(), &env.current_coordinates()?);
        let out = policy.step(&input, &memory);
        let action = match sampler.as_mut() {
            Some(r) => policy.sample(&out, r),
            None => policy.greedy(&out),
        };
        let outcome = env.step(&action.buckets)?;
        entropy_sum += out.probs.iter().map(|p| entropy(p)).sum::<f64>();
        ep.inputs.push(input);
        ep.actions.push(action.buckets);
        ep.log_probs.push(action.log_prob);
        ep.values.push(out.value);
        ep.rewards.push(outcome.reward);
        ep.conformers.push((outcome.record.theta, outcome.record.energy));
        memory = out.memory;
    }
    ep.mean_entropy = entropy_sum / ep.len().max(1) as f64;
    ep.score = env.running_score();
    ep.best_energy = env.best_energy();
    Ok(ep)
}

/// Completed episodes in collection order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub episodes: Vec<Episode>,
}

impl RolloutBuffer {
    pub fn steps(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }
}

/// Generalized advantage estimates for one episode that ends at its last
/// step (no bootstrap).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
    }
    adv
}

/// Per-episode advantages (normalized over the whole buffer) and value targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

/// Below this spread advantages are only centered, not scaled.
const MIN_ADVANTAGE_STD: f64 = 1e-12;

pub fn compute_advantages(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> Advantages {
    let raw: Vec<Vec<f64>> =
        buffer.episodes.iter().map(|e| gae(&e.rewards, &e.values, gamma, lambda)).collect();
    let returns = raw
        .iter()
        .zip(&buffer.episodes)
        .map(|(a, e)| a.iter().zip(&e.values).map(|(a, v)| a + v).collect())
        .collect();
    let n = raw.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    let mean = raw.iter().flatten().sum::<f64>() / n;
    let var = raw.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > MIN_ADVANTAGE_STD { 1.0 / std } else { 1.0 };
    let advantages = raw
        .iter()
        .map(|a| {
            a.iter()
                .map(|x| {
                    let centered = x - mean;
                    if centered.abs() < MIN_ADVANTAGE_STD { 0.0 } else { centered * scale }
                })
                .collect()
        })
        .collect();
    Advantages { advantages, returns }
}

/// Loss terms averaged over the steps they were computed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Clipped surrogate objective (to be maximized).
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of steps whose ratio gradient was cut by clipping.
    pub clip_fraction: f64,
}

impl LossTerms {
    fn loss(&self, config: &TrainerConfig) -> f64 {
        -self.surrogate + config.value_coef * self.value_loss - config.entropy_coef * self.entropy
    }
}

/// Loss-gradient with respect to one step's logits for the clipped surrogate.
/// Returns `(per-torsion dlogits, surrogate, clipped)`; the caller scales.
pub fn surrogate_logit_gradient(
    logits: &[Vec<f64>],
    action: &[usize],
    old_log_prob: f64,
    advantage: f64,
    clip: f64,
) -> (Vec<Vec<f64>>, f64, bool) {
    let log_probs: Vec<Vec<f64>> = logits.iter().map(|z| log_softmax(z)).collect();
    let new_log_prob: f64 = log_probs.iter().zip(action).map(|(lp, &a)| lp[a]).sum();
    let ratio = (new_log_prob - old_log_prob).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    let passes = unclipped <= clipped;
    let coef = if passes { ratio * advantage } else { 0.0 };
    let grads = log_probs
        .iter()
        .zip(action)
        .map(|(lp, &a)| {
            lp.iter()
                .enumerate()
                .map(|(k, l)| -coef * (f64::from(u8::from(k == a)) - l.exp()))
                .collect()
        })
        .collect();
    (grads, unclipped.min(clipped), !passes)
}

/// Loss-gradient of `-H` for one softmax distribution: `p_k (log p_k + H)`.
pub fn negative_entropy_gradient(logits: &[f64]) -> Vec<f64> {
    let lp = log_softmax(logits);
    let h: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
    lp.iter().map(|l| l.exp() * (l + h)).collect()
}

/// Gradient of the minibatch loss contributed by one episode, with each step
/// weighted by `scale` (one over the minibatch step count).
fn episode_gradient(
    policy: &Policy,
    ep: &Episode,
    advantages: &[f64],
    returns: &[f64],
    config: &TrainerConfig,
    scale: f64,
) -> (Vec<f64>, LossTerms) {
    let (outs, tape) = policy.forward_episode(&ep.inputs);
    let mut terms = LossTerms::default();
    let mut dlogits = Vec::with_capacity(outs.len());
    let mut dvalues = Vec::with_capacity(outs.len());
    for (t, out) in outs.iter().enumerate() {
        let (mut g, surrogate, clipped) =
            surrogate_logit_gradient(&out.logits, &ep.actions[t], ep.log_probs[t], advantages[t], config.clip);
        for (gk, z) in g.iter_mut().zip(&out.logits) {
            let de = negative_entropy_gradient(z);
            for (a, b) in gk.iter_mut().zip(&de) {
                *a = (*a + config.entropy_coef * b) * scale;
            }
        }
        dlogits.push(g);
        let err = out.value - returns[t];
        dvalues.push(2.0 * config.value_coef * err * scale);
        terms.surrogate += surrogate * scale;
        terms.value_loss += err * err * scale;
        terms.entropy += out.probs.iter().map(|p| entropy(p)).sum::<f64>() * scale;
        terms.clip_fraction += f64::from(u8::from(clipped)) * scale;
    }
    let mut grad = vec![0.0; policy.param_count()];
    policy.backward_episode(&tape, &dlogits, &dvalues, &mut grad);
    (grad, terms)
}

/// Clipped surrogate averaged over every step of the buffer under `policy`.
pub fn surrogate_objective(policy: &Policy, buffer: &RolloutBuffer, adv: &Advantages, clip: f64) -> f64 {
    let n = buffer.steps().max(1) as f64;
    buffer
        .episodes
        .par_iter()
        .zip(&adv.advantages)
        .map(|(ep, a)| {
            let (outs, _) = policy.forward_episode(&ep.inputs);
            outs.iter()
                .enumerate()
                .map(|(t, o)| surrogate_logit_gradient(&o.logits, &ep.actions[t], ep.log_probs[t], a[t], clip).1)
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        / n
}

/// Statistics of one clipped-surrogate update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub terms: LossTerms,
    pub minibatches: usize,
    pub grad_norm: f64,
}

/// Several epochs of clipped-surrogate minibatch steps over `buffer`.
/// A non-finite loss restores the parameters and optimizer state from
/// before the call.
pub fn ppo_update(
    policy: &mut Policy,
    optimizer: &mut Adam,
    buffer: &RolloutBuffer,
    adv: &Advantages,
    config: &TrainerConfig,
    r: &mut Rng,
) -> Result<UpdateStats, TrainError> {
    let saved = (policy.params().to_vec(), optimizer.clone());
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..buffer.episodes.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(r);
        let mut start = 0;
        while start < order.len() {
            let mut end = start;
            let mut steps = 0;
            while end < order.len() && steps < config.minibatch_steps {
                steps += buffer.episodes[order[end]].len();
                end += 1;
            }
            let batch = &order[start..end];
            start = end;
            if steps == 0 {
                continue;
            }
            let scale = 1.0 / steps as f64;
            let snapshot: &Policy = policy;
            let parts: Vec<(Vec<f64>, LossTerms)> = batch
                .par_iter()
                .map(|&e| {
                    episode_gradient(
                        snapshot,
                        &buffer.episodes[e],
                        &adv.advantages[e],
                        &adv.returns[e],
                        config,
                        scale,
                    )
                })
                .collect();
            let mut grad = vec![0.0; policy.param_count()];
            let mut terms = LossTerms::default();
            for (g, t) in &parts {
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                terms.surrogate += t.surrogate;
                terms.value_loss += t.value_loss;
                terms.entropy += t.entropy;
                terms.clip_fraction += t.clip_fraction;
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !terms.loss(config).is_finite() || !norm.is_finite() {
                policy.set_params(saved.0);
                *optimizer = saved.1;
                return Err(TrainError::NonFiniteLoss);
            }
            if config.max_grad_norm > 0.0 && norm > config.max_grad_norm {
                let s = config.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            optimizer.step(policy.params_mut(), &grad);
            stats.minibatches += 1;
            stats.terms = terms;
            stats.grad_norm = norm;
        }
    }
    Ok(stats)
}

/// One row of the per-update metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub round: usize,
    pub molecule: usize,
    pub env_steps: usize,
    pub mean_return: f64,
    pub mean_score: f64,
    pub entropy: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub skipped: bool,
}

impl UpdateRecord {
    pub const CSV_HEADER: &'static str =
        "update,round,molecule,env_steps,mean_return,mean_score,entropy,surrogate,value_loss,clip_fraction,skipped";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.round,
            self.molecule,
            self.env_steps,
            self.mean_return,
            self.mean_score,
            self.entropy,
            self.surrogate,
            self.value_loss,
            self.clip_fraction,
            self.skipped
        )
    }
}

pub fn updates_csv(rows: &[UpdateRecord]) -> String {
    let mut out = String::from(UpdateRecord::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Policy, optimizer and the random stream that drives episode seeds and
/// minibatch order.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub policy: Policy,
    optimizer: Adam,
    config: TrainerConfig,
    rng: Rng,
    env_steps: usize,
    updates: usize,
}

impl Trainer {
    pub fn new(policy: Policy, config: TrainerConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let optimizer = Adam::new(policy.param_count(), config.learning_rate);
        Ok(Trainer { policy, optimizer, config, rng: rng::derive(seed, 0x7261_696e), env_steps: 0, updates: 0 })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub(crate) fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    /// Sampled episodes on molecule `i`, one per environment slot, in parallel.
    pub fn collect(&mut self, pool: &mut MoleculePool, i: usize) -> Result<RolloutBuffer, TrainError> {
        let n = self.config.episodes_per_update;
        let seeds: Vec<(u64, u64)> = (0..n).map(|_| (self.rng.next_u64(), self.rng.next_u64())).collect();
        let policy = &self.policy;
        let envs = pool.envs(i, n)?;
        let episodes = envs
            .par_iter_mut()
            .zip(seeds)
            .map(|(env, (reset, sample))| run_episode(policy, env, i, reset, ActionMode::Sample(sample)))
            .collect::<Result<Vec<_>, _>>()?;
        let buffer = RolloutBuffer { episodes };
        self.env_steps += buffer.steps();
        Ok(buffer)
    }

    /// Collects on molecule `i` and updates. Non-finite updates are skipped
    /// and flagged rather than aborting training.
    pub fn iterate(
        &mut self,
        pool: &mut MoleculePool,
        i: usize,
        round: usize,
    ) -> Result<(RolloutBuffer, UpdateRecord), TrainError> {
        let buffer = self.collect(pool, i)?;
        let adv = compute_advantages(&buffer, self.config.gamma, self.config.lambda);
        let outcome =
            ppo_update(&mut self.policy, &mut self.optimizer, &buffer, &adv, &self.config, &mut self.rng);
        let (stats, skipped) = match outcome {
            Ok(s) => (s, false),
            Err(TrainError::NonFiniteLoss) => (UpdateStats::default(), true),
            Err(e) => return Err(e),
        };
        self.updates += 1;
        let n = buffer.episodes.len() as f64;
        let record = UpdateRecord {
            update: self.updates,
            round,
            molecule: i,
            env_steps: self.env_steps,
            mean_return: buffer.episodes.iter().map(Episode::total_reward).sum::<f64>() / n,
            mean_score: buffer.episodes.iter().map(|e| e.score).sum::<f64>() / n,
            entropy: buffer.episodes.iter().map(|e| e.mean_entropy).sum::<f64>() / n,
            surrogate: stats.terms.surrogate,
            value_loss: stats.terms.value_loss,
            clip_fraction: stats.terms.clip_fraction,
            skipped,
        };
        Ok((buffer, record))
    }
}

/// Deterministic greedy rollout of `horizon` steps on a fresh environment.
pub fn greedy_rollout(
    policy: &Policy,
    graph: &MoleculeGraph,
    ff: &ForceField,
    env: EnvConfig,
    reset_seed: u64,
) -> Result<Episode, TrainError> {
    let mut e = ConformerEnv::new(graph.clone(), ff, env)?;
    run_episode(policy, &mut e, 0, reset_seed, ActionMode::Greedy)
}

/// Dedup'd Gibbs score of an episode's conformers.
pub fn episode_gibbs_score(ep: &Episode, norm: &GibbsNormalizers, threshold: f64) -> f64 {
    ep.conformer_set(norm, threshold).gibbs_score()
}
