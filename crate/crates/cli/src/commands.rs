use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use torsionworks::agent::{AgentConfig, Policy};
use torsionworks::chem::{generate_branched_alkane, t_branched_alkane, MoleculeGraph};
use torsionworks::env::{ConformerEnv, EnvConfig, RewardMode, DEFAULT_BUCKETS};
use torsionworks::forcefield::{EnergyModel, ForceField};
use torsionworks::metrics::{correlation_matrix, GibbsNormalizers, DEFAULT_PRUNE_THRESHOLD, DEFAULT_TEMPERATURE};
use torsionworks::search::{
    random_search, reference_normalizers, systematic_search, ConformerSet, Oracle, SearchBudget,
};
use torsionworks::theory::{
    bandit_curriculum, coupon_collector_sim, lock_experiment, CouponReport, RadiusSchedule,
};
use torsionworks::trainer::{
    run_curriculum, run_episode, sort_curriculum, transfer_experiment, updates_csv, ActionMode, AlkaneSetSpec,
    CurriculumConfig, MoleculePool, Trainer, TrainerConfig, TrainingMolecule, TransferConfig,
};

use crate::io::{
    config_error, load_config, load_molecule, read_input, relative_to, sidecar, write_file, write_run_file,
    OutputDir,
};

/// Budget of the systematic run that fixes E0 and Z0 when none are given.
pub const REFERENCE_BUDGET: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Systematic,
    Random,
    Agent,
    Oracle,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Systematic => "systematic",
            Method::Random => "random",
            Method::Agent => "agent",
            Method::Oracle => "oracle",
        }
    }
}

pub fn generate(graph: MoleculeGraph, out: &Path, params: &impl Serialize) -> Result<()> {
    write_file(out, graph.to_json() + "\n")?;
    write_run_file(&sidecar(out), "generate", None, params)?;
    eprintln!("{}: {} atoms, {} torsions", graph.name(), graph.atom_count(), graph.torsion_count());
    Ok(())
}

pub fn generate_alkane(seed: u64, atoms: usize) -> Result<MoleculeGraph> {
    if atoms == 0 {
        return Err(config_error("--atoms must be at least 1"));
    }
    Ok(generate_branched_alkane(seed, atoms))
}

pub fn generate_t_alkane(t: usize) -> Result<MoleculeGraph> {
    if t == 0 {
        return Err(config_error("--t must be at least 1"));
    }
    Ok(t_branched_alkane(t))
}

/// Normalizers from a file, or from a reference systematic run.
fn normalizers(model: &EnergyModel, path: Option<&Path>) -> Result<GibbsNormalizers> {
    match path {
        Some(p) => {
            let n: GibbsNormalizers = serde_json::from_str(&read_input(p)?)
                .map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            n.validate().map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            Ok(n)
        }
        None => Ok(reference_normalizers(
            model,
            SearchBudget::new(REFERENCE_BUDGET, DEFAULT_BUCKETS),
            DEFAULT_TEMPERATURE,
            DEFAULT_PRUNE_THRESHOLD,
        )?),
    }
}

fn load_policy(path: Option<&Path>) -> Result<Option<Policy>> {
    path.map(|p| {
        let text = read_input(p)?;
        Policy::from_checkpoint_json(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))
    })
    .transpose()
}

struct Searcher<'a> {
    graph: &'a MoleculeGraph,
    ff: &'a ForceField,
    model: EnergyModel,
    norm: GibbsNormalizers,
    policy: Option<Policy>,
    oracle: Oracle,
}

impl Searcher<'_> {
    /// One run; the agent also returns its JSONL episode log.
    fn run(&self, method: Method, budget: usize, seed: u64) -> Result<(ConformerSet, Option<Vec<u8>>)> {
        let b = SearchBudget::new(budget, DEFAULT_BUCKETS);
        let thr = DEFAULT_PRUNE_THRESHOLD;
        Ok(match method {
            Method::Systematic => (systematic_search(&self.model, b, &self.norm, thr)?, None),
            Method::Random => (random_search(&self.model, b, seed, &self.norm, thr)?, None),
            Method::Oracle => {
                let table = self.oracle.table(
                    &self.model,
                    &self.graph.content_hash(),
                    &self.ff.content_hash(),
                    DEFAULT_BUCKETS,
                )?;
                (table.conformer_set(&self.norm, thr), None)
            }
            Method::Agent => {
                let policy = self.policy.as_ref().ok_or_else(|| config_error("--method agent needs --checkpoint"))?;
                if budget == 0 {
                    return Err(config_error("--budget must be at least 1"));
                }
                let config = EnvConfig {
                    horizon: budget,
                    prune_threshold: thr,
                    reward_mode: RewardMode::Pruned,
                    buckets: policy.config().buckets,
                    normalizers: self.norm,
                };
                let mut env = ConformerEnv::new(self.graph.clone(), self.ff, config)?;
                let ep = run_episode(policy, &mut env, 0, seed, ActionMode::Greedy)?;
                let mut log = Vec::new();
                env.write_log(&mut log)?;
                let mut set = ep.conformer_set(&self.norm, thr);
                set.method = "agent".into();
                (set, Some(log))
            }
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchParams {
    pub method: Method,
    pub molecule: PathBuf,
    pub budget: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub normalizers: Option<PathBuf>,
    pub oracle_cap: u64,
}

const SUMMARY_HEADER: &str = "method,budget,seed,conformers,unique,gibbs_score,best_energy";

pub fn search(p: &SearchParams, out: &Path) -> Result<()> {
    let graph = load_molecule(&p.molecule)?;
    let ff = ForceField::default();
    let oracle = Oracle::from_env().with_cap(p.oracle_cap);
    if p.method == Method::Oracle {
        // Refuse before spending time on normalizers.
        oracle.check_cap(graph.torsion_count(), DEFAULT_BUCKETS)?;
    }
    let model = EnergyModel::new(&graph, &ff)?;
    let norm = normalizers(&model, p.normalizers.as_deref())?;
    let policy = load_policy(p.checkpoint.as_deref())?;
    let searcher = Searcher { graph: &graph, ff: &ff, model, norm, policy, oracle };
    let (set, log) = searcher.run(p.method, p.budget, p.seed)?;
    let dir = OutputDir::create(out)?;
    dir.write_run(&format!("search {}", p.method.name()), Some(p.seed), p)?;
    dir.write("normalizers.json", norm.to_json() + "\n")?;
    dir.write("conformers.json", set.to_json() + "\n")?;
    if let Some(log) = log {
        dir.write("episode.jsonl", log)?;
    }
    let summary = format!(
        "{SUMMARY_HEADER}\n{},{},{},{},{},{},{}\n",
        p.method.name(),
        p.budget,
        p.seed,
        set.len(),
        set.unique_count(),
        set.gibbs_score(),
        set.best_energy()
    );
    dir.write("summary.csv", &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn normalize(molecule: &Path, budget: usize, out: &Path) -> Result<()> {
    let graph = load_molecule(molecule)?;
    let model = EnergyModel::new(&graph, &ForceField::default())?;
    let norm = reference_normalizers(
        &model,
        SearchBudget::new(budget, DEFAULT_BUCKETS),
        DEFAULT_TEMPERATURE,
        DEFAULT_PRUNE_THRESHOLD,
    )?;
    write_file(out, norm.to_json() + "\n")?;
    write_run_file(
        &sidecar(out),
        "normalize",
        None,
        &serde_json::json!({ "molecule": molecule, "budget": budget }),
    )?;
    println!("e0={} z0={} tau={}", norm.e0, norm.z0, norm.tau);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareParams {
    pub molecule: PathBuf,
    pub budget: usize,
    pub runs: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub normalizers: Option<PathBuf>,
    pub oracle_cap: u64,
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Every method at one budget over `runs` seeds. Scores go to `compare.csv`;
/// wall times, which are never reproducible, go to `timing.csv`.
pub fn compare(p: &CompareParams, out: &Path) -> Result<()> {
    if p.runs == 0 {
        return Err(config_error("--runs must be at least 1"));
    }
    let graph = load_molecule(&p.molecule)?;
    let ff = ForceField::default();
    let model = EnergyModel::new(&graph, &ff)?;
    let norm = normalizers(&model, p.normalizers.as_deref())?;
    let policy = load_policy(p.checkpoint.as_deref())?;
    // No cache: timing rows should measure the enumeration itself.
    let oracle = Oracle { cap: p.oracle_cap, cache_dir: None };
    let oracle_ok = oracle.check_cap(graph.torsion_count(), DEFAULT_BUCKETS).is_ok();
    let mut methods = vec![Method::Systematic, Method::Random];
    if policy.is_some() {
        methods.push(Method::Agent);
    }
    if oracle_ok {
        methods.push(Method::Oracle);
    } else {
        eprintln!("oracle row skipped: enumeration exceeds the cap of {}", p.oracle_cap);
    }
    let searcher = Searcher { graph: &graph, ff: &ff, model, norm, policy, oracle };
    let mut scores = String::from(
        "method,runs,budget,mean_score,stderr_score,mean_unique,mean_best_energy,min_best_energy\n",
    );
    let mut timing = String::from("method,runs,mean_seconds,stderr_seconds\n");
    for m in methods {
        let mut s = Vec::with_capacity(p.runs);
        let mut unique = Vec::with_capacity(p.runs);
        let mut best = Vec::with_capacity(p.runs);
        let mut secs = Vec::with_capacity(p.runs);
        for r in 0..p.runs {
            let start = Instant::now();
            let (set, _) = searcher.run(m, p.budget, p.seed + r as u64)?;
            secs.push(start.elapsed().as_secs_f64());
            s.push(set.gibbs_score());
            unique.push(set.unique_count() as f64);
            best.push(set.best_energy());
        }
        let (ms, ss) = mean_and_stderr(&s);
        let budget = if m == Method::Oracle { set_size(&graph) } else { p.budget as u64 };
        scores.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.name(),
            p.runs,
            budget,
            ms,
            ss,
            mean_and_stderr(&unique).0,
            mean_and_stderr(&best).0,
            best.iter().copied().fold(f64::INFINITY, f64::min)
        ));
        let (mt, st) = mean_and_stderr(&secs);
        timing.push_str(&format!("{},{},{},{}\n", m.name(), p.runs, mt, st));
    }
    let dir = OutputDir::create(out)?;
    dir.write_run("compare", Some(p.seed), p)?;
    dir.write("normalizers.json", norm.to_json() + "\n")?;
    dir.write("compare.csv", &scores)?;
    dir.write("timing.csv", &timing)?;
    print!("{scores}");
    Ok(())
}

fn set_size(g: &MoleculeGraph) -> u64 {
    (DEFAULT_BUCKETS as u64).pow(g.torsion_count() as u32)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub seed: u64,
    /// Molecule files, relative to the config file. Empty means `alkane_set`.
    pub molecules: Vec<PathBuf>,
    pub alkane_set: AlkaneSetSpec,
    /// Episode length for every molecule; by default it scales with torsions.
    pub horizon: Option<usize>,
    pub reward_mode: RewardMode,
    pub reference_budget: usize,
    pub agent: AgentConfig,
    pub trainer: TrainerConfig,
    pub curriculum: CurriculumConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            seed: 0,
            molecules: Vec::new(),
            alkane_set: AlkaneSetSpec::default(),
            horizon: None,
            reward_mode: RewardMode::Pruned,
            reference_budget: REFERENCE_BUDGET,
            agent: AgentConfig::default(),
            trainer: TrainerConfig::default(),
            curriculum: CurriculumConfig::default(),
        }
    }
}

pub fn train(config_path: &Path, out: &Path) -> Result<()> {
    let config: TrainRunConfig = load_config(Some(config_path))?;
    if config.reference_budget == 0 {
        return Err(config_error("reference_budget must be at least 1"));
    }
    if config.horizon == Some(0) {
        return Err(config_error("horizon must be at least 1"));
    }
    let graphs = if config.molecules.is_empty() {
        config.alkane_set.build()?
    } else {
        config
            .molecules
            .iter()
            .map(|p| load_molecule(&relative_to(config_path, p)))
            .collect::<Result<Vec<_>>>()?
    };
    let ff = ForceField::default();
    let mut molecules = graphs
        .into_iter()
        .map(|g| {
            let m = TrainingMolecule::prepare(g, &ff, config.reward_mode, config.reference_budget)?;
            Ok(match config.horizon {
                Some(h) => m.with_horizon(h),
                None => m,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_curriculum(&mut molecules);
    let mut manifest = String::from("index,name,hash,atoms,torsions,horizon,e0,z0,reference_score\n");
    for (i, m) in molecules.iter().enumerate() {
        manifest.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{}\n",
            m.graph.name(),
            m.graph.content_hash(),
            m.graph.atom_count(),
            m.graph.torsion_count(),
            m.env.horizon,
            m.env.normalizers.e0,
            m.env.normalizers.z0,
            m.reference_score
        ));
    }
    let policy = Policy::new(config.agent, config.seed)?;
    let mut trainer = Trainer::new(policy, config.trainer.clone(), config.seed)?;
    let mut pool = MoleculePool::new(molecules, &ff)?;
    let dir = OutputDir::create(out)?;
    dir.write_run("train", Some(config.seed), &config)?;
    dir.write("molecules.csv", &manifest)?;
    let report = run_curriculum(&mut trainer, &mut pool, &config.curriculum)?;
    let mut rounds = String::from("round,active,env_steps,threshold_reached\n");
    for r in &report.rounds {
        rounds.push_str(&format!("{},{},{},{}\n", r.round, r.active, r.env_steps, r.threshold_reached));
        dir.write(&format!("checkpoints/round-{}.json", r.round), r.checkpoint.to_checkpoint_json())?;
    }
    dir.write("rounds.csv", &rounds)?;
    dir.write("updates.csv", updates_csv(&report.updates))?;
    dir.write("policy.json", trainer.policy.to_checkpoint_json())?;
    eprintln!("{} rounds, {} updates, {} environment steps", report.rounds.len(), trainer.updates(), trainer.env_steps());
    Ok(())
}

pub fn transfer(config_path: &Path, out: &Path, oracle_cap: u64) -> Result<()> {
    let config: TransferConfig = load_config(Some(config_path))?;
    let ff = ForceField::default();
    let oracle = Oracle::from_env().with_cap(oracle_cap);
    let result = transfer_experiment(&config, &ff, &oracle)?;
    let dir = OutputDir::create(out)?;
    dir.write_run("transfer", None, &config)?;
    let csv = result.to_csv();
    dir.write("transfer.csv", &csv)?;
    dir.write("transfer.json", serde_json::to_string_pretty(&result).expect("result serializes") + "\n")?;
    print!("{csv}");
    Ok(())
}

#[derive(Deserialize)]
struct LogLine {
    theta: Vec<f64>,
}

pub fn correlation(episodes: &Path, out: &Path) -> Result<()> {
    let text = read_input(episodes)?;
    let samples = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<LogLine>(l)
                .map(|r| r.theta)
                .map_err(|e| config_error(format!("{} line {}: {e}", episodes.display(), i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = correlation_matrix(&samples).map_err(|e| config_error(format!("{}: {e}", episodes.display())))?;
    write_file(out, matrix.to_csv())?;
    write_run_file(&sidecar(out), "analyze correlation", None, &serde_json::json!({ "episodes": episodes }))?;
    print!("{}", matrix.to_csv());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub delta: f64,
    pub constant: f64,
}

impl Default for LockConfig {
    fn default() -> Self {
        LockConfig { sizes: vec![4, 6, 8, 10, 12], trials: 50, seed: 0, delta: 0.1, constant: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouponConfig {
    pub sizes: Vec<usize>,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub constant: f64,
}

impl Default for CouponConfig {
    fn default() -> Self {
        CouponConfig { sizes: vec![2, 10, 100], delta: 0.1, trials: 1000, seed: 0, constant: 3.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub max_t: usize,
    pub schedule: RadiusSchedule,
    pub seed: u64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig { max_t: 5, schedule: RadiusSchedule::Measured, seed: 0 }
    }
}

pub fn theory_lock(config_path: Option<&Path>, out: &Path) -> Result<()> {
    let c: LockConfig = load_config(config_path)?;
    let report = lock_experiment(&c.sizes, c.trials, c.seed, c.delta, c.constant)?;
    let dir = OutputDir::create(out)?;
    dir.write_run("theory lock", Some(c.seed), &c)?;
    dir.write("lock.csv", report.to_csv())?;
    let summary = format!(
        "curriculum_loglog_slope,flat_growth_factor\n{},{}\n",
        report.curriculum_loglog_slope, report.flat_growth_factor
    );
    dir.write("lock_summary.csv", &summary)?;
    print!("{}{summary}", report.to_csv());
    Ok(())
}

pub fn theory_coupon(config_path: Option<&Path>, out: &Path) -> Result<()> {
    let c: CouponConfig = load_config(config_path)?;
    let mut csv = format!("{}\n", CouponReport::CSV_HEADER);
    for &n in &c.sizes {
        csv.push_str(&coupon_collector_sim(n, c.delta, c.trials, c.seed, c.constant)?.csv_row());
        csv.push('\n');
    }
    let dir = OutputDir::create(out)?;
    dir.write_run("theory coupon", Some(c.seed), &c)?;
    dir.write("coupon.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn theory_bandit(config_path: Option<&Path>, out: &Path, oracle_cap: u64) -> Result<()> {
    let c: BanditConfig = load_config(config_path)?;
    if c.max_t == 0 {
        return Err(config_error("max_t must be at least 1"));
    }
    let ff = ForceField::default();
    let oracle = Oracle::from_env().with_cap(oracle_cap);
    let tables = (1..=c.max_t)
        .map(|t| {
            let g = t_branched_alkane(t);
            let model = EnergyModel::new(&g, &ff)?;
            oracle
                .table(&model, &g.content_hash(), &ff.content_hash(), DEFAULT_BUCKETS)
                .with_context(|| format!("oracle for the {t}-torsion alkane"))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = bandit_curriculum(&tables, &c.schedule, c.seed)?;
    let dir = OutputDir::create(out)?;
    dir.write_run("theory bandit", Some(c.seed), &c)?;
    dir.write("bandit.csv", report.to_csv())?;
    let summary =
        format!("total_samples,flat_samples\n{},{}\n", report.total_samples, report.flat_samples);
    dir.write("bandit_summary.csv", &summary)?;
    print!("{}{summary}", report.to_csv());
    Ok(())
}
