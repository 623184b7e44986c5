//! Baseline searches over bucketed torsions, and the exhaustive oracle.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::decode_action;
use crate::forcefield::{EnergyModel, ForceFieldError};
use crate::metrics::{dedup_by_energy, gibbs_score, ConformerRecord, GibbsNormalizers, MetricsError};
use crate::rng;

/// Largest combination count the oracle will enumerate by default.
pub const DEFAULT_ORACLE_CAP: u64 = 1_000_000;

/// Energies within this of the minimum count as ties for the oracle optimum.
pub const ORACLE_TIE_TOLERANCE: f64 = 1e-8;

/// Environment variable naming the oracle cache root.
pub const CACHE_ENV: &str = "TORSIONWORKS_CACHE";

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("oracle refused: {buckets}^{torsions} combinations exceeds the cap of {cap}")]
    BudgetRefused { buckets: usize, torsions: usize, cap: u64 },
    #[error("budget must allow at least one conformer")]
    EmptyBudget,
    #[error(transparent)]
    ForceField(#[from] ForceFieldError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("oracle cache {path}: {source}")]
    Cache { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_conformers: usize,
    pub buckets: usize,
}

impl SearchBudget {
    pub fn new(max_conformers: usize, buckets: usize) -> Self {
        SearchBudget { max_conformers, buckets }
    }
}

/// Digits of `index` in base `buckets`, most significant first, so the last
/// torsion turns fastest.
pub fn odometer(index: u64, torsions: usize, buckets: usize) -> Vec<usize> {
    let mut out = vec![0; torsions];
    let mut rest = index;
    for d in out.iter_mut().rev() {
        *d = (rest % buckets as u64) as usize;
        rest /= buckets as u64;
    }
    out
}

/// `buckets^torsions`, or `None` on overflow.
pub fn combination_count(torsions: usize, buckets: usize) -> Option<u64> {
    (0..torsions).try_fold(1u64, |acc, _| acc.checked_mul(buckets as u64))
}

/// Relaxes a bucket combination; clashes come back with infinite energy.
pub fn relax_action(model: &EnergyModel, action: &[usize], buckets: usize) -> Result<(Vec<f64>, f64), ForceFieldError> {
    let theta = decode_action(action, buckets);
    match model.minimize(&theta) {
        Ok(m) if m.report.is_finite() => Ok((m.theta, m.report.total)),
        Ok(_) | Err(ForceFieldError::NonFiniteEnergy) => Ok((theta, f64::INFINITY)),
        Err(e) => Err(e),
    }
}

fn relax_all(model: &EnergyModel, actions: &[Vec<usize>], buckets: usize) -> Result<Vec<(Vec<f64>, f64)>, ForceFieldError> {
    actions.par_iter().map(|a| relax_action(model, a, buckets)).collect()
}

/// Output of one search: every relaxed conformer with its action and
/// uniqueness flag after energy-sorted dedup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformerSet {
    pub method: String,
    pub actions: Vec<Vec<usize>>,
    pub records: Vec<ConformerRecord>,
}

#[derive(Serialize)]
struct RecordRow<'a> {
    action: &'a [usize],
    theta: &'a [f64],
    energy: Option<f64>,
    gibbs: f64,
    accepted: bool,
}

impl ConformerSet {
    /// Scores relaxed `(theta, energy)` pairs with energy-sorted dedup.
    pub fn from_relaxed(
        method: &str,
        actions: Vec<Vec<usize>>,
        relaxed: Vec<(Vec<f64>, f64)>,
        norm: &GibbsNormalizers,
        threshold: f64,
    ) -> Self {
        let raw: Vec<ConformerRecord> =
            relaxed.into_iter().map(|(t, e)| ConformerRecord::new(t, e, norm)).collect();
        ConformerSet { method: method.to_string(), actions, records: dedup_by_energy(&raw, threshold) }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn gibbs_score(&self) -> f64 {
        gibbs_score(&self.records)
    }

    pub fn best_energy(&self) -> f64 {
        self.records.iter().map(|r| r.energy).fold(f64::INFINITY, f64::min)
    }

    pub fn unique_count(&self) -> usize {
        self.records.iter().filter(|r| r.accepted).count()
    }

    /// Records as JSON; clash energies are written as `null`.
    pub fn to_json(&self) -> String {
        let rows: Vec<RecordRow> = self
            .actions
            .iter()
            .zip(&self.records)
            .map(|(a, r)| RecordRow {
                action: a,
                theta: &r.theta,
                energy: r.energy.is_finite().then_some(r.energy),
                gibbs: r.gibbs,
                accepted: r.accepted,
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({ "method": self.method, "records": rows }))
            .expect("conformer set serializes")
    }
}

/// Cycles through bucket combinations in odometer order until the budget runs out.
pub fn systematic_search(
    model: &EnergyModel,
    budget: SearchBudget,
    norm: &GibbsNormalizers,
    threshold: f64,
) -> Result<ConformerSet, SearchError> {
    if budget.max_conformers == 0 {
        return Err(SearchError::EmptyBudget);
    }
    let n = model.torsion_count();
    let total = combination_count(n, budget.buckets).unwrap_or(u64::MAX);
    let count = (budget.max_conformers as u64).min(total);
    let actions: Vec<Vec<usize>> = (0..count).map(|i| odometer(i, n, budget.buckets)).collect();
    let relaxed = relax_all(model, &actions, budget.buckets)?;
    Ok(ConformerSet::from_relaxed("systematic", actions, relaxed, norm, threshold))
}

/// Draws the first `count` uniform bucket combinations of `seed`'s stream.
/// Smaller budgets under one seed see a prefix of larger ones.
pub fn random_actions(seed: u64, torsions: usize, buckets: usize, count: usize) -> Vec<Vec<usize>> {
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| (0..torsions).map(|_| rng::uniform_index(&mut r, buckets)).collect())
        .collect()
}

/// Uniform bucket sampling with replacement.
pub fn random_search(
    model: &EnergyModel,
    budget: SearchBudget,
    seed: u64,
    norm: &GibbsNormalizers,
    threshold: f64,
) -> Result<ConformerSet, SearchError> {
    if budget.max_conformers == 0 {
        return Err(SearchError::EmptyBudget);
    }
    let actions = random_actions(seed, model.torsion_count(), budget.buckets, budget.max_conformers);
    let relaxed = relax_all(model, &actions, budget.buckets)?;
    Ok(ConformerSet::from_relaxed("random", actions, relaxed, norm, threshold))
}

/// Every bucket combination relaxed, indexed by odometer position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTable {
    pub molecule_hash: String,
    pub forcefield_hash: String,
    pub buckets: usize,
    pub torsions: usize,
    pub thetas: Vec<Vec<f64>>,
    /// `None` marks a clash.
    pub energies: Vec<Option<f64>>,
}

impl OracleTable {
    pub fn energy(&self, index: usize) -> f64 {
        self.energies[index].unwrap_or(f64::INFINITY)
    }

    /// Lowest-energy combination; near-ties go to the first in odometer
    /// (lexicographic) order.
    pub fn best(&self) -> OracleBest {
        let e_min = (0..self.energies.len()).map(|i| self.energy(i)).fold(f64::INFINITY, f64::min);
        let index = (0..self.energies.len())
            .find(|&i| self.energy(i) <= e_min + ORACLE_TIE_TOLERANCE)
            .expect("at least one combination");
        OracleBest {
            action: odometer(index as u64, self.torsions, self.buckets),
            theta: self.thetas[index].clone(),
            energy: e_min,
        }
    }

    /// Every combination within the tie tolerance of the minimum, in odometer order.
    pub fn optimal_actions(&self) -> Vec<Vec<usize>> {
        let e_min = (0..self.energies.len()).map(|i| self.energy(i)).fold(f64::INFINITY, f64::min);
        (0..self.energies.len())
            .filter(|&i| self.energy(i) <= e_min + ORACLE_TIE_TOLERANCE)
            .map(|i| odometer(i as u64, self.torsions, self.buckets))
            .collect()
    }

    /// All relaxed conformers as a scored set.
    pub fn conformer_set(&self, norm: &GibbsNormalizers, threshold: f64) -> ConformerSet {
        let actions = (0..self.energies.len())
            .map(|i| odometer(i as u64, self.torsions, self.buckets))
            .collect();
        let relaxed = (0..self.energies.len()).map(|i| (self.thetas[i].clone(), self.energy(i))).collect();
        ConformerSet::from_relaxed("oracle", actions, relaxed, norm, threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBest {
    pub action: Vec<usize>,
    pub theta: Vec<f64>,
    pub energy: f64,
}

/// Exhaustive enumeration with optional on-disk caching.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub cap: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle { cap: DEFAULT_ORACLE_CAP, cache_dir: None }
    }
}

impl Oracle {
    /// Cache root taken from the environment variable, if set.
    pub fn from_env() -> Self {
        Oracle { cache_dir: std::env::var_os(CACHE_ENV).map(PathBuf::from), ..Default::default() }
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn with_cache_dir(mut self, dir: impl AsRef<Path>) -> Self {
        self.cache_dir = Some(dir.as_ref().to_path_buf());
        self
    }

    /// Cache layout: `<root>/oracle/<molecule hash>-<force-field hash>-b<B>.json`.
    pub fn cache_path(&self, molecule_hash: &str, forcefield_hash: &str, buckets: usize) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|root| {
            root.join("oracle").join(format!("{molecule_hash}-{forcefield_hash}-b{buckets}.json"))
        })
    }

    pub fn check_cap(&self, torsions: usize, buckets: usize) -> Result<u64, SearchError> {
        match combination_count(torsions, buckets) {
            Some(c) if c <= self.cap => Ok(c),
            _ => Err(SearchError::BudgetRefused { buckets, torsions, cap: self.cap }),
        }
    }

    pub fn table(
        &self,
        model: &EnergyModel,
        molecule_hash: &str,
        forcefield_hash: &str,
        buckets: usize,
    ) -> Result<OracleTable, SearchError> {
        let n = model.torsion_count();
        let count = self.check_cap(n, buckets)?;
        let path = self.cache_path(molecule_hash, forcefield_hash, buckets);
        if let Some(p) = &path {
            if let Ok(text) = fs::read_to_string(p) {
                if let Ok(t) = serde_json::from_str::<OracleTable>(&text) {
                    if t.torsions == n && t.energies.len() as u64 == count {
                        return Ok(t);
                    }
                }
            }
        }
        let actions: Vec<Vec<usize>> = (0..count).map(|i| odometer(i, n, buckets)).collect();
        let relaxed = relax_all(model, &actions, buckets)?;
        let (thetas, energies) = relaxed
            .into_iter()
            .map(|(t, e)| (t, e.is_finite().then_some(e)))
            .unzip();
        let table = OracleTable {
            molecule_hash: molecule_hash.to_string(),
            forcefield_hash: forcefield_hash.to_string(),
            buckets,
            torsions: n,
            thetas,
            energies,
        };
        if let Some(p) = &path {
            let io = |source| SearchError::Cache { path: p.clone(), source };
            fs::create_dir_all(p.parent().expect("cache file has a parent")).map_err(io)?;
            // Write then rename so concurrent readers never see a partial file.
            let tmp = p.with_extension(format!("tmp{}", std::process::id()));
            fs::write(&tmp, serde_json::to_string(&table).expect("table serializes")).map_err(io)?;
            fs::rename(&tmp, p).map_err(io)?;
        }
        Ok(table)
    }
}

/// Normalizers from one systematic run: E0 its lowest energy, Z0 its dedup'd
/// score under E0.
pub fn reference_normalizers(
    model: &EnergyModel,
    budget: SearchBudget,
    tau: f64,
    threshold: f64,
) -> Result<GibbsNormalizers, SearchError> {
    let unit = GibbsNormalizers { e0: 0.0, z0: 1.0, tau };
    let set = systematic_search(model, budget, &unit, threshold)?;
    let energies: Vec<f64> = set.records.iter().filter(|r| r.accepted).map(|r| r.energy).collect();
    Ok(GibbsNormalizers::from_reference(&energies, tau)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, t_branched_alkane, MoleculeGraph};
    use crate::forcefield::ForceField;
    use crate::metrics::DEFAULT_PRUNE_THRESHOLD;

    fn model(g: &MoleculeGraph) -> EnergyModel {
        EnergyModel::new(g, &ForceField::default()).unwrap()
    }

    fn norm() -> GibbsNormalizers {
        GibbsNormalizers::default()
    }

    fn oracle_for(g: &MoleculeGraph) -> OracleTable {
        let ff = ForceField::default();
        Oracle::default()
            .table(&model(g), &g.content_hash(), &ff.content_hash(), 6)
            .unwrap()
    }

    #[test]
    fn odometer_order() {
        assert_eq!(odometer(0, 3, 6), vec![0, 0, 0]);
        assert_eq!(odometer(1, 3, 6), vec![0, 0, 1]);
        assert_eq!(odometer(6, 3, 6), vec![0, 1, 0]);
        assert_eq!(odometer(215, 3, 6), vec![5, 5, 5]);
        assert_eq!(odometer(0, 0, 6), Vec::<usize>::new());
        assert_eq!(combination_count(3, 6), Some(216));
        assert_eq!(combination_count(40, 6), None);
    }

    #[test]
    fn systematic_single_torsion_enumerates_all_buckets() {
        let g = parse_smiles("CCCC").unwrap();
        let set = systematic_search(&model(&g), SearchBudget::new(50, 6), &norm(), 0.1).unwrap();
        assert_eq!(set.actions, (0..6).map(|b| vec![b]).collect::<Vec<_>>());
        let first3 = systematic_search(&model(&g), SearchBudget::new(3, 6), &norm(), 0.1).unwrap();
        assert_eq!(first3.actions, vec![vec![0], vec![1], vec![2]]);
        assert!(matches!(
            systematic_search(&model(&g), SearchBudget::new(0, 6), &norm(), 0.1),
            Err(SearchError::EmptyBudget)
        ));
    }

    #[test]
    fn butane_oracle_is_min_of_six() {
        let g = parse_smiles("CCCC").unwrap();
        let m = model(&g);
        let t = oracle_for(&g);
        let direct = (0..6).map(|b| relax_action(&m, &[b], 6).unwrap().1).fold(f64::INFINITY, f64::min);
        assert_eq!(t.best().energy, direct);
        // Anti is the global minimum; bucket 1 (2π/3, eclipsed) already rolls into it.
        assert_eq!(t.best().action, vec![1]);
        assert!((t.best().theta[0] - std::f64::consts::PI).abs() < 1e-5);
    }

    #[test]
    fn zero_torsion_oracle() {
        let g = parse_smiles("CC(C)C").unwrap();
        let t = oracle_for(&g);
        assert_eq!(t.energies.len(), 1);
        assert_eq!(t.best().energy, model(&g).energy(&[]).unwrap().total);
    }

    #[test]
    fn systematic_matches_oracle_on_t3() {
        let g = t_branched_alkane(3);
        let m = model(&g);
        let t = oracle_for(&g);
        let sys = systematic_search(&m, SearchBudget::new(216, 6), &norm(), DEFAULT_PRUNE_THRESHOLD).unwrap();
        assert!((sys.best_energy() - t.best().energy).abs() <= 1e-9);
        let full = t.conformer_set(&norm(), DEFAULT_PRUNE_THRESHOLD);
        assert!((sys.gibbs_score() - full.gibbs_score()).abs() <= 1e-9);
    }

    #[test]
    fn t3_golden_optimum() {
        let best = oracle_for(&t_branched_alkane(3)).best();
        assert_eq!(best.action, GOLDEN_T3_ACTION);
        assert!((best.energy - GOLDEN_T3_ENERGY).abs() < 1e-9, "{}", best.energy);
    }

    // Frozen from the first exhaustive run; an independent internal-coordinate
    // build with scipy BFGS from all 216 starts gives -0.9462626727552307.
    const GOLDEN_T3_ACTION: [usize; 3] = [1, 1, 1];
    const GOLDEN_T3_ENERGY: f64 = -0.9462626727552315;

    #[test]
    fn oracle_refuses_large_spaces() {
        let g = t_branched_alkane(8);
        let err = Oracle::default().table(&model(&g), "x", "y", 6).unwrap_err();
        assert!(matches!(err, SearchError::BudgetRefused { torsions: 8, .. }));
        assert!(Oracle::default().with_cap(100).check_cap(3, 6).is_err());
        assert_eq!(Oracle::default().check_cap(7, 6).unwrap(), 279_936);
    }

    #[test]
    fn oracle_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = t_branched_alkane(2);
        let ff = ForceField::default();
        let oracle = Oracle::default().with_cache_dir(dir.path());
        let first = oracle.table(&model(&g), &g.content_hash(), &ff.content_hash(), 6).unwrap();
        let path = oracle.cache_path(&g.content_hash(), &ff.content_hash(), 6).unwrap();
        assert!(path.exists());
        let second = oracle.table(&model(&g), &g.content_hash(), &ff.content_hash(), 6).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn random_search_is_seeded_and_nested() {
        let g = t_branched_alkane(3);
        let m = model(&g);
        let a = random_search(&m, SearchBudget::new(40, 6), 9, &norm(), 0.1).unwrap();
        assert_eq!(a, random_search(&m, SearchBudget::new(40, 6), 9, &norm(), 0.1).unwrap());
        let one = random_search(&m, SearchBudget::new(1, 6), 9, &norm(), 0.1).unwrap();
        assert_eq!(one.len(), 1);
        let mut last = 0.0;
        for n in [1, 5, 10, 20, 40] {
            let s = random_search(&m, SearchBudget::new(n, 6), 9, &norm(), 0.1).unwrap();
            assert_eq!(s.actions[..], a.actions[..n]);
            assert!(s.gibbs_score() >= last - 1e-12);
            last = s.gibbs_score();
        }
    }

    #[test]
    fn oracle_bounds_other_methods() {
        for t in 1..=3 {
            let g = t_branched_alkane(t);
            let m = model(&g);
            let best = oracle_for(&g).best().energy;
            let r = random_search(&m, SearchBudget::new(30, 6), 1, &norm(), 0.1).unwrap();
            let s = systematic_search(&m, SearchBudget::new(30, 6), &norm(), 0.1).unwrap();
            assert!(best <= r.best_energy() + 1e-12 && best <= s.best_energy() + 1e-12);
        }
    }

    #[test]
    fn full_systematic_dominates_partial() {
        let g = t_branched_alkane(2);
        let m = model(&g);
        let full = systematic_search(&m, SearchBudget::new(36, 6), &norm(), 0.1).unwrap().gibbs_score();
        for n in 1..36 {
            let part = systematic_search(&m, SearchBudget::new(n, 6), &norm(), 0.1).unwrap();
            assert!(full >= part.gibbs_score() - 1e-12);
        }
    }

    #[test]
    fn reference_normalizers_make_the_reference_run_score_one() {
        let g = t_branched_alkane(2);
        let m = model(&g);
        let budget = SearchBudget::new(36, 6);
        let n = reference_normalizers(&m, budget, 500.0, 0.1).unwrap();
        let set = systematic_search(&m, budget, &n, 0.1).unwrap();
        assert!((set.gibbs_score() - 1.0).abs() < 1e-12);
        assert_eq!(set.best_energy(), n.e0);
    }

    #[test]
    fn conformer_set_json_marks_clashes_null() {
        let g = parse_smiles("CCCC").unwrap();
        let set = systematic_search(&model(&g), SearchBudget::new(6, 6), &norm(), 0.1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&set.to_json()).unwrap();
        assert_eq!(v["records"].as_array().unwrap().len(), 6);
        assert_eq!(v["method"], "systematic");
    }
}
