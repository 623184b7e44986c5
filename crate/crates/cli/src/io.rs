//! Input loading, output directories and the config-vs-runtime error split.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use torsionworks::agent::AgentError;
use torsionworks::chem::{parse_smiles, MoleculeGraph};
use torsionworks::env::EnvError;
use torsionworks::search::SearchError;
use torsionworks::theory::TheoryError;
use torsionworks::trainer::TrainError;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("TORSIONWORKS_GIT_DESCRIBE"), ")");

/// Marks a failure caused by user input rather than by the computation.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

fn search_is_config(e: &SearchError) -> bool {
    matches!(e, SearchError::BudgetRefused { .. } | SearchError::EmptyBudget)
}

fn env_is_config(e: &EnvError) -> bool {
    matches!(e, EnvError::InvalidConfig(_) | EnvError::Metrics(_))
}

fn train_is_config(e: &TrainError) -> bool {
    match e {
        TrainError::InvalidConfig(_) | TrainError::Agent(AgentError::InvalidConfig(_)) => true,
        TrainError::Search(s) => search_is_config(s),
        TrainError::Env(s) => env_is_config(s),
        _ => false,
    }
}

/// Exit status for a failed run: 2 for bad configuration, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|c| {
        c.is::<ConfigError>()
            || c.downcast_ref::<SearchError>().is_some_and(search_is_config)
            || c.downcast_ref::<EnvError>().is_some_and(env_is_config)
            || c.downcast_ref::<TrainError>().is_some_and(train_is_config)
            || c.downcast_ref::<AgentError>().is_some_and(|e| matches!(e, AgentError::InvalidConfig(_)))
            || c.downcast_ref::<TheoryError>()
                .is_some_and(|e| matches!(e, TheoryError::InvalidParameter(_) | TheoryError::BadCurriculum))
    });
    if config { 2 } else { 1 }
}

pub fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))
}

/// JSON config; `None` means all defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = read_input(path)?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// A molecule file holds either graph JSON or a single SMILES string.
pub fn load_molecule(path: &Path) -> Result<MoleculeGraph> {
    let text = read_input(path)?;
    let trimmed = text.trim();
    let parsed = if trimmed.starts_with('{') {
        MoleculeGraph::from_json(trimmed)
    } else {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        parse_smiles(trimmed).map(|g| if g.name().is_empty() { g.with_name(name) } else { g })
    };
    parsed.map_err(|e| config_error(format!("molecule {}: {e}", path.display())))
}

/// Resolves `path` against the directory of the config file that named it.
pub fn relative_to(config: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(path)
    }
}

/// An output directory; every run writes `run.json` into it.
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn write_run(&self, command: &str, seed: Option<u64>, config: &impl Serialize) -> Result<()> {
        write_run_file(&self.path("run.json"), command, seed, config)
    }
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    command: &'a str,
    seed: Option<u64>,
    version: &'a str,
    config: &'a C,
}

pub fn write_run_file(path: &Path, command: &str, seed: Option<u64>, config: &impl Serialize) -> Result<()> {
    let record = RunRecord { command, seed, version: VERSION, config };
    let text = serde_json::to_string_pretty(&record).expect("run record serializes");
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Snapshot path for commands whose output is a single file: `<file>.run.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    path.with_file_name(name)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
