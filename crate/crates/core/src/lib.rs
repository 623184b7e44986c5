//! Torsion-space conformer search: molecule graphs, a torsional force field,
//! Gibbs-score metrics, a conformer environment, search baselines, a graph
//! policy trained with PPO, and sample-complexity experiments.

pub mod chem;
pub mod rng;
pub mod geometry;
pub mod forcefield;
pub mod metrics;
pub mod env;
pub mod search;
pub mod agent;
pub mod trainer;
pub mod theory;

pub use agent::{AgentConfig, AgentError, Policy};
pub use chem::{parse_smiles, t_branched_alkane, ChemError, MoleculeGraph, TorsionQuad};
pub use env::{ConformerEnv, EnvConfig, EnvError, RewardMode};
pub use forcefield::{EnergyModel, EnergyReport, ForceField, ForceFieldError};
pub use geometry::{Coordinates, GeometryError};
pub use metrics::{ConformerRecord, GibbsNormalizers, MetricsError};
pub use search::{ConformerSet, Oracle, SearchBudget, SearchError};
pub use theory::TheoryError;
pub use trainer::{TrainError, Trainer, TrainerConfig};
