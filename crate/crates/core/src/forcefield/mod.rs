//! United-atom alkane potential over torsion space.
//!
//! Energy is a three-term cosine series per rotatable bond plus 12-6
//! Lennard-Jones between atoms separated by at least `min_path` bonds.
//! Coordinates come from the rigid-rotor builder, so the gradient with respect
//! to torsion `k` is the torque of the Cartesian forces on the fragment that
//! torsion carries.

pub mod lbfgs;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{hex_digest, Element, MoleculeGraph};
use crate::geometry::{wrap_angle, Coordinates, GeometryError, RigidRotor, Vec3};

pub use lbfgs::{LbfgsConfig, MinimizeStatus};

/// Pairs closer than this are a steric catastrophe with infinite energy.
pub const CLASH_DISTANCE: f64 = 0.1;

const DEFAULT_PARAMS: &str = include_str!("../../data/forcefield.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForceFieldError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("non-finite energy (atoms closer than {CLASH_DISTANCE} Å)")]
    NonFiniteEnergy,
    #[error("invalid force-field parameters: {0}")]
    InvalidParams(String),
    #[error("no {kind} parameters for {key}")]
    MissingParameter { kind: &'static str, key: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsionParams {
    /// Element quadruple such as `C-C-C-C`; `X` matches any element.
    pub class: String,
    /// Fourier amplitudes in kcal/mol for periodicities 1, 2, 3.
    pub v: [f64; 3],
    pub gamma: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LjParams {
    /// Element pair such as `C-C`.
    pub pair: String,
    pub epsilon: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceField {
    pub name: String,
    pub torsions: Vec<TorsionParams>,
    pub lj: Vec<LjParams>,
    /// Smallest bond-path separation that receives a nonbonded term.
    pub min_path: usize,
}

impl Default for ForceField {
    fn default() -> Self {
        ForceField::from_json(DEFAULT_PARAMS).expect("bundled parameters are valid")
    }
}

impl ForceField {
    pub fn from_json(text: &str) -> Result<Self, ForceFieldError> {
        let ff: ForceField =
            serde_json::from_str(text).map_err(|e| ForceFieldError::InvalidParams(e.to_string()))?;
        ff.validate()?;
        Ok(ff)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters serialize")
    }

    fn validate(&self) -> Result<(), ForceFieldError> {
        for p in &self.lj {
            if !(p.epsilon > 0.0 && p.sigma > 0.0) {
                return Err(ForceFieldError::InvalidParams(format!(
                    "LJ pair {} needs epsilon > 0 and sigma > 0",
                    p.pair
                )));
            }
        }
        for t in &self.torsions {
            if t.class.split('-').count() != 4 {
                return Err(ForceFieldError::InvalidParams(format!("bad torsion class {}", t.class)));
            }
            if t.v.iter().chain(&t.gamma).any(|x| !x.is_finite()) {
                return Err(ForceFieldError::InvalidParams(format!("non-finite term in {}", t.class)));
            }
        }
        if self.min_path == 0 {
            return Err(ForceFieldError::InvalidParams("min_path must be positive".into()));
        }
        Ok(())
    }

    /// Stable fingerprint of the parameter set, used to key caches.
    pub fn content_hash(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("parameters serialize").as_bytes())
    }

    fn torsion_for(&self, quad: [Element; 4]) -> Result<&TorsionParams, ForceFieldError> {
        let sym = quad.map(Element::symbol);
        let matches = |class: &str, order: &[&str; 4]| {
            class.split('-').zip(order).all(|(c, s)| c == "X" || c == *s)
        };
        let exact = |class: &str, order: &[&str; 4]| class.split('-').zip(order).all(|(c, s)| c == *s);
        let mut rev = sym;
        rev.reverse();
        self.torsions
            .iter()
            .find(|t| exact(&t.class, &sym) || exact(&t.class, &rev))
            .or_else(|| self.torsions.iter().find(|t| matches(&t.class, &sym) || matches(&t.class, &rev)))
            .ok_or_else(|| ForceFieldError::MissingParameter { kind: "torsion", key: sym.join("-") })
    }

    /// (epsilon, sigma) for an element pair; unlisted mixed pairs use
    /// Lorentz-Berthelot combining of the like pairs.
    pub fn lj_for(&self, a: Element, b: Element) -> Result<(f64, f64), ForceFieldError> {
        let find = |x: Element, y: Element| {
            let fwd = format!("{}-{}", x.symbol(), y.symbol());
            let rev = format!("{}-{}", y.symbol(), x.symbol());
            self.lj.iter().find(|p| p.pair == fwd || p.pair == rev).map(|p| (p.epsilon, p.sigma))
        };
        if let Some(p) = find(a, b) {
            return Ok(p);
        }
        match (find(a, a), find(b, b)) {
            (Some((ea, sa)), Some((eb, sb))) => Ok(((ea * eb).sqrt(), 0.5 * (sa + sb))),
            _ => Err(ForceFieldError::MissingParameter {
                kind: "LJ",
                key: format!("{}-{}", a.symbol(), b.symbol()),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    pub torsional: f64,
    pub nonbonded: f64,
    /// Set when some pair sits inside the clash distance; `total` is then +∞.
    pub clash: bool,
}

impl EnergyReport {
    pub fn is_finite(&self) -> bool {
        !self.clash && self.total.is_finite()
    }
}

#[derive(Debug, Clone, Copy)]
struct LjPair {
    i: usize,
    j: usize,
    four_eps: f64,
    sigma: f64,
}

/// Energy surface of one molecule under one parameter set.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    rotor: RigidRotor,
    terms: Vec<([f64; 3], [f64; 3])>,
    pairs: Vec<LjPair>,
    config: LbfgsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimized {
    /// Local minimum, wrapped to `[0, 2π)`.
    pub theta: Vec<f64>,
    pub report: EnergyReport,
    pub status: MinimizeStatus,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl EnergyModel {
    pub fn new(g: &MoleculeGraph, ff: &ForceField) -> Result<Self, ForceFieldError> {
        let rotor = RigidRotor::new(g)?;
        let elements: Vec<Element> = g.atoms().iter().map(|a| a.element).collect();
        let terms = g
            .torsions()
            .iter()
            .map(|t| {
                let quad = t.atoms().map(|i| elements[i]);
                ff.torsion_for(quad).map(|p| (p.v, p.gamma))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let paths = g.path_lengths();
        let mut cache = BTreeMap::new();
        let mut pairs = Vec::new();
        for i in 0..elements.len() {
            for j in i + 1..elements.len() {
                if paths[i][j] < ff.min_path {
                    continue;
                }
                let (a, b) = (elements[i], elements[j]);
                let key = if a.symbol() <= b.symbol() { (a.symbol(), b.symbol()) } else { (b.symbol(), a.symbol()) };
                let (eps, sigma) = match cache.get(&key) {
                    Some(&p) => p,
                    None => {
                        let p = ff.lj_for(a, b)?;
                        cache.insert(key, p);
                        p
                    }
                };
                pairs.push(LjPair { i, j, four_eps: 4.0 * eps, sigma });
            }
        }
        Ok(EnergyModel { rotor, terms, pairs, config: LbfgsConfig::default() })
    }

    pub fn with_config(mut self, config: LbfgsConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> &LbfgsConfig {
        &self.config
    }

    pub fn rotor(&self) -> &RigidRotor {
        &self.rotor
    }

    pub fn torsion_count(&self) -> usize {
        self.terms.len()
    }

    pub fn nonbonded_pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn coordinates(&self, theta: &[f64]) -> Result<Coordinates, ForceFieldError> {
        Ok(self.rotor.build(theta)?)
    }

    fn torsional(&self, theta: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(theta)
            .map(|((v, gamma), &t)| {
                (0..3)
                    .map(|m| 0.5 * v[m] * (1.0 + ((m + 1) as f64 * t - gamma[m]).cos()))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Nonbonded energy, or `None` on a clash.
    fn nonbonded(&self, c: &Coordinates) -> Option<f64> {
        let mut total = 0.0;
        for p in &self.pairs {
            let r = c.distance(p.i, p.j);
            if r < CLASH_DISTANCE {
                return None;
            }
            let s6 = (p.sigma / r).powi(6);
            total += p.four_eps * (s6 * s6 - s6);
        }
        Some(total)
    }

    pub fn energy(&self, theta: &[f64]) -> Result<EnergyReport, ForceFieldError> {
        let c = self.coordinates(theta)?;
        let torsional = self.torsional(theta);
        Ok(match self.nonbonded(&c) {
            Some(nonbonded) => {
                EnergyReport { total: torsional + nonbonded, torsional, nonbonded, clash: false }
            }
            None => EnergyReport {
                total: f64::INFINITY,
                torsional,
                nonbonded: f64::INFINITY,
                clash: true,
            },
        })
    }

    /// Energy and its gradient with respect to every torsion angle.
    pub fn energy_and_gradient(
        &self,
        theta: &[f64],
    ) -> Result<(EnergyReport, Vec<f64>), ForceFieldError> {
        let c = self.coordinates(theta)?;
        let torsional = self.torsional(theta);
        let mut grad: Vec<f64> = self
            .terms
            .iter()
            .zip(theta)
            .map(|((v, gamma), &t)| {
                (0..3)
                    .map(|m| {
                        let k = (m + 1) as f64;
                        -0.5 * v[m] * k * (k * t - gamma[m]).sin()
                    })
                    .sum()
            })
            .collect();

        // dE/dr for every atom.
        let mut force = vec![Vec3::zeros(); c.len()];
        let mut nonbonded = 0.0;
        for p in &self.pairs {
            let d = c.0[p.i] - c.0[p.j];
            let r = d.norm();
            if r < CLASH_DISTANCE {
                return Err(ForceFieldError::NonFiniteEnergy);
            }
            let s6 = (p.sigma / r).powi(6);
            nonbonded += p.four_eps * (s6 * s6 - s6);
            let de_dr = p.four_eps * (-12.0 * s6 * s6 + 6.0 * s6) / r;
            let f = d * (de_dr / r);
            force[p.i] += f;
            force[p.j] -= f;
        }

        for (k, gk) in grad.iter_mut().enumerate() {
            let t = self.rotor.torsions()[k];
            let pivot = c.0[t.b3];
            let axis = (c.0[t.b3] - c.0[t.b2]).normalize();
            let torque = self
                .rotor
                .moving_atoms(k)
                .iter()
                .fold(Vec3::zeros(), |acc, &a| acc + (c.0[a] - pivot).cross(&force[a]));
            *gk += axis.dot(&torque);
        }

        let report = EnergyReport { total: torsional + nonbonded, torsional, nonbonded, clash: false };
        Ok((report, grad))
    }

    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>, ForceFieldError> {
        self.energy_and_gradient(theta).map(|(_, g)| g)
    }

    /// Relaxes `theta0` to the nearest local minimum in torsion space.
    pub fn minimize(&self, theta0: &[f64]) -> Result<Minimized, ForceFieldError> {
        let start = self.energy(theta0)?;
        if !start.is_finite() {
            return Err(ForceFieldError::NonFiniteEnergy);
        }
        let out = lbfgs::minimize(theta0, &self.config, |x| {
            self.energy_and_gradient(x).ok().map(|(r, g)| (r.total, g))
        })
        .ok_or(ForceFieldError::NonFiniteEnergy)?;
        let report = self.energy(&out.x)?;
        Ok(Minimized {
            theta: out.x.iter().map(|&t| wrap_angle(t)).collect(),
            report,
            status: out.status,
            iterations: out.iterations,
            gradient_norm: lbfgs::inf_norm(&out.gradient),
        })
    }
}

/// Energy under the bundled parameters.
pub fn energy(g: &MoleculeGraph, theta: &[f64]) -> Result<EnergyReport, ForceFieldError> {
    EnergyModel::new(g, &ForceField::default())?.energy(theta)
}

/// Gradient under the bundled parameters.
pub fn energy_gradient(g: &MoleculeGraph, theta: &[f64]) -> Result<Vec<f64>, ForceFieldError> {
    EnergyModel::new(g, &ForceField::default())?.gradient(theta)
}

/// Local relaxation under the bundled parameters.
pub fn minimize(g: &MoleculeGraph, theta0: &[f64]) -> Result<Minimized, ForceFieldError> {
    EnergyModel::new(g, &ForceField::default())?.minimize(theta0)
}
