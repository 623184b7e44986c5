//! Molecular graphs with implicit hydrogens.
//!
//! A [`MoleculeGraph`] is an acyclic heavy-atom graph together with its list of
//! rotatable torsions. A bond is rotatable iff both endpoints have at least two
//! heavy neighbors, which leaves out the three-fold symmetric terminal methyl
//! rotations. Torsions are sorted by their central bond `(b2, b3)` with
//! `b2 < b3`, and the reference atoms `b1`/`b4` are the lowest-index neighbors
//! on each side.

mod generate;
mod smiles;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use generate::{generate_branched_alkane, t_branched_alkane, GENERATOR_ID};
pub use smiles::parse_smiles;

/// Maximum number of bonded neighbors of any heavy atom.
pub const MAX_VALENCE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChemError {
    #[error("unsupported SMILES token {token:?} at position {position}")]
    UnsupportedToken { token: char, position: usize },
    #[error("unbalanced parentheses at position {position}")]
    UnbalancedParens { position: usize },
    #[error("atom {atom} exceeds valence {MAX_VALENCE}")]
    ValenceExceeded { atom: usize },
    #[error("empty molecule")]
    Empty,
    #[error("bond ({0}, {1}) references a missing atom")]
    BadBondIndex(usize, usize),
    #[error("duplicate or self bond ({0}, {1})")]
    BadBond(usize, usize),
    #[error("atom {0} has index field {1}")]
    BadAtomIndex(usize, usize),
    #[error("molecular graph is disconnected")]
    Disconnected,
    #[error("molecular graph contains a ring")]
    Cyclic,
    #[error("torsion list does not match the rotatable bonds of the graph")]
    TorsionMismatch,
    #[error("molecule JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Element {
    C,
    O,
}

impl Element {
    /// One-hot encoding over `[C, O]`.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Element::C => [1.0, 0.0],
            Element::O => [0.0, 1.0],
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::O => "O",
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    #[default]
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self as usize] = 1.0;
        v
    }
}

/// Width of the bond feature vector: order one-hot, conjugated, ringed.
pub const EDGE_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    #[serde(default)]
    pub order: BondOrder,
    #[serde(default)]
    pub conjugated: bool,
    #[serde(default)]
    pub ringed: bool,
}

impl Bond {
    pub fn single(i: usize, j: usize) -> Self {
        Bond { i, j, order: BondOrder::Single, conjugated: false, ringed: false }
    }

    pub fn features(&self) -> [f64; EDGE_FEATURES] {
        let o = self.order.one_hot();
        [
            o[0],
            o[1],
            o[2],
            o[3],
            f64::from(u8::from(self.conjugated)),
            f64::from(u8::from(self.ringed)),
        ]
    }
}

/// Four consecutively bonded atoms; the dihedral rotates about `b2 -> b3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct TorsionQuad {
    pub b1: usize,
    pub b2: usize,
    pub b3: usize,
    pub b4: usize,
}

impl TorsionQuad {
    pub fn atoms(&self) -> [usize; 4] {
        [self.b1, self.b2, self.b3, self.b4]
    }
}

impl From<[usize; 4]> for TorsionQuad {
    fn from(a: [usize; 4]) -> Self {
        TorsionQuad { b1: a[0], b2: a[1], b3: a[2], b4: a[3] }
    }
}

impl From<TorsionQuad> for [usize; 4] {
    fn from(t: TorsionQuad) -> Self {
        t.atoms()
    }
}

/// Provenance of generated molecules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub generator: String,
    pub seed: Option<u64>,
}

/// On-disk molecule schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MoleculeFile {
    name: String,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    torsions: Vec<TorsionQuad>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<GeneratorMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeGraph {
    name: String,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    torsions: Vec<TorsionQuad>,
    meta: Option<GeneratorMeta>,
    adjacency: Vec<Vec<usize>>,
}

impl MoleculeGraph {
    /// Builds and validates a graph, enumerating torsions by the counting rule.
    pub fn new(
        name: impl Into<String>,
        elements: &[Element],
        bonds: Vec<Bond>,
    ) -> Result<Self, ChemError> {
        let atoms: Vec<Atom> = elements
            .iter()
            .enumerate()
            .map(|(index, &element)| Atom { element, index })
            .collect();
        let adjacency = build_adjacency(atoms.len(), &bonds)?;
        let mut g = MoleculeGraph {
            name: name.into(),
            atoms,
            bonds,
            torsions: Vec::new(),
            meta: None,
            adjacency,
        };
        g.torsions = enumerate_torsions(&g);
        Ok(g)
    }

    pub fn with_meta(mut self, meta: GeneratorMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn torsions(&self) -> &[TorsionQuad] {
        &self.torsions
    }

    pub fn meta(&self) -> Option<&GeneratorMeta> {
        self.meta.as_ref()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn torsion_count(&self) -> usize {
        self.torsions.len()
    }

    /// Sorted neighbor list of atom `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<&Bond> {
        self.bonds.iter().find(|b| (b.i == i && b.j == j) || (b.i == j && b.j == i))
    }

    /// Topological distance (bond count) between every pair of atoms.
    pub fn path_lengths(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        (0..n)
            .map(|src| {
                let mut dist = vec![usize::MAX; n];
                dist[src] = 0;
                let mut queue = VecDeque::from([src]);
                while let Some(u) = queue.pop_front() {
                    for &v in &self.adjacency[u] {
                        if dist[v] == usize::MAX {
                            dist[v] = dist[u] + 1;
                            queue.push_back(v);
                        }
                    }
                }
                dist
            })
            .collect()
    }

    /// True when every bond of `self` (by atom index) is also a bond of `other`.
    pub fn is_subgraph_of(&self, other: &MoleculeGraph) -> bool {
        self.atoms.len() <= other.atoms.len()
            && self
                .atoms
                .iter()
                .all(|a| other.atoms[a.index].element == a.element)
            && self.bonds.iter().all(|b| other.bond_between(b.i, b.j).is_some())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("molecule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ChemError> {
        let file: MoleculeFile =
            serde_json::from_str(text).map_err(|e| ChemError::Json(e.to_string()))?;
        for (pos, atom) in file.atoms.iter().enumerate() {
            if atom.index != pos {
                return Err(ChemError::BadAtomIndex(pos, atom.index));
            }
        }
        let elements: Vec<Element> = file.atoms.iter().map(|a| a.element).collect();
        let mut g = MoleculeGraph::new(file.name, &elements, file.bonds)?;
        if g.torsions != file.torsions {
            return Err(ChemError::TorsionMismatch);
        }
        g.meta = file.meta;
        Ok(g)
    }

    /// Content hash over atoms, bonds and torsions (name and metadata excluded).
    pub fn content_hash(&self) -> String {
        let body = serde_json::to_string(&(&self.atoms, &self.bonds, &self.torsions))
            .expect("molecule serializes");
        hex_digest(body.as_bytes())
    }

    fn to_file(&self) -> MoleculeFile {
        MoleculeFile {
            name: self.name.clone(),
            atoms: self.atoms.clone(),
            bonds: self.bonds.clone(),
            torsions: self.torsions.clone(),
            meta: self.meta.clone(),
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn build_adjacency(n: usize, bonds: &[Bond]) -> Result<Vec<Vec<usize>>, ChemError> {
    if n == 0 {
        return Err(ChemError::Empty);
    }
    let mut adj = vec![Vec::new(); n];
    for b in bonds {
        if b.i >= n || b.j >= n {
            return Err(ChemError::BadBondIndex(b.i, b.j));
        }
        if b.i == b.j || adj[b.i].contains(&b.j) {
            return Err(ChemError::BadBond(b.i, b.j));
        }
        adj[b.i].push(b.j);
        adj[b.j].push(b.i);
    }
    for (i, list) in adj.iter_mut().enumerate() {
        if list.len() > MAX_VALENCE {
            return Err(ChemError::ValenceExceeded { atom: i });
        }
        list.sort_unstable();
    }
    // Connected with n - 1 edges is a tree.
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(ChemError::Disconnected);
    }
    if bonds.len() != n - 1 {
        return Err(ChemError::Cyclic);
    }
    Ok(adj)
}

/// Rotatable torsions of `g`, one per bond whose endpoints both have two or
/// more heavy neighbors, sorted by central bond.
pub fn enumerate_torsions(g: &MoleculeGraph) -> Vec<TorsionQuad> {
    let mut central: Vec<(usize, usize)> = g
        .bonds
        .iter()
        .map(|b| (b.i.min(b.j), b.i.max(b.j)))
        .filter(|&(a, b)| g.degree(a) >= 2 && g.degree(b) >= 2)
        .collect();
    central.sort_unstable();
    central
        .into_iter()
        .map(|(b2, b3)| {
            let b1 = *g.neighbors(b2).iter().find(|&&x| x != b3).expect("degree >= 2");
            let b4 = *g.neighbors(b3).iter().find(|&&x| x != b2).expect("degree >= 2");
            TorsionQuad { b1, b2, b3, b4 }
        })
        .collect()
}
