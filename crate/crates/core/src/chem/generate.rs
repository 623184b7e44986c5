//! Deterministic alkane generators.

use super::{Bond, Element, GeneratorMeta, MoleculeGraph, MAX_VALENCE};
use crate::rng;

/// Generator identity stored in molecule metadata.
pub const GENERATOR_ID: &str = "uniform-open-valence/chacha8/seed_from_u64";

/// Grows an alkane one carbon at a time, attaching each new carbon to an atom
/// chosen uniformly among those with fewer than four neighbors.
pub fn generate_branched_alkane(seed: u64, n_atoms: usize) -> MoleculeGraph {
    assert!(n_atoms >= 1, "an alkane needs at least one carbon");
    let mut rng = rng::seeded(seed);
    let mut degree = vec![0usize];
    let mut bonds = Vec::with_capacity(n_atoms - 1);
    let mut open: Vec<usize> = Vec::with_capacity(n_atoms);
    while degree.len() < n_atoms {
        open.clear();
        open.extend((0..degree.len()).filter(|&i| degree[i] < MAX_VALENCE));
        let parent = open[rng::uniform_index(&mut rng, open.len())];
        let child = degree.len();
        degree[parent] += 1;
        degree.push(1);
        bonds.push(Bond::single(parent, child));
    }
    MoleculeGraph::new(
        format!("alkane-s{seed}-n{n_atoms}"),
        &vec![Element::C; n_atoms],
        bonds,
    )
    .expect("generated alkanes are valid trees")
    .with_meta(GeneratorMeta { generator: GENERATOR_ID.to_string(), seed: Some(seed) })
}

/// Member `t` of the T-branched alkane family: a chain of `t + 3` carbons with
/// a methyl branch on the second carbon. Atom numbering follows the SMILES
/// `CC(C)C...C`, so member `t` is an index-preserving subgraph of member
/// `t + 1` and its torsion list is a prefix of the next member's.
pub fn t_branched_alkane(t: usize) -> MoleculeGraph {
    assert!(t >= 1, "T-branched alkanes start at t = 1");
    let n = t + 4;
    let mut bonds = vec![Bond::single(0, 1), Bond::single(1, 2), Bond::single(1, 3)];
    bonds.extend((4..n).map(|i| Bond::single(i - 1, i)));
    MoleculeGraph::new(format!("t-alkane-{t}"), &vec![Element::C; n], bonds)
        .expect("T-alkanes are valid trees")
        .with_meta(GeneratorMeta { generator: "t-branched-alkane".to_string(), seed: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn single_carbon() {
        let g = generate_branched_alkane(42, 1);
        assert_eq!((g.atom_count(), g.bonds().len()), (1, 0));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_branched_alkane(5, 15), generate_branched_alkane(5, 15));
        assert_ne!(
            generate_branched_alkane(5, 15).bonds(),
            generate_branched_alkane(6, 15).bonds()
        );
    }

    #[test]
    fn generated_alkanes_respect_valence() {
        for seed in 0..50 {
            let g = generate_branched_alkane(seed, 20);
            assert!((0..20).all(|i| g.degree(i) <= MAX_VALENCE));
            assert_eq!(g.meta().unwrap().seed, Some(seed));
        }
    }

    #[test]
    fn golden_seed0_n12() {
        let g = generate_branched_alkane(0, 12);
        assert_eq!(g.torsion_count(), GOLDEN_SEED0_N12_TORSIONS);
    }

    // Frozen from the first deterministic generation.
    const GOLDEN_SEED0_N12_TORSIONS: usize = 7;

    #[test]
    fn t_alkane_shapes() {
        assert_eq!((t_branched_alkane(1).atom_count(), t_branched_alkane(1).torsion_count()), (5, 1));
        assert_eq!((t_branched_alkane(2).atom_count(), t_branched_alkane(2).torsion_count()), (6, 2));
        assert_eq!((t_branched_alkane(10).atom_count(), t_branched_alkane(10).torsion_count()), (14, 10));
    }

    #[test]
    fn t_alkane_family_nests() {
        for t in 1..20 {
            let a = t_branched_alkane(t);
            let b = t_branched_alkane(t + 1);
            assert_eq!(a.torsion_count(), t);
            assert!(a.is_subgraph_of(&b));
            assert_eq!(a.torsions(), &b.torsions()[..t]);
        }
    }

    #[test]
    fn t_alkane_matches_smiles() {
        for t in 1..8 {
            let smiles = format!("CC(C){}", "C".repeat(t + 1));
            let parsed = parse_smiles(&smiles).unwrap();
            let built = t_branched_alkane(t);
            assert_eq!(parsed.bonds(), built.bonds());
            assert_eq!(parsed.torsions(), built.torsions());
        }
    }
}
