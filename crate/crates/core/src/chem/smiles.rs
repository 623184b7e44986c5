//! Acyclic alkane subset of SMILES: carbon atoms and parenthesised branches.

use super::{Bond, ChemError, Element, MoleculeGraph, MAX_VALENCE};

pub fn parse_smiles(text: &str) -> Result<MoleculeGraph, ChemError> {
    let mut degree: Vec<usize> = Vec::new();
    let mut bonds = Vec::new();
    let mut prev: Option<usize> = None;
    let mut branches: Vec<usize> = Vec::new();

    for (position, token) in text.chars().enumerate() {
        match token {
            'C' => {
                let atom = degree.len();
                degree.push(0);
                if let Some(p) = prev {
                    for end in [p, atom] {
                        degree[end] += 1;
                        if degree[end] > MAX_VALENCE {
                            return Err(ChemError::ValenceExceeded { atom: end });
                        }
                    }
                    bonds.push(Bond::single(p, atom));
                }
                prev = Some(atom);
            }
            '(' => match prev {
                Some(p) => branches.push(p),
                None => return Err(ChemError::UnbalancedParens { position }),
            },
            ')' => match branches.pop() {
                Some(p) => prev = Some(p),
                None => return Err(ChemError::UnbalancedParens { position }),
            },
            other => return Err(ChemError::UnsupportedToken { token: other, position }),
        }
    }
    if !branches.is_empty() {
        return Err(ChemError::UnbalancedParens { position: text.chars().count() });
    }
    if degree.is_empty() {
        return Err(ChemError::Empty);
    }
    MoleculeGraph::new(text, &vec![Element::C; degree.len()], bonds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn butane() {
        let g = parse_smiles("CCCC").unwrap();
        assert_eq!((g.atom_count(), g.bonds().len(), g.torsion_count()), (4, 3, 1));
        assert_eq!(g.torsions()[0].atoms(), [0, 1, 2, 3]);
    }

    #[test]
    fn methane() {
        let g = parse_smiles("C").unwrap();
        assert_eq!((g.atom_count(), g.bonds().len(), g.torsion_count()), (1, 0, 0));
    }

    #[test]
    fn neopentane_has_no_rotatable_bonds() {
        let g = parse_smiles("CC(C)(C)C").unwrap();
        assert_eq!((g.atom_count(), g.bonds().len(), g.torsion_count()), (5, 4, 0));
        assert_eq!(g.degree(1), 4);
    }

    #[test]
    fn branch_returns_to_branch_point() {
        let g = parse_smiles("CC(CC)C").unwrap();
        assert!(g.bond_between(1, 4).is_some());
        assert!(g.bond_between(3, 4).is_none());
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_smiles("CCO").unwrap_err(),
            ChemError::UnsupportedToken { token: 'O', position: 2 }
        );
        assert_eq!(
            parse_smiles("C1CC1").unwrap_err(),
            ChemError::UnsupportedToken { token: '1', position: 1 }
        );
        assert_eq!(parse_smiles("CC(C").unwrap_err(), ChemError::UnbalancedParens { position: 4 });
        assert_eq!(parse_smiles("CC)C").unwrap_err(), ChemError::UnbalancedParens { position: 2 });
        assert_eq!(parse_smiles("(C)").unwrap_err(), ChemError::UnbalancedParens { position: 0 });
        assert_eq!(
            parse_smiles("CC(C)(C)(C)C").unwrap_err(),
            ChemError::ValenceExceeded { atom: 1 }
        );
        assert_eq!(parse_smiles("").unwrap_err(), ChemError::Empty);
    }
}
