//! Benchmark fixtures shared by the criterion targets.

use torsionworks::chem::{t_branched_alkane, MoleculeGraph};

/// Mid-sized member of the T-branched family used by every benchmark.
pub fn fixture() -> MoleculeGraph {
    t_branched_alkane(5)
}

/// Torsions spread over the circle, away from syn clashes.
pub fn fixture_theta(n: usize) -> Vec<f64> {
    (0..n).map(|k| 1.1 + 0.7 * k as f64).collect()
}
