//! Gibbs scoring, torsion fingerprint distance and torsion correlations.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::wrap_angle;

/// Boltzmann constant in kcal/(mol K).
pub const BOLTZMANN_KCAL: f64 = 0.0019872;

/// Default uniqueness threshold on TFD.
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.10;

/// Default temperature in kelvin.
pub const DEFAULT_TEMPERATURE: f64 = 500.0;

/// Correlations smaller than this in magnitude are reported as zero.
pub const CORRELATION_DISPLAY_FLOOR: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("torsion vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("weights must be nonnegative, finite and not all zero")]
    InvalidWeights,
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("normalizers need Z0 > 0, tau > 0 and finite E0")]
    InvalidNormalizers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsNormalizers {
    #[serde(rename = "E0")]
    pub e0: f64,
    #[serde(rename = "Z0")]
    pub z0: f64,
    pub tau: f64,
}

impl Default for GibbsNormalizers {
    /// Unnormalized measure at the default temperature.
    fn default() -> Self {
        GibbsNormalizers { e0: 0.0, z0: 1.0, tau: DEFAULT_TEMPERATURE }
    }
}

impl GibbsNormalizers {
    pub fn new(e0: f64, z0: f64, tau: f64) -> Result<Self, MetricsError> {
        let n = GibbsNormalizers { e0, z0, tau };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.e0.is_finite() && self.z0 > 0.0 && self.z0.is_finite() && self.tau > 0.0 {
            Ok(())
        } else {
            Err(MetricsError::InvalidNormalizers)
        }
    }

    /// Normalizers from a reference set of unique conformer energies: E0 is the
    /// lowest energy and Z0 the set's Gibbs score under E0 with unit Z.
    pub fn from_reference(unique_energies: &[f64], tau: f64) -> Result<Self, MetricsError> {
        let e0 = unique_energies
            .iter()
            .copied()
            .filter(|e| e.is_finite())
            .fold(f64::INFINITY, f64::min);
        let unit = GibbsNormalizers { e0, z0: 1.0, tau };
        let z0 = unique_energies.iter().map(|&e| gibbs_measure(e, &unit)).sum();
        GibbsNormalizers::new(e0, z0, tau)
    }

    pub fn kt(&self) -> f64 {
        BOLTZMANN_KCAL * self.tau
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("normalizers serialize")
    }
}

/// `exp(-(E - E0) / kτ) / Z0`; infinite or NaN energies weigh nothing.
pub fn gibbs_measure(energy: f64, norm: &GibbsNormalizers) -> f64 {
    if !energy.is_finite() {
        return 0.0;
    }
    (-(energy - norm.e0) / norm.kt()).exp() / norm.z0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformerRecord {
    pub theta: Vec<f64>,
    pub energy: f64,
    pub gibbs: f64,
    /// Unique (counted) as opposed to pruned.
    pub accepted: bool,
}

impl ConformerRecord {
    pub fn new(theta: Vec<f64>, energy: f64, norm: &GibbsNormalizers) -> Self {
        ConformerRecord { theta, energy, gibbs: gibbs_measure(energy, norm), accepted: true }
    }
}

/// Sum of Gibbs measures over accepted records.
pub fn gibbs_score(records: &[ConformerRecord]) -> f64 {
    records.iter().filter(|r| r.accepted).map(|r| r.gibbs).sum()
}

/// Shortest distance between two angles on the circle, in `[0, π]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % TAU;
    d.min(TAU - d)
}

/// Weighted mean circular distance divided by π. `None` weights are uniform.
pub fn tfd(a: &[f64], b: &[f64], weights: Option<&[f64]>) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let Some(w) = weights else {
        let sum: f64 = a.iter().zip(b).map(|(x, y)| circular_distance(*x, *y)).sum();
        return Ok((sum / (a.len() as f64 * PI)).min(1.0));
    };
    if w.len() != a.len() {
        return Err(MetricsError::LengthMismatch(a.len(), w.len()));
    }
    let total: f64 = w.iter().sum();
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || total <= 0.0 {
        return Err(MetricsError::InvalidWeights);
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), wi)| wi * circular_distance(*x, *y))
        .sum();
    Ok((sum / (total * PI)).min(1.0))
}

/// Sorts by energy (stable, so ties keep insertion order) and greedily keeps a
/// record when its TFD to every kept record exceeds `threshold`. Records with
/// non-finite energy are never kept. Returns the records in input order with
/// `accepted` set.
pub fn dedup_by_energy(records: &[ConformerRecord], threshold: f64) -> Vec<ConformerRecord> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&i, &j| records[i].energy.total_cmp(&records[j].energy));
    let mut out = records.to_vec();
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let r = &records[i];
        let unique = r.energy.is_finite()
            && kept.iter().all(|&k| {
                tfd(&records[k].theta, &r.theta, None).expect("equal torsion counts") > threshold
            });
        out[i].accepted = unique;
        if unique {
            kept.push(i);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub values: Vec<Vec<f64>>,
    /// Torsions whose shifted samples have no spread.
    pub zero_variance: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("torsion");
        for j in 0..self.dim() {
            write!(out, ",t{j}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            write!(out, "t{i}").unwrap();
            for v in row {
                write!(out, ",{v:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Rotates angles so the widest empty arc between samples straddles the
/// 0 / 2π seam, which makes a linear correlation meaningful for clustered
/// circular data.
pub fn gap_shift(angles: &[f64]) -> Vec<f64> {
    let wrapped: Vec<f64> = angles.iter().map(|&a| wrap_angle(a)).collect();
    if wrapped.len() < 2 {
        return wrapped;
    }
    let mut sorted = wrapped.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut best_gap = sorted[0] + TAU - sorted[n - 1];
    let mut start = sorted[0];
    for w in sorted.windows(2) {
        let gap = w[1] - w[0];
        if gap > best_gap {
            best_gap = gap;
            start = w[1];
        }
    }
    wrapped.iter().map(|&a| (a - start).rem_euclid(TAU)).collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Pearson correlation between gap-shifted torsion series. Each sample is one
/// torsion vector.
pub fn correlation_matrix(samples: &[Vec<f64>]) -> Result<CorrelationMatrix, MetricsError> {
    if samples.len() < 3 {
        return Err(MetricsError::TooFewSamples(samples.len()));
    }
    let n = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != n) {
        return Err(MetricsError::LengthMismatch(n, bad.len()));
    }
    let series: Vec<Vec<f64>> = (0..n)
        .map(|i| gap_shift(&samples.iter().map(|s| s[i]).collect::<Vec<_>>()))
        .collect();
    let zero_variance: Vec<usize> = (0..n)
        .filter(|&i| {
            let s = &series[i];
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().all(|v| (v - mean).abs() <= 1e-12)
        })
        .collect();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = 1.0;
        for j in i + 1..n {
            if zero_variance.contains(&i) || zero_variance.contains(&j) {
                continue;
            }
            let mut r = pearson(&series[i], &series[j]);
            if r.abs() < CORRELATION_DISPLAY_FLOOR {
                r = 0.0;
            }
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { values, zero_variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn norm() -> GibbsNormalizers {
        GibbsNormalizers::new(2.0, 3.0, 500.0).unwrap()
    }

    fn rec(theta: &[f64], energy: f64) -> ConformerRecord {
        ConformerRecord::new(theta.to_vec(), energy, &norm())
    }

    #[test]
    fn gibbs_closed_forms() {
        let n = norm();
        assert_eq!(gibbs_measure(n.e0, &n), 1.0 / 3.0);
        let e = n.e0 + n.kt() * n.z0.ln();
        assert!((gibbs_measure(e, &n) - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(gibbs_measure(f64::INFINITY, &n), 0.0);
        assert_eq!(gibbs_measure(f64::NAN, &n), 0.0);
    }

    #[test]
    fn normalizers_validate_and_round_trip() {
        assert!(GibbsNormalizers::new(0.0, 0.0, 500.0).is_err());
        assert!(GibbsNormalizers::new(0.0, 1.0, -1.0).is_err());
        let n = norm();
        let text = n.to_json();
        assert!(text.contains("\"E0\"") && text.contains("\"Z0\""));
        assert_eq!(serde_json::from_str::<GibbsNormalizers>(&text).unwrap(), n);
    }

    #[test]
    fn normalizers_from_reference() {
        let n = GibbsNormalizers::from_reference(&[5.0, 4.0, f64::INFINITY], 500.0).unwrap();
        assert_eq!(n.e0, 4.0);
        assert!((n.z0 - (1.0 + (-1.0 / n.kt()).exp())).abs() < 1e-15);
    }

    #[test]
    fn score_counts_only_accepted() {
        assert_eq!(gibbs_score(&[]), 0.0);
        assert_eq!(gibbs_score(&[rec(&[0.0], 2.0)]), 1.0 / 3.0);
        let dup = dedup_by_energy(&[rec(&[1.0], 2.0), rec(&[1.0], 2.0)], 0.1);
        assert_eq!(gibbs_score(&dup), gibbs_score(&[rec(&[1.0], 2.0)]));
    }

    #[test]
    fn tfd_examples() {
        assert_eq!(tfd(&[1.0, 2.0], &[1.0, 2.0], None).unwrap(), 0.0);
        assert!((tfd(&[0.0, 1.0], &[PI, 1.0 + PI], None).unwrap() - 1.0).abs() < 1e-15);
        assert!((tfd(&[0.0, 0.0], &[PI, 0.0], None).unwrap() - 0.5).abs() < 1e-15);
        assert!((tfd(&[0.1], &[TAU - 0.1], None).unwrap() - 0.2 / PI).abs() < 1e-12);
        assert_eq!(tfd(&[], &[], None).unwrap(), 0.0);
        assert_eq!(tfd(&[0.0], &[0.0, 1.0], None), Err(MetricsError::LengthMismatch(1, 2)));
        assert_eq!(tfd(&[0.0], &[1.0], Some(&[0.0])), Err(MetricsError::InvalidWeights));
        assert_eq!(tfd(&[0.0], &[1.0], Some(&[-1.0])), Err(MetricsError::InvalidWeights));
        let w = tfd(&[0.0, 0.0], &[PI, 0.0], Some(&[3.0, 1.0])).unwrap();
        assert!((w - 0.75).abs() < 1e-15);
    }

    #[test]
    fn dedup_examples() {
        let far = [rec(&[0.0], 3.0), rec(&[2.0], 2.5), rec(&[4.0], 4.0)];
        assert!(dedup_by_energy(&far, 0.1).iter().all(|r| r.accepted));

        let exact = [rec(&[1.0], 2.0), rec(&[1.0], 2.0)];
        let flags: Vec<bool> = dedup_by_energy(&exact, 0.1).iter().map(|r| r.accepted).collect();
        assert_eq!(flags, [true, false]);

        // #2 sits within m of #1 only.
        let chain = [rec(&[0.0], 1.0), rec(&[0.2], 1.5), rec(&[3.0], 2.0)];
        let flags: Vec<bool> = dedup_by_energy(&chain, 0.1).iter().map(|r| r.accepted).collect();
        assert_eq!(flags, [true, false, true]);

        // A pair exactly at the threshold counts as a duplicate.
        let m = 0.1;
        let edge = [rec(&[0.0], 1.0), rec(&[m * PI], 2.0)];
        assert!((tfd(&[0.0], &[m * PI], None).unwrap() - m).abs() < 1e-15);
        let flags: Vec<bool> = dedup_by_energy(&edge, tfd(&[0.0], &[m * PI], None).unwrap())
            .iter()
            .map(|r| r.accepted)
            .collect();
        assert_eq!(flags, [true, false]);

        let clash = [rec(&[0.0], f64::INFINITY)];
        assert!(!dedup_by_energy(&clash, 0.1)[0].accepted);
    }

    #[test]
    fn correlation_examples() {
        let mut r = rng::seeded(4);
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let a = TAU * rng::uniform_unit(&mut r);
                vec![a, a, 1.5]
            })
            .collect();
        let c = correlation_matrix(&samples).unwrap();
        assert!((c.values[0][1] - 1.0).abs() < 1e-12);
        assert_eq!(c.zero_variance, vec![2]);
        assert_eq!(c.values[2], vec![0.0, 0.0, 1.0]);
        assert_eq!(c.values[0][2], 0.0);
        assert!(c.to_csv().starts_with("torsion,t0,t1,t2\nt0,1.000000,1.000000,0.000000\n"));
        assert_eq!(correlation_matrix(&samples[..2]), Err(MetricsError::TooFewSamples(2)));
    }

    #[test]
    fn independent_samples_are_uncorrelated() {
        let mut r = rng::seeded(9);
        let samples: Vec<Vec<f64>> = (0..10_000)
            .map(|_| (0..4).map(|_| TAU * rng::uniform_unit(&mut r)).collect())
            .collect();
        let c = correlation_matrix(&samples).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(c.values[i][j].abs() < 0.05, "{:?}", c.values);
                }
            }
        }
    }

    #[test]
    fn gap_shift_unwraps_cluster_across_seam() {
        let shifted = gap_shift(&[TAU - 0.1, 0.05, 0.1, TAU - 0.2]);
        // The cluster straddling zero becomes contiguous.
        let max = shifted.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max < 0.31 && shifted.iter().all(|&v| v >= 0.0));
    }

    proptest! {
        #[test]
        fn tfd_is_a_symmetric_premetric(
            a in proptest::collection::vec(-10.0..10.0f64, 1..8),
            seed in 0u64..1000,
        ) {
            let mut r = rng::seeded(seed);
            let b: Vec<f64> = a.iter().map(|_| 20.0 * rng::uniform_unit(&mut r) - 10.0).collect();
            let ab = tfd(&a, &b, None).unwrap();
            prop_assert_eq!(ab, tfd(&b, &a, None).unwrap());
            prop_assert_eq!(tfd(&a, &a, None).unwrap(), 0.0);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn adding_unique_conformer_never_lowers_score(
            energies in proptest::collection::vec(-5.0..5.0f64, 1..10),
            extra in -5.0..5.0f64,
        ) {
            let base: Vec<ConformerRecord> =
                energies.iter().enumerate().map(|(i, &e)| rec(&[i as f64 * 0.7], e)).collect();
            let mut more = base.clone();
            more.push(rec(&[99.0], extra));
            prop_assert!(gibbs_score(&more) >= gibbs_score(&base));
        }

        #[test]
        fn correlation_symmetric_and_shift_invariant(seed in 0u64..200, shift in 0usize..3) {
            let mut r = rng::seeded(seed);
            let samples: Vec<Vec<f64>> = (0..50)
                .map(|_| {
                    let a = TAU * rng::uniform_unit(&mut r);
                    let noise = 0.3 * rng::uniform_unit(&mut r);
                    vec![a, a + noise, TAU * rng::uniform_unit(&mut r)]
                })
                .collect();
            let c = correlation_matrix(&samples).unwrap();
            let moved: Vec<Vec<f64>> = samples
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s[shift] += TAU;
                    s
                })
                .collect();
            let d = correlation_matrix(&moved).unwrap();
            for i in 0..3 {
                prop_assert_eq!(c.values[i][i], 1.0);
                for j in 0..3 {
                    prop_assert_eq!(c.values[i][j], c.values[j][i]);
                    prop_assert!((c.values[i][j] - d.values[i][j]).abs() < 1e-9);
                }
            }
        }
    }
}
