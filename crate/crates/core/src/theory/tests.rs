use proptest::prelude::*;

use super::lock::lock_family;
use super::*;
use crate::chem::t_branched_alkane;
use crate::forcefield::{EnergyModel, ForceField};
use crate::search::{Oracle, OracleTable};

#[test]
fn hamming_examples() {
    assert_eq!(hamming(&[1, 2, 3], &[1, 2, 3]), Ok(0));
    assert_eq!(hamming(&[1, 2, 3], &[4, 5, 6]), Ok(3));
    assert_eq!(hamming(&[1, 2, 3], &[1, 5, 3]), Ok(1));
    assert_eq!(hamming(&[1, 2], &[1]), Err(TheoryError::LengthMismatch(2, 1)));
}

#[test]
fn single_coupon_takes_one_draw() {
    let r = coupon_collector_sim(1, 0.1, 200, 3, 3.0).unwrap();
    assert_eq!((r.mean, r.quantile), (1.0, 1.0));
}

#[test]
fn two_coupons_average_three_draws() {
    assert_eq!(coupon_expectation(2), 3.0);
    let r = coupon_collector_sim(2, 0.1, 10_000, 11, 3.0).unwrap();
    assert!((r.mean - 3.0).abs() < 0.05 * 3.0, "mean {}", r.mean);
}

#[test]
fn coupon_quantile_within_bound() {
    let r = coupon_collector_sim(100, 0.1, 1000, 5, 3.0).unwrap();
    assert!(r.holds, "{r:?}");
    assert!(r.quantile > coupon_expectation(100) * 0.9);
}

#[test]
fn coupon_rejects_bad_parameters() {
    assert!(coupon_collector_sim(0, 0.1, 10, 0, 3.0).is_err());
    assert!(coupon_collector_sim(5, 1.0, 10, 0, 3.0).is_err());
}

#[test]
fn quantile_and_slope_helpers() {
    let v: Vec<f64> = (1..=10).map(f64::from).collect();
    assert_eq!(quantile_sorted(&v, 0.9), 9.0);
    assert_eq!(quantile_sorted(&v, 1.0), 10.0);
    assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    let x = [1.0, 2.0, 3.0];
    assert!((fit_slope(&x, &[2.0, 4.0, 6.0]) - 2.0).abs() < 1e-12);
}

/// Joint space over three tasks with small policy sets and a pairwise
/// compatibility table drawn from `mask`.
fn explicit_space(mask: u64) -> JointPolicySpace<usize> {
    JointPolicySpace::new(
        vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2]],
        Box::new(move |t, &p, s, &q| {
            let (a, pa, b, pb) = if t < s { (t, p, s, q) } else { (s, q, t, p) };
            let bit = ((a * 3 + b) * 9 + pa * 3 + pb) % 64;
            mask >> bit & 1 == 1
        }),
    )
}

proptest! {
    #[test]
    fn restriction_is_monotone(mask in any::<u64>(), p0 in 0usize..3, p1 in 0usize..3) {
        let space = explicit_space(mask);
        let none = space.marginal(2, &[]);
        let one = space.marginal(2, &[(0, p0)]);
        let two = space.marginal(2, &[(0, p0), (1, p1)]);
        prop_assert!(one.iter().all(|p| none.contains(p)));
        prop_assert!(two.iter().all(|p| one.contains(p)));
        // Every member of the restricted class shows up in its marginal.
        for p2 in 0..3 {
            if space.contains(&[p0, p1, p2]) {
                prop_assert!(two.contains(&p2));
            }
        }
    }
}

#[test]
fn lock_rewards_only_the_all_advance_policy() {
    let lock = CombinationLock { states: 4 };
    let winners: Vec<_> = lock.all_policies().into_iter().filter(|p| lock.episode_return(p) > 0.0).collect();
    assert_eq!(winners, vec![vec![true; 4]]);
    assert_eq!(lock.all_policies().len(), 16);
}

#[test]
fn lock_marginals_have_two_policies() {
    let (locks, space) = lock_family(8);
    let mut fixed = vec![];
    for (t, l) in locks.iter().enumerate() {
        assert_eq!(space.marginal(t, &fixed).len(), 2);
        fixed.push((t, l.optimal_policy()));
    }
}

#[test]
fn curriculum_learner_solves_lock_five() {
    let (locks, space) = lock_family(5);
    for seed in 0..20 {
        let out = curriculum_learner(&locks, &space, &[0, 1, 2, 3, 4], seed).unwrap();
        assert!(out.rounds.iter().all(|r| r.marginal_size == 2));
        for (p, l) in out.policies.iter().zip(&locks) {
            assert_eq!(*p, l.optimal_policy());
        }
        let steps: u64 = out.rounds.iter().map(|r| r.episodes * (r.task as u64 + 1)).sum();
        assert_eq!(out.total_steps, steps);
    }
}

#[test]
fn single_task_is_coupon_collection() {
    let (locks, space) = lock_family(1);
    for seed in 0..10 {
        let out = curriculum_learner(&locks, &space, &[0], seed).unwrap();
        assert_eq!(out.rounds[0].episodes, coupon_draws(2, &mut rng::seeded(seed)));
    }
}

#[test]
fn escaped_optimum_is_reported() {
    let locks = vec![CombinationLock { states: 1 }, CombinationLock { states: 2 }];
    // Forces the second lock to stay in its first state.
    let space = JointPolicySpace::new(
        locks.iter().map(CombinationLock::all_policies).collect(),
        Box::new(|_, p: &LockPolicy, _, q: &LockPolicy| {
            let long = if p.len() > q.len() { p } else { q };
            !long[0]
        }),
    );
    let err = curriculum_learner(&locks, &space, &[0, 1], 0).unwrap_err();
    assert_eq!(err, TheoryError::OptimumEscapedSpace { task: 1 });
    assert_eq!(curriculum_learner(&locks, &space, &[0, 0], 0).unwrap_err(), TheoryError::BadCurriculum);
}

#[test]
fn flat_search_on_lock_three_takes_about_eight_episodes() {
    let lock = CombinationLock { states: 3 };
    let all = lock.all_policies();
    let mean = (0..4000).map(|s| flat_learner(&all, &lock.optimal_policy(), s) as f64).sum::<f64>() / 4000.0;
    assert!((mean - 8.0).abs() < 0.8, "mean {mean}");
    assert_eq!(flat_learner(&CombinationLock { states: 1 }.all_policies(), &vec![true], 1).min(1), 1);
}

#[test]
fn lock_experiment_is_reproducible() {
    let a = lock_experiment(&[2, 3, 4], 10, 9, 0.1, 1.0).unwrap();
    let b = lock_experiment(&[2, 3, 4], 10, 9, 0.1, 1.0).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.rows.iter().all(|r| r.exact_recoveries == 10));
}

#[test]
fn ball_size_matches_enumeration() {
    let alphabet = 6;
    for t in 1..=8usize {
        let center: Vec<usize> = (0..t - 1).map(|i| (i * 5 + 1) % alphabet).collect();
        // Tally every length-t string by prefix distance once.
        let mut by_distance = vec![0u64; t];
        let total = alphabet.pow(t as u32);
        for index in 0..total {
            let a = crate::search::odometer(index as u64, t, alphabet);
            by_distance[hamming(&a[..t - 1], &center).unwrap()] += 1;
        }
        for radius in 0..=3 {
            let expected: u64 = by_distance.iter().take(radius + 1).sum();
            assert_eq!(ball_size(t, radius, alphabet), expected, "t={t} radius={radius}");
            let ball = HammingBallSpace { center: center.clone(), radius, alphabet };
            if t <= 5 {
                let members = ball.members();
                assert_eq!(members.len() as u64, expected);
                assert!(members.iter().all(|m| ball.contains(m)));
            }
        }
    }
}

fn tables(max_t: usize, dir: &std::path::Path) -> Vec<OracleTable> {
    let ff = ForceField::default();
    let oracle = Oracle::default().with_cache_dir(dir);
    (1..=max_t)
        .map(|t| {
            let g = t_branched_alkane(t);
            let model = EnergyModel::new(&g, &ff).unwrap();
            oracle.table(&model, &g.content_hash(), &ff.content_hash(), 6).unwrap()
        })
        .collect()
}

#[test]
fn bandit_radius_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let tables = tables(3, dir.path());
    let zero = bandit_curriculum(&tables, &RadiusSchedule::Constant(0), 1).unwrap();
    assert!(zero.stages.iter().all(|s| s.samples == 6));
    assert_eq!(zero.total_samples, 18);
    let full = bandit_curriculum(&tables, &RadiusSchedule::Table(vec![1, 2]), 1).unwrap();
    let samples: Vec<u64> = full.stages.iter().map(|s| s.samples).collect();
    assert_eq!(samples, vec![6, 36, 216]);
    assert!(full.stages.iter().all(|s| s.found_optimum));
}

#[test]
fn optimum_chain_prefers_near_optima() {
    let sets = vec![
        vec![vec![0], vec![2]],
        vec![vec![1, 0], vec![2, 5]],
        vec![vec![0, 5, 0], vec![1, 1, 3], vec![2, 5, 1]],
    ];
    let chain = nearest_optimum_chain(&sets).unwrap();
    assert_eq!(chain.centers, vec![vec![0], vec![1, 0], vec![1, 1, 3]]);
    assert_eq!(chain.radii, vec![1, 1]);
    assert!(nearest_optimum_chain(&[vec![vec![0, 1]]]).is_err());
    assert!(nearest_optimum_chain(&[vec![]]).is_err());
}

#[test]
fn t_alkane_optimum_chain() {
    let dir = tempfile::tempdir().unwrap();
    let tables = tables(5, dir.path());
    let sets: Vec<Vec<Vec<usize>>> = tables.iter().map(OracleTable::optimal_actions).collect();
    let chain = nearest_optimum_chain(&sets).unwrap();
    // Every torsion started at 120° relaxes to the all-anti global minimum.
    assert_eq!(chain.centers, (1..=5).map(|t| vec![1; t]).collect::<Vec<_>>());
    assert_eq!(chain.radii, vec![0; 4]);
    let report = bandit_curriculum(&tables, &RadiusSchedule::Measured, 2).unwrap();
    assert_eq!(report.total_samples, 30);
    let picked: Vec<Vec<usize>> = report.stages.iter().map(|s| s.best_action.clone()).collect();
    assert_eq!(picked, chain.centers);
    assert!(report.stages.iter().all(|s| s.found_optimum && s.samples == s.ball_size));
}
