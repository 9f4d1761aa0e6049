//! Cross-module invariants: estimator concentration, harness bookkeeping,
//! reduction accounting and optimizer optimality.

use mnl_core::bounds::ucb_radius;
use mnl_core::experiments::{benchmark_instance, monte_carlo, run_experiment, RunConfig};
use mnl_core::lowerbound::{run_reduction, BlockInstance};
use mnl_core::optimize::optimal_assortment;
use mnl_core::policy::{AssortmentPolicy, ExploreThenExploit, StaticPolicy, UcbPolicy};
use mnl_core::{rng_from_seed, Assortment, Constraint, MnlInstance};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Geometric};

/// The radius at epoch `ell` with `t` samples covers the mean of `t`
/// geometric draws except with probability at most `6 / (N ell)`.
#[test]
fn estimator_concentration() {
    let n_products = 10;
    let mut rng = rng_from_seed(61);
    let trials = 20_000;
    for &v in &[0.1, 0.35, 1.0] {
        let geo = Geometric::new(1.0 / (1.0 + v)).unwrap();
        for &(ell, t) in &[(5u64, 3u64), (20, 10), (100, 40), (1000, 200)] {
            let misses = (0..trials)
                .filter(|_| {
                    let mean = (0..t).map(|_| geo.sample(&mut rng)).sum::<u64>() as f64 / t as f64;
                    (mean - v).abs() > ucb_radius(mean, t, ell, n_products).unwrap()
                })
                .count();
            let freq = misses as f64 / trials as f64;
            let limit = 6.0 / (n_products as f64 * ell as f64);
            let slack = 3.0 * (limit * (1.0 - limit) / trials as f64).sqrt();
            assert!(freq <= limit + slack, "v={v} ell={ell} t={t}: {freq} > {limit}");
        }
    }
}

#[test]
fn epochs_partition_the_horizon() {
    let inst = benchmark_instance(0.1).unwrap();
    let c = Constraint::Cardinality(4);
    let mut policy = UcbPolicy::standard(vec![1.0; 10], c);
    let cfg = RunConfig { record_epochs: true, ..RunConfig::new(20_000) };
    let out = run_experiment(&mut policy, &inst, c, &cfg, &mut rng_from_seed(5)).unwrap();
    assert_eq!(out.epochs.iter().map(|e| e.length).sum::<u64>(), 20_000);
    assert!(out.epochs.iter().rev().skip(1).all(|e| e.completed));
    assert!(out.epochs.windows(2).all(|w| w[1].start == w[0].start + w[0].length && w[1].epoch == w[0].epoch + 1));
    assert_eq!(out.epochs.len() as u64, policy.stats().unwrap().epoch() - 1 + !out.epochs.last().unwrap().completed as u64);
    // The first epoch offers the optimistic set under all-ones bounds.
    assert!(out.epochs[0].ucb.iter().all(|&u| u == 1.0));
}

#[test]
fn epoch_regret_matches_step_regret_in_mean() {
    // Each epoch is charged (1 + V(S)) times the per-step gap, its expected
    // length. Recording epochs disables the closed-form fast-forward.
    let inst = benchmark_instance(0.1).unwrap();
    let c = Constraint::Cardinality(4);
    let worst = Assortment::from_labels(&[3, 4, 5, 6], 10).unwrap();
    let cfg = RunConfig { record_epochs: true, ..RunConfig::new(50_000) };
    let (mut step, mut epoch) = (0.0, 0.0);
    for seed in 0..10 {
        let out = run_experiment(&mut StaticPolicy::new(worst.clone()), &inst, c, &cfg, &mut rng_from_seed(seed)).unwrap();
        step += out.curve.terminal();
        epoch += out.epoch_regret;
    }
    assert!((epoch - step).abs() / step < 0.02, "{epoch} vs {step}");
    let fast = monte_carlo(|| StaticPolicy::new(worst.clone()), &inst, c, &RunConfig::new(50_000), 2, 0).unwrap();
    assert!((fast.mean_terminal() - step / 10.0).abs() < 1e-6 * step);
}

#[test]
fn committed_policies_fast_forward_exactly() {
    let inst = benchmark_instance(0.05).unwrap();
    let c = Constraint::Cardinality(4);
    let horizon = 200_000;
    let mut fast = ExploreThenExploit::new(vec![1.0; 10], 4, horizon);
    let mut slow = ExploreThenExploit::new(vec![1.0; 10], 4, horizon);
    let quick = run_experiment(&mut fast, &inst, c, &RunConfig::new(horizon), &mut rng_from_seed(8)).unwrap();
    let full_cfg = RunConfig { record_epochs: true, ..RunConfig::new(horizon) };
    let full = run_experiment(&mut slow, &inst, c, &full_cfg, &mut rng_from_seed(8)).unwrap();
    for (a, b) in quick.curve.cum_regret.iter().zip(&full.curve.cum_regret) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn reduction_spends_the_budget() {
    let mut rng = rng_from_seed(17);
    let inst = BlockInstance::generate(4, 2, 10_000, 0.4, &mut rng).unwrap();
    let mut policy = UcbPolicy::standard(vec![1.0; 8], Constraint::Cardinality(2));
    let stats = run_reduction(&mut policy, &inst, 3_000, u64::MAX, &mut rng).unwrap();
    assert_eq!(stats.pulls, 3_000);
    assert_eq!(stats.call_pulls.iter().sum::<u64>(), 3_000);
    assert_eq!(stats.loop_lengths.len() as u64, stats.calls);
    let answered: u64 = stats.feedback.iter().sum();
    assert!(answered == stats.calls || answered + 1 == stats.calls);
    let per_set: u64 = stats.per_set.values().flatten().sum();
    assert_eq!(per_set, answered);

    let mut policy = UcbPolicy::standard(vec![1.0; 8], Constraint::Cardinality(2));
    let capped = run_reduction(&mut policy, &inst, u64::MAX, 50, &mut rng).unwrap();
    assert_eq!(capped.calls, 50);
}

fn instance_strategy() -> impl Strategy<Value = (MnlInstance, usize)> {
    (1usize..9).prop_flat_map(|n| {
        (prop::collection::vec(0.01f64..3.0, n), prop::collection::vec(0.0f64..=1.0, n), 0.2f64..3.0, 1..=n)
            .prop_map(|(v, r, v0, k)| (MnlInstance::new(v0, v, r).unwrap(), k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimum_dominates_random_sets((inst, k) in instance_strategy(), seed in any::<u64>()) {
        let best = optimal_assortment(&inst, Constraint::Cardinality(k));
        let free = optimal_assortment(&inst, Constraint::Unconstrained);
        prop_assert!(free.revenue >= best.revenue - 1e-12);
        let mut rng = rng_from_seed(seed);
        let n = inst.n_products();
        for _ in 0..50 {
            let items: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).take(k).collect();
            let s = Assortment::new(items, n).unwrap();
            prop_assert!(inst.expected_revenue(&s).unwrap() <= best.revenue + 1e-12);
        }
    }

    #[test]
    fn optimistic_set_is_feasible((inst, k) in instance_strategy(), seed in any::<u64>()) {
        let c = Constraint::Cardinality(k);
        let mut policy = UcbPolicy::standard(inst.revenues().to_vec(), c);
        let mut rng = rng_from_seed(seed);
        for _ in 0..200 {
            let s = policy.next_assortment().assortment.clone();
            prop_assert!(c.admits(&s));
            let choice = inst.sample_choice(&s, &mut rng);
            policy.observe(choice).unwrap();
        }
        let stats = policy.stats().unwrap();
        prop_assert!(stats.ucb().iter().zip(stats.means()).all(|(u, m)| u >= m));
    }
}
