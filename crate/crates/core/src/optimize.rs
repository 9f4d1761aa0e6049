//! Static assortment optimization under MNL.
//!
//! Two fast solvers are provided: a parametric bisection for the
//! cardinality-constrained problem and a revenue-ordered scan for the
//! unconstrained one. [`brute_force_optimal`] enumerates every feasible set
//! and is the reference the fast solvers are tested against.

use std::cmp::Ordering;

use thiserror::Error;

use crate::model::{Assortment, Constraint, MnlInstance};

/// Largest product count accepted by the enumeration routines.
pub const MAX_ENUMERATION_PRODUCTS: usize = 25;

/// Default bisection tolerance for [`optimal_assortment_cardinality`].
pub const DEFAULT_TOL: f64 = 1e-12;

/// Revenue differences at or below this are treated as ties by the
/// enumeration routines.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error("refusing to enumerate subsets of {n} products (limit {MAX_ENUMERATION_PRODUCTS})")]
    EnumerationRefused { n: usize },
    #[error("bisection tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub assortment: Assortment,
    pub revenue: f64,
    /// Bisection fixed point (cardinality solver); equals `revenue` otherwise.
    pub lambda_star: f64,
}

/// Dispatches to the fast solver matching `constraint`.
pub fn optimal_assortment(inst: &MnlInstance, constraint: Constraint) -> OptResult {
    match constraint {
        Constraint::Unconstrained => optimal_assortment_unconstrained(inst),
        Constraint::Cardinality(k) => optimal_assortment_cardinality(inst, k, DEFAULT_TOL).expect("default tolerance is positive"),
    }
}

fn lex_less(a: &[usize], b: &[usize]) -> bool {
    a.cmp(b) == Ordering::Less
}

fn feasible_masks(n: usize, constraint: Constraint) -> impl Iterator<Item = u32> {
    let cap = constraint.max_size(n) as u32;
    (0u32..(1u32 << n)).filter(move |m| m.count_ones() <= cap)
}

fn mask_items(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|i| mask & (1 << i) != 0).collect()
}

/// Exhaustive search. Ties are broken by the lexicographically smallest
/// item list.
pub fn brute_force_optimal(inst: &MnlInstance, constraint: Constraint) -> Result<OptResult, OptError> {
    let n = inst.n_products();
    if n > MAX_ENUMERATION_PRODUCTS {
        return Err(OptError::EnumerationRefused { n });
    }
    let mut best: Vec<usize> = Vec::new();
    let mut best_rev = 0.0;
    for mask in feasible_masks(n, constraint) {
        let items = mask_items(mask, n);
        let rev = inst.revenue_unchecked(&items);
        if rev > best_rev + TIE_TOL || ((rev - best_rev).abs() <= TIE_TOL && lex_less(&items, &best)) {
            best_rev = rev;
            best = items;
        }
    }
    Ok(OptResult { assortment: Assortment::from_unsorted(best), revenue: best_rev, lambda_star: best_rev })
}

/// Greedy step of the bisection: at most `k` items with the largest positive
/// score `w_i (r_i - lambda)`, lower index first on ties. Returns the items
/// and `sum(score) - lambda`.
fn greedy_at(inst: &MnlInstance, k: usize, lambda: f64, scratch: &mut Vec<(f64, usize)>) -> (Vec<usize>, f64) {
    scratch.clear();
    for i in 0..inst.n_products() {
        let w = inst.normalized(i);
        if w <= 0.0 {
            continue;
        }
        let score = w * (inst.revenues()[i] - lambda);
        if score > 0.0 {
            scratch.push((score, i));
        }
    }
    scratch.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scratch.truncate(k);
    let total: f64 = scratch.iter().map(|(s, _)| s).sum();
    (scratch.iter().map(|(_, i)| *i).collect(), total - lambda)
}

/// Cardinality-constrained optimum via bisection on the revenue level.
///
/// `R(S) >= lambda` iff `sum_{i in S} w_i (r_i - lambda) >= lambda`, so the
/// largest feasible `lambda` is the optimal revenue. Each probe is a greedy
/// top-`k` selection.
pub fn optimal_assortment_cardinality(inst: &MnlInstance, k: usize, tol: f64) -> Result<OptResult, OptError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(OptError::InvalidTolerance(tol));
    }
    let max_r = inst.revenues().iter().cloned().fold(0.0, f64::max);
    let empty = OptResult { assortment: Assortment::empty(), revenue: 0.0, lambda_star: 0.0 };
    if k == 0 || max_r <= 0.0 {
        return Ok(empty);
    }
    let iterations = (max_r / tol).log2().ceil().max(0.0) as usize + 2;
    let mut scratch = Vec::with_capacity(inst.n_products());
    let (mut lo, mut hi) = (0.0, max_r);
    let (mut best, _) = greedy_at(inst, k, lo, &mut scratch);
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let (items, slack) = greedy_at(inst, k, mid, &mut scratch);
        if slack >= 0.0 {
            lo = mid;
            best = items;
        } else {
            hi = mid;
        }
    }
    let assortment = Assortment::from_unsorted(best);
    let revenue = inst.revenue_unchecked(assortment.items());
    Ok(OptResult { assortment, revenue, lambda_star: lo })
}

/// Unconstrained optimum: the best of the revenue-ordered nested sets.
pub fn optimal_assortment_unconstrained(inst: &MnlInstance) -> OptResult {
    let mut order: Vec<usize> = (0..inst.n_products()).filter(|&i| inst.normalized(i) > 0.0).collect();
    let r = inst.revenues();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    let (mut num, mut den) = (0.0, 1.0);
    let (mut best_len, mut best_rev) = (0, 0.0);
    for (len, &i) in order.iter().enumerate() {
        let w = inst.normalized(i);
        num += r[i] * w;
        den += w;
        let rev = num / den;
        if rev > best_rev {
            best_rev = rev;
            best_len = len + 1;
        }
    }
    let assortment = Assortment::from_unsorted(order[..best_len].to_vec());
    let revenue = inst.revenue_unchecked(assortment.items());
    OptResult { assortment, revenue, lambda_star: revenue }
}

/// Smallest positive gap between the optimal revenue and any other feasible
/// assortment's revenue; `+inf` when every assortment ties with the optimum.
pub fn revenue_gap(inst: &MnlInstance, constraint: Constraint) -> Result<f64, OptError> {
    let n = inst.n_products();
    if n > MAX_ENUMERATION_PRODUCTS {
        return Err(OptError::EnumerationRefused { n });
    }
    let revenues: Vec<f64> = feasible_masks(n, constraint).map(|m| inst.revenue_unchecked(&mask_items(m, n))).collect();
    let best = revenues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(revenues.iter().map(|r| best - r).filter(|gap| *gap > TIE_TOL).fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn benchmark(eps: f64) -> MnlInstance {
        let v = (1..=10).map(|i| if [1, 2, 9, 10].contains(&i) { 0.25 + eps } else { 0.25 }).collect();
        MnlInstance::with_unit_v0(v, vec![1.0; 10]).unwrap()
    }

    fn random_instance(rng: &mut impl Rng, n: usize) -> MnlInstance {
        let v = (0..n).map(|_| rng.random::<f64>()).collect();
        let r = (0..n).map(|_| rng.random::<f64>()).collect();
        MnlInstance::with_unit_v0(v, r).unwrap()
    }

    #[test]
    fn single_product() {
        let inst = MnlInstance::with_unit_v0(vec![1.0], vec![1.0]).unwrap();
        let res = brute_force_optimal(&inst, Constraint::Cardinality(1)).unwrap();
        assert_eq!(res.assortment.items(), &[0]);
        assert_abs_diff_eq!(res.revenue, 0.5);
        assert_abs_diff_eq!(revenue_gap(&inst, Constraint::Cardinality(1)).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn benchmark_optimum_and_gap() {
        let inst = benchmark(0.25);
        let want = Assortment::from_labels(&[1, 2, 9, 10], 10).unwrap();
        let bf = brute_force_optimal(&inst, Constraint::Cardinality(4)).unwrap();
        assert_eq!(bf.assortment, want);
        let fast = optimal_assortment_cardinality(&inst, 4, DEFAULT_TOL).unwrap();
        assert_eq!(fast.assortment, want);
        assert_abs_diff_eq!(fast.revenue, 2.0 / 3.0, epsilon = 1e-12);
        let gap = revenue_gap(&inst, Constraint::Cardinality(4)).unwrap();
        assert_abs_diff_eq!(gap, 2.0 / 3.0 - 1.75 / 2.75, epsilon = 1e-12);
        assert_abs_diff_eq!(gap, 0.030303030303, epsilon = 1e-9);
    }

    #[test]
    fn zero_revenues_give_empty_set() {
        let inst = MnlInstance::with_unit_v0(vec![0.5, 0.7, 0.2], vec![0.0; 3]).unwrap();
        let bf = brute_force_optimal(&inst, Constraint::Unconstrained).unwrap();
        assert!(bf.assortment.is_empty());
        assert_eq!(bf.revenue, 0.0);
        assert!(optimal_assortment_cardinality(&inst, 2, DEFAULT_TOL).unwrap().assortment.is_empty());
        assert!(optimal_assortment_unconstrained(&inst).assortment.is_empty());
        assert_eq!(revenue_gap(&inst, Constraint::Unconstrained).unwrap(), f64::INFINITY);
    }

    #[test]
    fn k_zero_is_empty() {
        let inst = benchmark(0.1);
        let res = optimal_assortment_cardinality(&inst, 0, DEFAULT_TOL).unwrap();
        assert!(res.assortment.is_empty());
        assert_eq!(res.revenue, 0.0);
    }

    #[test]
    fn zero_attraction_items_are_never_selected() {
        let inst = MnlInstance::with_unit_v0(vec![0.0, 0.4, 0.0], vec![1.0, 0.5, 1.0]).unwrap();
        assert_eq!(optimal_assortment_cardinality(&inst, 3, DEFAULT_TOL).unwrap().assortment.items(), &[1]);
        assert_eq!(optimal_assortment_unconstrained(&inst).assortment.items(), &[1]);
    }

    #[test]
    fn enumeration_guard() {
        let inst = MnlInstance::with_unit_v0(vec![0.1; 26], vec![1.0; 26]).unwrap();
        assert_eq!(brute_force_optimal(&inst, Constraint::Cardinality(2)), Err(OptError::EnumerationRefused { n: 26 }));
        assert!(revenue_gap(&inst, Constraint::Cardinality(2)).is_err());
        assert!(optimal_assortment_cardinality(&inst, 2, 0.0).is_err());
    }

    #[test]
    fn two_candidate_instance_thresholds() {
        // r1 = 1, r2 = (1+e)/(3+2e), the rest 0.01; v = 1/2 except possibly v1.
        let eps = 0.05;
        let mk = |v1: f64| {
            let mut v = vec![0.5; 5];
            v[0] = v1;
            let mut r = vec![0.01; 5];
            r[0] = 1.0;
            r[1] = (1.0 + eps) / (3.0 + 2.0 * eps);
            MnlInstance::with_unit_v0(v, r).unwrap()
        };
        assert_eq!(optimal_assortment_unconstrained(&mk(0.5 + eps)).assortment.items(), &[0]);
        assert_eq!(optimal_assortment_unconstrained(&mk(0.5)).assortment.items(), &[0, 1]);
    }

    #[test]
    fn fast_solvers_match_brute_force() {
        let mut rng = rng_from_seed(2024);
        for _ in 0..200 {
            let n = rng.random_range(1..=12);
            let k = rng.random_range(0..=5);
            let inst = random_instance(&mut rng, n);
            let bf = brute_force_optimal(&inst, Constraint::Cardinality(k)).unwrap();
            let fast = optimal_assortment_cardinality(&inst, k, DEFAULT_TOL).unwrap();
            assert!((bf.revenue - fast.revenue).abs() <= 1e-9);
            assert!(fast.assortment.len() <= k);
            assert!((fast.lambda_star - fast.revenue).abs() <= 10.0 * DEFAULT_TOL);

            let bf_u = brute_force_optimal(&inst, Constraint::Unconstrained).unwrap();
            let un = optimal_assortment_unconstrained(&inst);
            assert!((bf_u.revenue - un.revenue).abs() <= 1e-9);
            for i in 0..n {
                let r = inst.revenues()[i];
                if un.assortment.contains(i) {
                    assert!(r >= un.revenue - 1e-9);
                } else if inst.normalized(i) > 0.0 {
                    assert!(r <= un.revenue + 1e-9);
                }
            }
        }
    }

    #[test]
    fn optimum_is_monotone_in_attractions() {
        let mut rng = rng_from_seed(77);
        for _ in 0..100 {
            let n = rng.random_range(1..=8);
            let lo = random_instance(&mut rng, n);
            let v_hi = lo.attractions().iter().map(|v| v + rng.random::<f64>()).collect();
            let hi = MnlInstance::with_unit_v0(v_hi, lo.revenues().to_vec()).unwrap();
            for c in [Constraint::Unconstrained, Constraint::Cardinality(2)] {
                let a = brute_force_optimal(&lo, c).unwrap().revenue;
                let b = brute_force_optimal(&hi, c).unwrap().revenue;
                assert!(b >= a - 1e-12);
            }
        }
    }

    #[test]
    fn gap_matches_enumerated_second_best() {
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let n = rng.random_range(2..=6);
            let inst = random_instance(&mut rng, n);
            let mut revs: Vec<f64> = (0u32..(1 << n)).map(|m| inst.revenue_unchecked(&mask_items(m, n))).collect();
            revs.sort_by(|a, b| b.total_cmp(a));
            let second = revs.iter().find(|r| revs[0] - **r > TIE_TOL).unwrap();
            assert_abs_diff_eq!(revenue_gap(&inst, Constraint::Unconstrained).unwrap(), revs[0] - second, epsilon = 1e-15);
        }
    }
}
