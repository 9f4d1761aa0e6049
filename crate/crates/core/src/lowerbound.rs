//! Randomized hard instances and the bandit reduction.
//!
//! [`run_reduction`] turns any MNL policy into a Bernoulli multi-armed bandit
//! algorithm on a [`BlockInstance`]: each offered set is answered by at most
//! one arm pull, and the feedback handed back to the policy has exactly the
//! MNL choice law of the block instance.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::model::{Assortment, Choice, MnlInstance};
use crate::policy::{AssortmentPolicy, PolicyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LowerBoundError {
    #[error("need at least {min} arms, got {got}")]
    TooFewArms { min: usize, got: usize },
    #[error("base mean must lie in (0,1), got {0}")]
    InvalidAlpha(f64),
    #[error("biased mean {0} is not below 1")]
    BiasedMeanTooLarge(f64),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("block size must be at least 1")]
    ZeroBlock,
    #[error("policy offered {size} products, more than the block size {k}")]
    SetTooLarge { size: usize, k: usize },
    #[error("policy offered product {product} outside the {n} products of the instance")]
    ProductOutOfRange { product: usize, n: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Bernoulli bandit in which every arm has mean `alpha` except one biased
/// arm with mean `alpha + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MabInstance {
    means: Vec<f64>,
    biased_arm: usize,
    alpha: f64,
    eps: f64,
}

/// Bias of the hard bandit instance: `sqrt(n alpha / horizon) / 100`.
pub fn mab_bias(n_arms: usize, horizon: u64, alpha: f64) -> f64 {
    (n_arms as f64 * alpha / horizon as f64).sqrt() / 100.0
}

impl MabInstance {
    /// Draws the biased arm uniformly at random.
    pub fn generate<R: Rng + ?Sized>(n_arms: usize, horizon: u64, alpha: f64, rng: &mut R) -> Result<Self, LowerBoundError> {
        if n_arms < 2 {
            return Err(LowerBoundError::TooFewArms { min: 2, got: n_arms });
        }
        if horizon == 0 {
            return Err(LowerBoundError::ZeroHorizon);
        }
        let j = rng.random_range(0..n_arms);
        Self::with_biased_arm(n_arms, horizon, alpha, j)
    }

    pub fn with_biased_arm(n_arms: usize, horizon: u64, alpha: f64, biased_arm: usize) -> Result<Self, LowerBoundError> {
        if n_arms < 2 {
            return Err(LowerBoundError::TooFewArms { min: 2, got: n_arms });
        }
        if horizon == 0 {
            return Err(LowerBoundError::ZeroHorizon);
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(LowerBoundError::InvalidAlpha(alpha));
        }
        let eps = mab_bias(n_arms, horizon, alpha);
        if alpha + eps >= 1.0 {
            return Err(LowerBoundError::BiasedMeanTooLarge(alpha + eps));
        }
        let mut means = vec![alpha; n_arms];
        means[biased_arm] = alpha + eps;
        Ok(Self { means, biased_arm, alpha, eps })
    }

    pub fn n_arms(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn biased_arm(&self) -> usize {
        self.biased_arm
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn best_mean(&self) -> f64 {
        self.alpha + self.eps
    }

    pub fn pull<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> bool {
        rng.random::<f64>() < self.means[arm]
    }
}

/// MNL instance with `n * k` unit-revenue products in blocks of `k`; product
/// `i` has attraction equal to the mean of arm `i / k`, and `v0 = k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockInstance {
    mab: MabInstance,
    k: usize,
    mnl: MnlInstance,
}

impl BlockInstance {
    pub fn generate<R: Rng + ?Sized>(n_arms: usize, k: usize, horizon: u64, alpha: f64, rng: &mut R) -> Result<Self, LowerBoundError> {
        Self::from_mab(MabInstance::generate(n_arms, horizon, alpha, rng)?, k)
    }

    pub fn from_mab(mab: MabInstance, k: usize) -> Result<Self, LowerBoundError> {
        if k == 0 {
            return Err(LowerBoundError::ZeroBlock);
        }
        let v: Vec<f64> = (0..mab.n_arms() * k).map(|i| mab.means[i / k]).collect();
        let r = vec![1.0; v.len()];
        let mnl = MnlInstance::new(k as f64, v, r).expect("means in (0,1) and unit revenues are valid");
        Ok(Self { mab, k, mnl })
    }

    pub fn mab(&self) -> &MabInstance {
        &self.mab
    }

    pub fn mnl(&self) -> &MnlInstance {
        &self.mnl
    }

    pub fn block_size(&self) -> usize {
        self.k
    }

    /// Arm backing product `i`.
    pub fn arm_of(&self, product: usize) -> usize {
        product / self.k
    }

    /// Products of the biased block, the optimal size-`k` set.
    pub fn biased_block(&self) -> Assortment {
        let j = self.mab.biased_arm;
        Assortment::from_unsorted((j * self.k..(j + 1) * self.k).collect())
    }

    /// Expected regret of one reduction loop on `s`:
    /// `(V(S*) - V(S)) / (k + V(S))`.
    pub fn loop_regret(&self, s: &Assortment) -> f64 {
        let v_star = self.k as f64 * self.mab.best_mean();
        let v_s: f64 = s.items().iter().map(|&i| self.mnl.attractions()[i]).sum();
        (v_star - v_s) / (self.k as f64 + v_s)
    }
}

/// Unconstrained two-candidate instance: `r = (1, (1+e)/(3+2e), 0.01, ...)`,
/// `v = 1/2` except product 0, which has `1/2 + e` when biased.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoCandidateInstance {
    pub instance: MnlInstance,
    pub biased: bool,
    pub eps: f64,
}

/// `sqrt(1 / (32 horizon))`.
pub fn two_candidate_bias(horizon: u64) -> f64 {
    (1.0 / (32.0 * horizon as f64)).sqrt()
}

impl TwoCandidateInstance {
    pub fn generate<R: Rng + ?Sized>(horizon: u64, n: usize, rng: &mut R) -> Result<Self, LowerBoundError> {
        let biased = rng.random::<bool>();
        Self::with_bias(horizon, n, biased)
    }

    pub fn with_bias(horizon: u64, n: usize, biased: bool) -> Result<Self, LowerBoundError> {
        if n < 2 {
            return Err(LowerBoundError::TooFewArms { min: 2, got: n });
        }
        if horizon == 0 {
            return Err(LowerBoundError::ZeroHorizon);
        }
        let eps = two_candidate_bias(horizon);
        let mut v = vec![0.5; n];
        if biased {
            v[0] += eps;
        }
        let mut r = vec![0.01; n];
        r[0] = 1.0;
        r[1] = (1.0 + eps) / (3.0 + 2.0 * eps);
        let instance = MnlInstance::with_unit_v0(v, r).expect("construction is valid");
        Ok(Self { instance, biased, eps })
    }
}

/// Outcome of one reduction run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReductionStats {
    /// Calls to the wrapped policy.
    pub calls: u64,
    /// Arm pulls performed.
    pub pulls: u64,
    /// Loop iterations per call.
    pub loop_lengths: Vec<u64>,
    /// Arm pulls per call.
    pub call_pulls: Vec<u64>,
    /// Feedback counts: index 0 is no-purchase, `i + 1` is product `i`.
    pub feedback: Vec<u64>,
    /// Per offered set: feedback counts over no-purchase then the set's items
    /// in order.
    pub per_set: BTreeMap<Assortment, Vec<u64>>,
    /// Sum over pulls of the gap to the best arm mean.
    pub pull_regret: f64,
}

impl ReductionStats {
    pub fn calls_per_pull(&self) -> f64 {
        self.calls as f64 / self.pulls as f64
    }
}

/// Runs the reduction until `budget` arm pulls have been made or
/// `max_calls` policy calls have been issued, whichever comes first.
///
/// Each loop iteration draws one uniform: below 1/2 the policy is told
/// nothing was bought and the call ends; the next `|S| / (2k)` of mass pulls
/// the arm behind one offered product (reward 1 ends the call with that
/// product as the purchase); the rest repeats the loop.
pub fn run_reduction<P, R>(
    policy: &mut P,
    inst: &BlockInstance,
    budget: u64,
    max_calls: u64,
    rng: &mut R,
) -> Result<ReductionStats, LowerBoundError>
where
    P: AssortmentPolicy + ?Sized,
    R: Rng + ?Sized,
{
    let n = inst.mnl.n_products();
    let k = inst.k;
    let best = inst.mab.best_mean();
    let mut stats = ReductionStats { feedback: vec![0; n + 1], ..Default::default() };
    while stats.pulls < budget && stats.calls < max_calls {
        let s = policy.next_assortment().assortment.clone();
        if s.len() > k {
            return Err(LowerBoundError::SetTooLarge { size: s.len(), k });
        }
        if let Some(&product) = s.items().last().filter(|&&p| p >= n) {
            return Err(LowerBoundError::ProductOutOfRange { product, n });
        }
        stats.calls += 1;
        let mut iterations = 0u64;
        let pulls_before = stats.pulls;
        let feedback = loop {
            iterations += 1;
            let u: f64 = rng.random();
            if u < 0.5 {
                break Some(Choice::NoPurchase);
            }
            let slot = ((u - 0.5) * 2.0 * k as f64) as usize;
            if slot >= s.len() {
                continue;
            }
            let product = s.items()[slot];
            let arm = inst.arm_of(product);
            stats.pulls += 1;
            stats.pull_regret += best - inst.mab.means[arm];
            if inst.mab.pull(arm, rng) {
                break Some(Choice::Product(product));
            }
            if stats.pulls >= budget {
                break None;
            }
        };
        stats.loop_lengths.push(iterations);
        stats.call_pulls.push(stats.pulls - pulls_before);
        if let Some(choice) = feedback {
            stats.feedback[choice.label()] += 1;
            let slot = match choice {
                Choice::NoPurchase => 0,
                Choice::Product(p) => 1 + s.items().binary_search(&p).expect("offered"),
            };
            stats.per_set.entry(s.clone()).or_insert_with(|| vec![0; s.len() + 1])[slot] += 1;
            policy.observe(choice)?;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::{brute_force_optimal, optimal_assortment_unconstrained};
    use crate::policy::StaticPolicy;
    use crate::{rng_from_seed, Constraint};
    use approx::assert_abs_diff_eq;

    #[test]
    fn mab_bias_formula() {
        let m = MabInstance::with_biased_arm(2, 2500, 0.25, 1).unwrap();
        assert_abs_diff_eq!(m.eps(), (2.0f64 * 0.25 / 2500.0).sqrt() / 100.0, epsilon = 1e-18);
        assert_abs_diff_eq!(m.eps(), 1.414e-4, epsilon = 1e-6);
        assert_eq!(m.means(), &[0.25, 0.25 + m.eps()]);
        assert!(mab_bias(2, 1 << 40, 0.25) < 1e-7);
    }

    #[test]
    fn mab_domain_errors() {
        let mut rng = rng_from_seed(0);
        assert!(MabInstance::generate(1, 10, 0.3, &mut rng).is_err());
        assert!(MabInstance::generate(2, 10, 1.0, &mut rng).is_err());
        assert!(MabInstance::generate(2, 0, 0.3, &mut rng).is_err());
    }

    #[test]
    fn biased_arm_is_uniform() {
        let mut counts = [0u32; 4];
        for seed in 0..4000 {
            let m = MabInstance::generate(4, 100, 0.3, &mut rng_from_seed(seed)).unwrap();
            counts[m.biased_arm()] += 1;
        }
        // Each count is Binomial(4000, 1/4): sd about 27.
        assert!(counts.iter().all(|&c| (c as f64 - 1000.0).abs() < 120.0), "{counts:?}");
    }

    #[test]
    fn block_structure() {
        let mab = MabInstance::with_biased_arm(2, 1000, 0.3, 1).unwrap();
        let b = BlockInstance::from_mab(mab.clone(), 3).unwrap();
        assert_eq!(b.mnl().n_products(), 6);
        assert_eq!(b.mnl().v0(), 3.0);
        assert_eq!(&b.mnl().attractions()[..3], &[0.3; 3]);
        assert!(b.mnl().attractions()[3..].iter().all(|&v| v == 0.3 + mab.eps()));
        let best = brute_force_optimal(b.mnl(), Constraint::Cardinality(3)).unwrap();
        assert_eq!(best.assortment, b.biased_block());
        assert_abs_diff_eq!(b.mnl().total_attraction(&best.assortment) * 3.0, 3.0 * mab.best_mean(), epsilon = 1e-12);
        assert_eq!(b.loop_regret(&best.assortment), 0.0);
        let single = BlockInstance::from_mab(mab, 1).unwrap();
        assert_eq!(single.mnl().n_products(), 2);
        assert!(BlockInstance::from_mab(single.mab().clone(), 0).is_err());
    }

    #[test]
    fn two_candidate_values() {
        let t = TwoCandidateInstance::with_bias(32, 4, false).unwrap();
        assert_abs_diff_eq!(t.eps, 1.0 / 32.0, epsilon = 1e-15);
        let one = Assortment::new(vec![0], 4).unwrap();
        let both = Assortment::new(vec![0, 1], 4).unwrap();
        let r1 = t.instance.expected_revenue(&one).unwrap();
        assert_abs_diff_eq!(r1, 1.0 / 3.0, epsilon = 1e-15);
        let gap = t.instance.expected_revenue(&both).unwrap() - r1;
        assert_abs_diff_eq!(gap, t.eps / (12.0 * (3.0 + 2.0 * t.eps)), epsilon = 1e-15);
        assert_eq!(optimal_assortment_unconstrained(&t.instance).assortment, both);
        let b = TwoCandidateInstance::with_bias(32, 4, true).unwrap();
        assert_eq!(optimal_assortment_unconstrained(&b.instance).assortment, one);
    }

    #[test]
    fn empty_set_never_pulls() {
        let b = BlockInstance::from_mab(MabInstance::with_biased_arm(2, 100, 0.3, 0).unwrap(), 2).unwrap();
        let mut p = StaticPolicy::new(Assortment::empty());
        let stats = run_reduction(&mut p, &b, 10, 1000, &mut rng_from_seed(1)).unwrap();
        assert_eq!(stats.calls, 1000);
        assert_eq!(stats.pulls, 0);
        assert_eq!(stats.feedback[0], 1000);
        let mean_loop = stats.loop_lengths.iter().sum::<u64>() as f64 / 1000.0;
        assert!((mean_loop - 2.0).abs() < 0.25, "{mean_loop}");
    }

    #[test]
    fn oversized_sets_are_rejected() {
        let b = BlockInstance::from_mab(MabInstance::with_biased_arm(2, 100, 0.3, 0).unwrap(), 1).unwrap();
        let mut p = StaticPolicy::new(Assortment::new(vec![0, 1], 2).unwrap());
        let err = run_reduction(&mut p, &b, 10, 10, &mut rng_from_seed(1)).unwrap_err();
        assert_eq!(err, LowerBoundError::SetTooLarge { size: 2, k: 1 });
    }

    #[test]
    fn zero_budget_makes_no_calls() {
        let b = BlockInstance::from_mab(MabInstance::with_biased_arm(2, 100, 0.3, 0).unwrap(), 2).unwrap();
        let mut p = StaticPolicy::new(b.biased_block());
        let stats = run_reduction(&mut p, &b, 0, 100, &mut rng_from_seed(1)).unwrap();
        assert_eq!(stats.calls, 0);
    }
}
