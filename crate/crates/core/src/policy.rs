//! Online assortment policies.
//!
//! Every policy follows the same protocol: call
//! [`AssortmentPolicy::next_assortment`] once per customer, then report that
//! customer's decision through [`AssortmentPolicy::observe`]. A policy keeps
//! offering the same set until a no-purchase closes the epoch.

use thiserror::Error;

use crate::bounds::{exploration_log, radius_from_log, EXPLORATION_SCALE};
use crate::model::{Assortment, Choice, Constraint, MnlInstance};
use crate::optimize::{optimal_assortment, optimal_assortment_cardinality, DEFAULT_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("observe called before any assortment was offered")]
    NothingOffered,
    #[error("product {product} was reported as purchased but is not in the offered set")]
    NotOffered { product: usize },
    #[error("expected {expected} estimates, got {got}")]
    EstimateLength { expected: usize, got: usize },
}

/// The set to show the next customer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDecision<'a> {
    pub assortment: &'a Assortment,
    /// True on the first step of a new epoch.
    pub epoch_boundary: bool,
}

pub trait AssortmentPolicy {
    fn next_assortment(&mut self) -> PolicyDecision<'_>;

    fn observe(&mut self, choice: Choice) -> Result<(), PolicyError>;

    fn name(&self) -> &'static str;

    /// Learning state, for policies that keep per-product epoch estimates.
    fn stats(&self) -> Option<&EpochStats> {
        None
    }

    /// True once the policy will offer the same set for the rest of the run.
    fn is_committed(&self) -> bool {
        false
    }

    /// Customers served in forced-exploration epochs so far.
    fn exploratory_steps(&self) -> u64 {
        0
    }
}

impl<P: AssortmentPolicy + ?Sized> AssortmentPolicy for Box<P> {
    fn next_assortment(&mut self) -> PolicyDecision<'_> {
        (**self).next_assortment()
    }

    fn observe(&mut self, choice: Choice) -> Result<(), PolicyError> {
        (**self).observe(choice)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }

    fn stats(&self) -> Option<&EpochStats> {
        (**self).stats()
    }

    fn is_committed(&self) -> bool {
        (**self).is_committed()
    }

    fn exploratory_steps(&self) -> u64 {
        (**self).exploratory_steps()
    }
}

/// Per-product epoch counts, running means and upper confidence bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    counts: Vec<u64>,
    purchases: Vec<u64>,
    means: Vec<f64>,
    ucb: Vec<f64>,
    epoch: u64,
    time: u64,
}

impl EpochStats {
    /// Fresh state: no observations, every bound at 1, epoch index 1.
    pub fn new(n_products: usize) -> Self {
        Self {
            counts: vec![0; n_products],
            purchases: vec![0; n_products],
            means: vec![0.0; n_products],
            ucb: vec![1.0; n_products],
            epoch: 1,
            time: 0,
        }
    }

    pub fn n_products(&self) -> usize {
        self.counts.len()
    }

    /// Completed epochs in which each product was offered.
    pub fn epoch_counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn cumulative_purchases(&self) -> &[u64] {
        &self.purchases
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn ucb(&self) -> &[f64] {
        &self.ucb
    }

    /// Index of the current (open) epoch, starting at 1.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Customers seen so far.
    pub fn time(&self) -> u64 {
        self.time
    }

    /// Folds one epoch's purchase counts into the estimates of `offered`.
    /// `bonus` maps `(mean, count, log)` to the upper confidence bound.
    fn close_epoch(&mut self, offered: &Assortment, in_epoch: &[u64], bonus: impl Fn(f64, u64, f64) -> f64) {
        let log = exploration_log(self.n_products(), self.epoch);
        for &i in offered.items() {
            self.counts[i] += 1;
            self.purchases[i] += in_epoch[i];
            self.means[i] = self.purchases[i] as f64 / self.counts[i] as f64;
            self.ucb[i] = bonus(self.means[i], self.counts[i], log);
        }
        self.epoch += 1;
    }
}

/// Shared epoch bookkeeping for learning policies.
#[derive(Debug, Clone)]
struct EpochState {
    current: Assortment,
    open: bool,
    in_epoch: Vec<u64>,
}

impl EpochState {
    fn new(n: usize) -> Self {
        Self { current: Assortment::empty(), open: false, in_epoch: vec![0; n] }
    }

    /// Records a purchase; returns true when the choice closes the epoch.
    fn record(&mut self, choice: Choice) -> Result<bool, PolicyError> {
        if !self.open {
            return Err(PolicyError::NothingOffered);
        }
        match choice {
            Choice::Product(i) if self.current.contains(i) => {
                self.in_epoch[i] += 1;
                Ok(false)
            }
            Choice::Product(product) => Err(PolicyError::NotOffered { product }),
            Choice::NoPurchase => Ok(true),
        }
    }

    fn reset(&mut self) {
        for &i in self.current.items() {
            self.in_epoch[i] = 0;
        }
        self.open = false;
    }
}

/// Which confidence bound the UCB policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcbVariant {
    /// Attractions bounded by the no-purchase weight.
    Standard,
    /// Unbounded attractions: wider radius plus forced exploration of
    /// under-sampled products.
    General,
}

/// Epoch-based UCB policy.
#[derive(Debug, Clone)]
pub struct UcbPolicy {
    variant: UcbVariant,
    constraint: Constraint,
    revenues: Vec<f64>,
    stats: EpochStats,
    state: EpochState,
    exploring: bool,
    exploratory_epochs: u64,
    exploratory_steps: u64,
}

impl UcbPolicy {
    /// `revenues` are the known per-unit revenues; only attractions are
    /// learned.
    pub fn new(revenues: Vec<f64>, constraint: Constraint, variant: UcbVariant) -> Self {
        let n = revenues.len();
        Self {
            variant,
            constraint,
            revenues,
            stats: EpochStats::new(n),
            state: EpochState::new(n),
            exploring: false,
            exploratory_epochs: 0,
            exploratory_steps: 0,
        }
    }

    pub fn standard(revenues: Vec<f64>, constraint: Constraint) -> Self {
        Self::new(revenues, constraint, UcbVariant::Standard)
    }

    pub fn general(revenues: Vec<f64>, constraint: Constraint) -> Self {
        Self::new(revenues, constraint, UcbVariant::General)
    }

    pub fn variant(&self) -> UcbVariant {
        self.variant
    }

    /// Epochs opened in forced-exploration mode.
    pub fn exploratory_epochs(&self) -> u64 {
        self.exploratory_epochs
    }

    /// Whether the current epoch was opened in forced-exploration mode.
    pub fn is_exploring(&self) -> bool {
        self.exploring
    }

    /// The optimistic assortment for the current bounds.
    pub fn optimistic_assortment(&self) -> Assortment {
        let ucb = MnlInstance::with_unit_v0(self.stats.ucb.clone(), self.revenues.clone()).expect("bounds are finite and non-negative");
        optimal_assortment(&ucb, self.constraint).assortment
    }

    fn exploration_threshold(&self) -> f64 {
        EXPLORATION_SCALE * exploration_log(self.stats.n_products(), self.stats.epoch)
    }

    fn choose(&self) -> (Assortment, bool) {
        let greedy = self.optimistic_assortment();
        if self.variant == UcbVariant::Standard {
            return (greedy, false);
        }
        let threshold = self.exploration_threshold();
        let counts = &self.stats.counts;
        if !greedy.items().iter().any(|&i| (counts[i] as f64) < threshold) {
            return (greedy, false);
        }
        let mut under: Vec<usize> = (0..counts.len()).filter(|&i| (counts[i] as f64) < threshold).collect();
        under.sort_by_key(|&i| (counts[i], i));
        under.truncate(self.constraint.max_size(counts.len()));
        (Assortment::from_unsorted(under), true)
    }
}

impl AssortmentPolicy for UcbPolicy {
    fn next_assortment(&mut self) -> PolicyDecision<'_> {
        let boundary = !self.state.open;
        if boundary {
            let (set, exploring) = self.choose();
            self.state.current = set;
            self.state.open = true;
            self.exploring = exploring;
            self.exploratory_epochs += exploring as u64;
        }
        self.exploratory_steps += self.exploring as u64;
        self.stats.time += 1;
        PolicyDecision { assortment: &self.state.current, epoch_boundary: boundary }
    }

    fn observe(&mut self, choice: Choice) -> Result<(), PolicyError> {
        if !self.state.record(choice)? {
            return Ok(());
        }
        let general = self.variant == UcbVariant::General;
        self.stats.close_epoch(&self.state.current, &self.state.in_epoch, |mean, count, log| {
            let scale = if general { mean.sqrt().max(mean) } else { mean.sqrt() };
            mean + radius_from_log(scale, count, log)
        });
        self.state.reset();
        Ok(())
    }

    fn name(&self) -> &'static str {
        match self.variant {
            UcbVariant::Standard => "ucb",
            UcbVariant::General => "ucb-general",
        }
    }

    fn stats(&self) -> Option<&EpochStats> {
        Some(&self.stats)
    }

    fn exploratory_steps(&self) -> u64 {
        self.exploratory_steps
    }
}

/// Epochs per product required before committing: `ceil(20 ln horizon)`.
pub fn exploration_target(horizon: f64) -> u64 {
    // The slack keeps exact integers such as 20 ln(e^5) from rounding up.
    (20.0 * horizon.ln() - 1e-9).ceil().max(1.0) as u64
}

/// What the exploration target of [`ExploreThenExploit`] counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExplorationUnit {
    /// Completed epochs in which the product was offered.
    #[default]
    Epochs,
    /// Customers who were shown the product; exploration still ends on an
    /// epoch boundary.
    Customers,
}

/// Explore-then-exploit baseline: round-robin over disjoint batches of at
/// most `k` products until each has reached [`exploration_target`], then
/// offer the plug-in optimum forever.
#[derive(Debug, Clone)]
pub struct ExploreThenExploit {
    k: usize,
    target: u64,
    unit: ExplorationUnit,
    exposure: Vec<u64>,
    revenues: Vec<f64>,
    stats: EpochStats,
    state: EpochState,
    batches: Vec<Assortment>,
    cursor: usize,
    committed: Option<Assortment>,
}

impl ExploreThenExploit {
    /// Counts the exploration target in epochs.
    pub fn new(revenues: Vec<f64>, k: usize, horizon: u64) -> Self {
        Self::with_unit(revenues, k, horizon, ExplorationUnit::Epochs)
    }

    pub fn with_unit(revenues: Vec<f64>, k: usize, horizon: u64, unit: ExplorationUnit) -> Self {
        let n = revenues.len();
        let k = k.clamp(1, n.max(1));
        let batches = (0..n).collect::<Vec<_>>().chunks(k).map(|c| Assortment::from_unsorted(c.to_vec())).collect();
        Self {
            k,
            target: exploration_target(horizon as f64),
            unit,
            exposure: vec![0; n],
            revenues,
            stats: EpochStats::new(n),
            state: EpochState::new(n),
            batches,
            cursor: 0,
            committed: None,
        }
    }

    pub fn target(&self) -> u64 {
        self.target
    }

    pub fn unit(&self) -> ExplorationUnit {
        self.unit
    }

    /// Customers who were shown each product during exploration.
    pub fn exposure(&self) -> &[u64] {
        &self.exposure
    }

    /// The exploitation set, once exploration has finished.
    pub fn committed_assortment(&self) -> Option<&Assortment> {
        self.committed.as_ref()
    }

    /// Replaces the estimates and moves straight to exploitation.
    pub fn plant_estimates(&mut self, means: &[f64]) -> Result<(), PolicyError> {
        if means.len() != self.stats.n_products() {
            return Err(PolicyError::EstimateLength { expected: self.stats.n_products(), got: means.len() });
        }
        self.stats.means.copy_from_slice(means);
        self.commit();
        Ok(())
    }

    fn commit(&mut self) {
        let est =
            MnlInstance::with_unit_v0(self.stats.means.clone(), self.revenues.clone()).expect("epoch means are finite and non-negative");
        let best = optimal_assortment_cardinality(&est, self.k, DEFAULT_TOL).expect("default tolerance is positive");
        self.committed = Some(best.assortment);
    }

    fn batch_done(&self, b: usize) -> bool {
        let progress = match self.unit {
            ExplorationUnit::Epochs => &self.stats.counts,
            ExplorationUnit::Customers => &self.exposure,
        };
        self.batches[b].items().iter().all(|&i| progress[i] >= self.target)
    }

    fn next_batch(&mut self) -> Option<Assortment> {
        for step in 0..self.batches.len() {
            let b = (self.cursor + step) % self.batches.len();
            if !self.batch_done(b) {
                self.cursor = (b + 1) % self.batches.len();
                return Some(self.batches[b].clone());
            }
        }
        None
    }
}

impl AssortmentPolicy for ExploreThenExploit {
    fn next_assortment(&mut self) -> PolicyDecision<'_> {
        let boundary = !self.state.open;
        if boundary {
            let set = match &self.committed {
                Some(s) => s.clone(),
                None => match self.next_batch() {
                    Some(batch) => batch,
                    None => {
                        self.commit();
                        self.committed.clone().expect("just committed")
                    }
                },
            };
            self.state.current = set;
            self.state.open = true;
        }
        self.stats.time += 1;
        PolicyDecision { assortment: &self.state.current, epoch_boundary: boundary }
    }

    fn observe(&mut self, choice: Choice) -> Result<(), PolicyError> {
        let closed = self.state.record(choice)?;
        if self.committed.is_none() {
            for &i in self.state.current.items() {
                self.exposure[i] += 1;
            }
        }
        if !closed {
            return Ok(());
        }
        if self.committed.is_none() {
            self.stats.close_epoch(&self.state.current, &self.state.in_epoch, |mean, _, _| mean);
            if (0..self.batches.len()).all(|b| self.batch_done(b)) {
                self.commit();
            }
        } else {
            self.stats.epoch += 1;
        }
        self.state.reset();
        Ok(())
    }

    fn name(&self) -> &'static str {
        "explore-exploit"
    }

    fn stats(&self) -> Option<&EpochStats> {
        Some(&self.stats)
    }

    fn is_committed(&self) -> bool {
        self.committed.is_some()
    }
}

/// Offers one fixed set forever. [`StaticPolicy::oracle`] uses the true
/// optimum.
#[derive(Debug, Clone)]
pub struct StaticPolicy {
    assortment: Assortment,
    open: bool,
}

impl StaticPolicy {
    pub fn new(assortment: Assortment) -> Self {
        Self { assortment, open: false }
    }

    pub fn oracle(inst: &MnlInstance, constraint: Constraint) -> Self {
        Self::new(optimal_assortment(inst, constraint).assortment)
    }

    pub fn assortment(&self) -> &Assortment {
        &self.assortment
    }
}

impl AssortmentPolicy for StaticPolicy {
    fn next_assortment(&mut self) -> PolicyDecision<'_> {
        let boundary = !self.open;
        self.open = true;
        PolicyDecision { assortment: &self.assortment, epoch_boundary: boundary }
    }

    fn observe(&mut self, choice: Choice) -> Result<(), PolicyError> {
        if !self.open {
            return Err(PolicyError::NothingOffered);
        }
        match choice {
            Choice::NoPurchase => self.open = false,
            Choice::Product(i) if self.assortment.contains(i) => {}
            Choice::Product(product) => return Err(PolicyError::NotOffered { product }),
        }
        Ok(())
    }

    fn name(&self) -> &'static str {
        "oracle"
    }

    fn is_committed(&self) -> bool {
        true
    }
}
