//! MNL instances, choice probabilities, expected revenue and sampling.

use rand::Rng;
use thiserror::Error;

/// Hard cap on the number of steps in one sampled epoch.
pub const MAX_EPOCH_LENGTH: u64 = 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("instance must have at least one product")]
    NoProducts,
    #[error("attraction and revenue vectors differ in length ({v} vs {r})")]
    LengthMismatch { v: usize, r: usize },
    #[error("no-purchase attraction must be positive and finite, got {0}")]
    InvalidV0(f64),
    #[error("attraction of product {index} must be non-negative and finite, got {value}")]
    InvalidAttraction { index: usize, value: f64 },
    #[error("revenue of product {index} must lie in [0, 1], got {value}")]
    InvalidRevenue { index: usize, value: f64 },
    #[error("product index {index} out of range for {n} products")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("assortment items must be strictly increasing")]
    NotStrictlyIncreasing,
    #[error("assortment has {size} items but the cardinality cap is {cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("feature matrix has {rows} rows but {revenues} revenues were given")]
    FeatureRows { rows: usize, revenues: usize },
    #[error("feature row {row} has {len} columns, expected {dim}")]
    FeatureDim { row: usize, len: usize, dim: usize },
    #[error("epoch exceeded {MAX_EPOCH_LENGTH} steps without a no-purchase")]
    EpochTooLong,
}

/// Ground-truth MNL model: attraction parameters and per-unit revenues.
#[derive(Debug, Clone, PartialEq)]
pub struct MnlInstance {
    v0: f64,
    v: Vec<f64>,
    r: Vec<f64>,
}

impl MnlInstance {
    pub fn new(v0: f64, v: Vec<f64>, r: Vec<f64>) -> Result<Self, ModelError> {
        if v.is_empty() {
            return Err(ModelError::NoProducts);
        }
        if v.len() != r.len() {
            return Err(ModelError::LengthMismatch { v: v.len(), r: r.len() });
        }
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(ModelError::InvalidV0(v0));
        }
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0 && x.is_finite())) {
            return Err(ModelError::InvalidAttraction { index, value });
        }
        if let Some((index, &value)) = r.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
            return Err(ModelError::InvalidRevenue { index, value });
        }
        Ok(Self { v0, v, r })
    }

    /// Instance with `v0 = 1`.
    pub fn with_unit_v0(v: Vec<f64>, r: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(1.0, v, r)
    }

    /// `v_i = exp(theta . m_i)`, `v0 = 1`.
    pub fn from_features(theta: &[f64], features: &[Vec<u8>], r: Vec<f64>) -> Result<Self, ModelError> {
        if features.len() != r.len() {
            return Err(ModelError::FeatureRows { rows: features.len(), revenues: r.len() });
        }
        let v = features
            .iter()
            .enumerate()
            .map(|(row, m)| {
                if m.len() != theta.len() {
                    return Err(ModelError::FeatureDim { row, len: m.len(), dim: theta.len() });
                }
                let u: f64 = theta.iter().zip(m).map(|(t, &x)| t * f64::from(x)).sum();
                Ok(u.exp())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(1.0, v, r)
    }

    pub fn n_products(&self) -> usize {
        self.v.len()
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn attractions(&self) -> &[f64] {
        &self.v
    }

    pub fn revenues(&self) -> &[f64] {
        &self.r
    }

    /// Attraction of product `i` relative to the no-purchase option.
    #[inline]
    pub fn normalized(&self, i: usize) -> f64 {
        self.v[i] / self.v0
    }

    /// `B = max(max_i v_i / v0, 1)`.
    pub fn attraction_bound(&self) -> f64 {
        self.v.iter().fold(1.0_f64, |b, &x| b.max(x / self.v0))
    }

    /// Normalized total attraction `V(S) / v0`.
    pub fn total_attraction(&self, s: &Assortment) -> f64 {
        s.items().iter().map(|&i| self.normalized(i)).sum()
    }

    /// Exact MNL choice probabilities for offer set `s`.
    pub fn choice_probabilities(&self, s: &Assortment) -> Result<ChoiceProbabilities, ModelError> {
        s.check_range(self.n_products())?;
        let denom = self.v0 + s.items().iter().map(|&i| self.v[i]).sum::<f64>();
        Ok(ChoiceProbabilities { no_purchase: self.v0 / denom, items: s.items().iter().map(|&i| (i, self.v[i] / denom)).collect() })
    }

    /// Expected single-customer revenue `R(S, v)`.
    pub fn expected_revenue(&self, s: &Assortment) -> Result<f64, ModelError> {
        s.check_range(self.n_products())?;
        Ok(self.revenue_unchecked(s.items()))
    }

    /// Revenue for items already known to be in range.
    #[inline]
    pub(crate) fn revenue_unchecked(&self, items: &[usize]) -> f64 {
        let (num, den) = items.iter().fold((0.0, 1.0), |(num, den), &i| {
            let w = self.normalized(i);
            (num + self.r[i] * w, den + w)
        });
        num / den
    }

    /// Draws one customer decision by inverse CDF over ascending product
    /// index, no-purchase last.
    pub fn sample_choice<R: Rng + ?Sized>(&self, s: &Assortment, rng: &mut R) -> Choice {
        self.sample_choice_items(s.items(), rng)
    }

    #[inline]
    pub(crate) fn sample_choice_items<R: Rng + ?Sized>(&self, items: &[usize], rng: &mut R) -> Choice {
        if items.is_empty() {
            return Choice::NoPurchase;
        }
        let total = self.v0 + items.iter().map(|&i| self.v[i]).sum::<f64>();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for &i in items {
            acc += self.v[i];
            if u < acc {
                return Choice::Product(i);
            }
        }
        Choice::NoPurchase
    }

    /// Offers `s` until the first no-purchase (inclusive).
    pub fn sample_epoch<R: Rng + ?Sized>(&self, s: &Assortment, rng: &mut R) -> Result<EpochTrace, ModelError> {
        s.check_range(self.n_products())?;
        let mut outcomes = Vec::new();
        loop {
            if outcomes.len() as u64 >= MAX_EPOCH_LENGTH {
                return Err(ModelError::EpochTooLong);
            }
            let c = self.sample_choice(s, rng);
            outcomes.push(c);
            if c == Choice::NoPurchase {
                break;
            }
        }
        Ok(EpochTrace { assortment: s.clone(), outcomes })
    }
}

/// Result of [`MnlInstance::choice_probabilities`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceProbabilities {
    pub no_purchase: f64,
    /// `(product, probability)` in the assortment's order.
    pub items: Vec<(usize, f64)>,
}

impl ChoiceProbabilities {
    pub fn of(&self, product: usize) -> f64 {
        self.items.iter().find(|(i, _)| *i == product).map_or(0.0, |(_, p)| *p)
    }

    pub fn total(&self) -> f64 {
        self.no_purchase + self.items.iter().map(|(_, p)| p).sum::<f64>()
    }
}

/// One customer decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Choice {
    NoPurchase,
    Product(usize),
}

impl Choice {
    /// CSV/display label: 0 for no-purchase, `i + 1` for product `i`.
    pub fn label(self) -> usize {
        match self {
            Choice::NoPurchase => 0,
            Choice::Product(i) => i + 1,
        }
    }
}

/// Feasible-family description shared by optimizers and policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Unconstrained,
    Cardinality(usize),
}

impl Constraint {
    pub fn cap(self) -> Option<usize> {
        match self {
            Constraint::Unconstrained => None,
            Constraint::Cardinality(k) => Some(k),
        }
    }

    /// Largest feasible assortment size for `n` products.
    pub fn max_size(self, n: usize) -> usize {
        self.cap().map_or(n, |k| k.min(n))
    }

    pub fn admits(self, s: &Assortment) -> bool {
        self.cap().is_none_or(|k| s.len() <= k)
    }
}

/// A set of offered products, stored as strictly increasing 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Assortment {
    items: Vec<usize>,
}

impl Assortment {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates strict ordering and range.
    pub fn new(items: Vec<usize>, n_products: usize) -> Result<Self, ModelError> {
        if items.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::NotStrictlyIncreasing);
        }
        let s = Self { items };
        s.check_range(n_products)?;
        Ok(s)
    }

    /// Like [`Assortment::new`] but also enforces a cardinality cap.
    pub fn with_constraint(items: Vec<usize>, n_products: usize, constraint: Constraint) -> Result<Self, ModelError> {
        let s = Self::new(items, n_products)?;
        if let Some(cap) = constraint.cap() {
            if s.len() > cap {
                return Err(ModelError::CapExceeded { size: s.len(), cap });
            }
        }
        Ok(s)
    }

    /// Builds from 1-based product labels, sorting and deduplicating.
    pub fn from_labels(labels: &[usize], n_products: usize) -> Result<Self, ModelError> {
        let mut items = Vec::with_capacity(labels.len());
        for &l in labels {
            if l == 0 || l > n_products {
                return Err(ModelError::IndexOutOfRange { index: l, n: n_products });
            }
            items.push(l - 1);
        }
        items.sort_unstable();
        items.dedup();
        Ok(Self { items })
    }

    /// Sorts and deduplicates without a range check.
    pub(crate) fn from_unsorted(mut items: Vec<usize>) -> Self {
        items.sort_unstable();
        items.dedup();
        Self { items }
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    /// 1-based labels, as used in CSV output.
    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.items.binary_search(&i).is_ok()
    }

    fn check_range(&self, n: usize) -> Result<(), ModelError> {
        match self.items.last() {
            Some(&i) if i >= n => Err(ModelError::IndexOutOfRange { index: i, n }),
            _ => Ok(()),
        }
    }
}

/// One epoch: an assortment offered until the first no-purchase.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub assortment: Assortment,
    pub outcomes: Vec<Choice>,
}

impl EpochTrace {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Purchases of `product` within the epoch.
    pub fn purchases_of(&self, product: usize) -> u64 {
        self.outcomes.iter().filter(|c| **c == Choice::Product(product)).count() as u64
    }
}
