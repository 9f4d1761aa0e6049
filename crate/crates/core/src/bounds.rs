//! Confidence radii and concentration bounds for epoch estimates.
//!
//! Per-epoch purchase counts are geometric, so the tail bounds here are
//! multiplicative Chernoff bounds for means of i.i.d. geometric variables
//! with mean `mu` (success probability `1 / (1 + mu)`).

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use thiserror::Error;

/// Scale of the exploration bonus in the confidence radius.
pub const EXPLORATION_SCALE: f64 = 48.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("epoch count must be at least 1")]
    ZeroCount,
    #[error("epoch index must be at least 1")]
    ZeroEpoch,
    #[error("product count must be at least 1")]
    NoProducts,
    #[error("mean must be finite and non-negative, got {0}")]
    InvalidMean(f64),
    #[error("relative deviation must be positive and finite, got {0}")]
    InvalidDelta(f64),
    #[error("lower tail needs delta in (0,1), got {0}")]
    LowerDeltaRange(f64),
    #[error("probability arguments must lie in (0,1), got ({0}, {1})")]
    ProbabilityDomain(f64, f64),
    #[error("kl bound needs alpha > 0, eps in (0, 1/4] and alpha + eps < 1, got alpha={alpha}, eps={eps}")]
    KlDomain { alpha: f64, eps: f64 },
}

/// `ln(sqrt(n) * ell + 1)`, the log factor shared by all radii.
pub fn exploration_log(n_products: usize, epoch: u64) -> f64 {
    ((n_products as f64).sqrt() * epoch as f64 + 1.0).ln()
}

/// `scale * sqrt(48 log / count) + 48 log / count`.
pub fn radius_from_log(scale: f64, count: u64, log: f64) -> f64 {
    let c = EXPLORATION_SCALE * log / count as f64;
    scale * c.sqrt() + c
}

fn check_radius_args(mean: f64, count: u64, epoch: u64, n_products: usize) -> Result<(), BoundsError> {
    if count == 0 {
        return Err(BoundsError::ZeroCount);
    }
    if epoch == 0 {
        return Err(BoundsError::ZeroEpoch);
    }
    if n_products == 0 {
        return Err(BoundsError::NoProducts);
    }
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(BoundsError::InvalidMean(mean));
    }
    Ok(())
}

/// Confidence radius for a product observed in `count` epochs.
pub fn ucb_radius(mean: f64, count: u64, epoch: u64, n_products: usize) -> Result<f64, BoundsError> {
    check_radius_args(mean, count, epoch, n_products)?;
    Ok(radius_from_log(mean.sqrt(), count, exploration_log(n_products, epoch)))
}

/// Radius for unbounded attractions: the `sqrt(mean)` factor becomes
/// `max(sqrt(mean), mean)`.
pub fn ucb2_radius(mean: f64, count: u64, epoch: u64, n_products: usize) -> Result<f64, BoundsError> {
    check_radius_args(mean, count, epoch, n_products)?;
    Ok(radius_from_log(mean.sqrt().max(mean), count, exploration_log(n_products, epoch)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBoundQuery {
    mu: f64,
    n: u64,
    delta: f64,
}

impl TailBoundQuery {
    pub fn new(mu: f64, n: u64, delta: f64) -> Result<Self, BoundsError> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(BoundsError::InvalidMean(mu));
        }
        if n == 0 {
            return Err(BoundsError::ZeroCount);
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(BoundsError::InvalidDelta(delta));
        }
        Ok(Self { mu, n, delta })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Which side of the mean a tail bound controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Upper,
    Lower,
}

impl TailSide {
    pub fn name(self) -> &'static str {
        match self {
            TailSide::Upper => "upper",
            TailSide::Lower => "lower",
        }
    }
}

fn clamp_exp(exponent: f64) -> f64 {
    exponent.exp().min(1.0)
}

/// Bound on `P(mean of n draws > (1 + delta) mu)`.
pub fn geometric_upper_tail_bound(q: &TailBoundQuery) -> f64 {
    let TailBoundQuery { mu, n, delta } = *q;
    let n = n as f64;
    let a = 1.0 + mu;
    let exponent = if mu <= 1.0 {
        -n * mu * delta * delta / (2.0 * (1.0 + delta) * a * a)
    } else if delta < 1.0 {
        -n * delta * delta * mu * mu * (3.0 - 2.0 * delta * mu / a) / (6.0 * a * a)
    } else {
        -n * delta * mu * mu * (3.0 - 2.0 * mu / a) / (6.0 * a * a)
    };
    clamp_exp(exponent)
}

/// Bound on `P(mean of n draws < (1 - delta) mu)`; needs `delta < 1`.
pub fn geometric_lower_tail_bound(q: &TailBoundQuery) -> Result<f64, BoundsError> {
    let TailBoundQuery { mu, n, delta } = *q;
    if delta >= 1.0 {
        return Err(BoundsError::LowerDeltaRange(delta));
    }
    let n = n as f64;
    let a = 1.0 + mu;
    let exponent = if mu <= 1.0 {
        -n * delta * delta * mu * (3.0 - 2.0 * delta * mu / a) / (6.0 * a * a)
    } else {
        -n * delta * delta * mu * mu / (2.0 * a * a)
    };
    Ok(clamp_exp(exponent))
}

/// Dispatches on `side`.
pub fn geometric_tail_bound(q: &TailBoundQuery, side: TailSide) -> Result<f64, BoundsError> {
    match side {
        TailSide::Upper => Ok(geometric_upper_tail_bound(q)),
        TailSide::Lower => geometric_lower_tail_bound(q),
    }
}

/// Monte-Carlo estimate of the tail probability bounded above.
///
/// The sum of `n` geometric draws is negative binomial, sampled as a
/// gamma-Poisson mixture so each trial costs O(1).
pub fn simulate_tail_frequency<R: Rng + ?Sized>(q: &TailBoundQuery, side: TailSide, trials: u64, rng: &mut R) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let n = q.n as f64;
    let threshold = match side {
        TailSide::Upper => n * (1.0 + q.delta) * q.mu,
        TailSide::Lower => n * (1.0 - q.delta) * q.mu,
    };
    // Sums are integers; the slack keeps exact-threshold sums on the
    // correct side of the strict inequality.
    let slack = 1e-9 * threshold.max(1.0);
    let gamma = (q.mu > 0.0).then(|| Gamma::new(n, q.mu).expect("positive shape and scale"));
    let mut hits = 0u64;
    for _ in 0..trials {
        let sum = match &gamma {
            Some(g) => {
                let lambda = g.sample(rng);
                if lambda > 0.0 {
                    Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(0.0)
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        let hit = match side {
            TailSide::Upper => sum > threshold + slack,
            TailSide::Lower => sum < threshold - slack,
        };
        hits += hit as u64;
    }
    hits as f64 / trials as f64
}

/// `KL(Bernoulli(a) || Bernoulli(b))` in nats.
pub fn bernoulli_kl(a: f64, b: f64) -> Result<f64, BoundsError> {
    let inside = |x: f64| x > 0.0 && x < 1.0;
    if !(inside(a) && inside(b)) {
        return Err(BoundsError::ProbabilityDomain(a, b));
    }
    // ln_1p keeps the result accurate when b is very close to a.
    Ok(-a * ((b - a) / a).ln_1p() - (1.0 - a) * ((a - b) / (1.0 - a)).ln_1p())
}

/// Whether `KL(alpha || alpha + eps) <= 4 eps^2 / alpha`.
pub fn kl_bound_holds(alpha: f64, eps: f64) -> Result<bool, BoundsError> {
    if !(alpha > 0.0 && eps > 0.0 && eps <= 0.25 && alpha + eps < 1.0) {
        return Err(BoundsError::KlDomain { alpha, eps });
    }
    Ok(bernoulli_kl(alpha, alpha + eps)? <= 4.0 * eps * eps / alpha)
}
