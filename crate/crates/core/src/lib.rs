//! Epoch-based UCB learning for dynamic assortment selection under the
//! multinomial-logit (MNL) choice model.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: MNL instances, exact choice probabilities and revenue, seeded
//!   sampling of single choices and whole no-purchase-terminated epochs.
//! - [`optimize`]: static assortment optimization (unconstrained and
//!   cardinality-constrained) plus a brute-force oracle and the revenue gap.
//! - [`bounds`]: confidence radii, multiplicative tail bounds for geometric
//!   means and the Bernoulli KL bound.
//! - [`policy`]: the online policies (epoch UCB, its general-parameter
//!   variant, explore-then-exploit, static/oracle) behind one protocol.
//! - [`lowerbound`]: randomized hard instances and the bandit reduction.
//! - [`experiments`]: regret harness, Monte-Carlo aggregation, curve fits and
//!   diagnostics.
//! - [`data`]: car-evaluation ingestion, one-hot encoding and the regularized
//!   logistic fit that produces feature-based ground truth.
//!
//! Product indices are 0-based everywhere in the API. The no-purchase
//! alternative is [`Choice::NoPurchase`], never an index.

pub mod bounds;
pub mod data;
pub mod experiments;
pub mod lowerbound;
pub mod model;
pub mod optimize;
pub mod policy;
pub mod stats;

pub use bounds::{BoundsError, TailBoundQuery, TailSide};
pub use data::{CarRecord, DataError, MleConfig, MleFit};
pub use experiments::{AggregateResult, ExperimentError, RegretCurve, RunConfig};
pub use lowerbound::{BlockInstance, LowerBoundError, MabInstance, ReductionStats, TwoCandidateInstance};
pub use model::{Assortment, Choice, Constraint, EpochTrace, MnlInstance, ModelError};
pub use optimize::{OptError, OptResult};
pub use policy::{AssortmentPolicy, EpochStats, ExplorationUnit, ExploreThenExploit, PolicyDecision, PolicyError, StaticPolicy, UcbPolicy};

/// Deterministic RNG used for every simulation in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Builds the simulation RNG for a seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}
