//! Fixtures shared by the benchmarks.

use mnl_core::{rng_from_seed, MnlInstance};
use rand::Rng;

/// `n` products with attractions in (0, 1] and revenues in [0, 1).
pub fn random_instance(n: usize, seed: u64) -> MnlInstance {
    let mut rng = rng_from_seed(seed);
    let v = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
    let r = (0..n).map(|_| rng.random::<f64>()).collect();
    MnlInstance::with_unit_v0(v, r).expect("valid ranges")
}
