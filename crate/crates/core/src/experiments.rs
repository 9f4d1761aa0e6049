//! Regret simulation, Monte-Carlo aggregation, curve fits and diagnostics.

use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::exploration_log;
use crate::model::{Assortment, Choice, Constraint, MnlInstance, ModelError};
use crate::optimize::{optimal_assortment, revenue_gap, OptError};
use crate::policy::{AssortmentPolicy, ExplorationUnit, ExploreThenExploit, PolicyError};
use crate::rng_from_seed;
use crate::stats::{mean, ols, std_error, LinearFit};

/// Cardinality cap used with [`benchmark_instance`].
pub const BENCHMARK_K: usize = 4;

/// Products that carry the extra attraction in [`benchmark_instance`].
pub const BENCHMARK_BOOSTED: [usize; 4] = [0, 1, 8, 9];

/// Constants of the confidence band that defines a good epoch.
pub const GOOD_EPOCH_C1: f64 = 13.384260859804926; // sqrt(72) + sqrt(24)
pub const GOOD_EPOCH_C2: f64 = 144.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("eps outside the admissible range (0, 0.25), got {0}")]
    InvalidEps(f64),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("need at least one run")]
    NoRuns,
    #[error("policy offered product {product} but the instance has {n}")]
    ProductOutOfRange { product: usize, n: usize },
    #[error("policy offered {size} products under a cap of {cap}")]
    Infeasible { size: usize, cap: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Opt(#[from] OptError),
}

/// Ten unit-revenue products, attraction `0.25 + eps` for products 1, 2, 9
/// and 10 (0-based 0, 1, 8, 9) and `0.25` otherwise.
pub fn benchmark_instance(eps: f64) -> Result<MnlInstance, ExperimentError> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(ExperimentError::InvalidEps(eps));
    }
    benchmark_instance_closed(eps)
}

/// Same as [`benchmark_instance`] but also accepts `eps = 0.25`, the largest
/// separation used in the experiments.
pub fn benchmark_instance_closed(eps: f64) -> Result<MnlInstance, ExperimentError> {
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(ExperimentError::InvalidEps(eps));
    }
    let v = (0..10).map(|i| if BENCHMARK_BOOSTED.contains(&i) { 0.25 + eps } else { 0.25 }).collect();
    Ok(MnlInstance::with_unit_v0(v, vec![1.0; 10])?)
}

/// Sampling grid: `round(sqrt(2)^k)` for every `k` below the horizon, then
/// the horizon itself.
pub fn curve_grid(horizon: u64) -> Vec<u64> {
    let mut grid = Vec::new();
    let mut x = 1.0f64;
    while (x.round() as u64) < horizon {
        let t = x.round() as u64;
        if grid.last() != Some(&t) {
            grid.push(t);
        }
        x *= std::f64::consts::SQRT_2;
    }
    if horizon > 0 {
        grid.push(horizon);
    }
    grid
}

/// Cumulative regret sampled on an increasing time grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretCurve {
    pub t_grid: Vec<u64>,
    pub cum_regret: Vec<f64>,
}

impl RegretCurve {
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }

    pub fn terminal(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }

    /// Points with `lo <= t <= hi`.
    pub fn window(&self, lo: u64, hi: u64) -> RegretCurve {
        let (t_grid, cum_regret) =
            self.t_grid.iter().zip(&self.cum_regret).filter(|(t, _)| (lo..=hi).contains(*t)).map(|(t, y)| (*t, *y)).unzip();
        RegretCurve { t_grid, cum_regret }
    }

    /// Points with `t >= lo`.
    pub fn tail(&self, lo: u64) -> RegretCurve {
        self.window(lo, u64::MAX)
    }
}

fn fit_transformed(curve: &RegretCurve, f: impl Fn(f64) -> f64) -> Option<LinearFit> {
    if curve.len() < 3 {
        return None;
    }
    let x: Vec<f64> = curve.t_grid.iter().map(|&t| f(t as f64)).collect();
    ols(&x, &curve.cum_regret)
}

/// `y = b1 ln t + b0`.
pub fn fit_log(curve: &RegretCurve) -> Option<LinearFit> {
    fit_transformed(curve, f64::ln)
}

/// `y = b1 sqrt(t) + b0`.
pub fn fit_sqrt(curve: &RegretCurve) -> Option<LinearFit> {
    fit_transformed(curve, f64::sqrt)
}

/// `ln y = b ln t + ln a` over `lo <= t <= hi`; the slope is the growth
/// exponent. Points with non-positive regret are skipped.
pub fn fit_power(curve: &RegretCurve, lo: u64, hi: u64) -> Option<LinearFit> {
    let w = curve.window(lo, hi);
    let (x, y): (Vec<f64>, Vec<f64>) =
        w.t_grid.iter().zip(&w.cum_regret).filter(|(_, y)| **y > 0.0).map(|(t, y)| ((*t as f64).ln(), y.ln())).unzip();
    if x.len() < 3 {
        return None;
    }
    ols(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub horizon: u64,
    /// Charge `R* - r(c_t)` instead of the expected gap.
    pub realized: bool,
    /// Keep one [`EpochRecord`] per epoch.
    pub record_epochs: bool,
}

impl RunConfig {
    pub fn new(horizon: u64) -> Self {
        Self { horizon, realized: false, record_epochs: false }
    }
}

/// One epoch of a run, with the policy's estimates at its start.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    /// First time step of the epoch (1-based).
    pub start: u64,
    pub length: u64,
    pub assortment: Assortment,
    /// False for an epoch cut off by the horizon.
    pub completed: bool,
    pub ucb: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub curve: RegretCurve,
    /// Sum over epochs of `(1 + V(S)) (R* - R(S))`.
    pub epoch_regret: f64,
    pub epochs: Vec<EpochRecord>,
    /// Steps spent in forced-exploration epochs.
    pub exploratory_steps: u64,
}

/// Cumulative pseudo-regret of `policy` over `horizon` customers.
pub fn run_regret<P, R>(
    policy: &mut P,
    inst: &MnlInstance,
    constraint: Constraint,
    horizon: u64,
    rng: &mut R,
) -> Result<RegretCurve, ExperimentError>
where
    P: AssortmentPolicy + ?Sized,
    R: rand::Rng + ?Sized,
{
    Ok(run_experiment(policy, inst, constraint, &RunConfig::new(horizon), rng)?.curve)
}

/// Drives the interaction protocol for `cfg.horizon` steps.
///
/// Once a policy reports it is committed to a single set, the remaining
/// expected regret is added in closed form (pseudo-regret mode only).
pub fn run_experiment<P, R>(
    policy: &mut P,
    inst: &MnlInstance,
    constraint: Constraint,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<RunOutcome, ExperimentError>
where
    P: AssortmentPolicy + ?Sized,
    R: rand::Rng + ?Sized,
{
    if cfg.horizon == 0 {
        return Err(ExperimentError::ZeroHorizon);
    }
    let n = inst.n_products();
    let r_star = optimal_assortment(inst, constraint).revenue;
    let grid = curve_grid(cfg.horizon);
    let mut curve = RegretCurve { t_grid: grid.clone(), cum_regret: Vec::with_capacity(grid.len()) };
    let mut next = 0;
    let mut cum = 0.0;
    let mut epoch_regret = 0.0;
    let mut gap = 0.0;
    let mut epochs = Vec::new();
    let mut epoch_index = 0u64;
    let mut t = 1;
    while t <= cfg.horizon {
        if !cfg.realized && !cfg.record_epochs && policy.is_committed() {
            let s = policy.next_assortment().assortment;
            let g = r_star - inst.revenue_unchecked(s.items());
            for &gt in &grid[next..] {
                curve.cum_regret.push(cum + (gt - t + 1) as f64 * g);
            }
            epoch_regret += (cfg.horizon - t + 1) as f64 * g;
            break;
        }
        let snapshot = cfg.record_epochs.then(|| policy.stats().map(|s| (s.ucb().to_vec(), s.epoch_counts().to_vec())));
        let d = policy.next_assortment();
        if d.epoch_boundary {
            let s = d.assortment;
            if let Some(&product) = s.items().last().filter(|&&p| p >= n) {
                return Err(ExperimentError::ProductOutOfRange { product, n });
            }
            if let Some(cap) = constraint.cap().filter(|&k| s.len() > k) {
                return Err(ExperimentError::Infeasible { size: s.len(), cap });
            }
            gap = r_star - inst.revenue_unchecked(s.items());
            epoch_regret += (1.0 + inst.total_attraction(s)) * gap;
            epoch_index += 1;
            if let Some(snap) = snapshot {
                let (ucb, counts) = snap.unwrap_or_default();
                epochs.push(EpochRecord { epoch: epoch_index, start: t, length: 0, assortment: s.clone(), completed: false, ucb, counts });
            }
        }
        let choice = inst.sample_choice_items(d.assortment.items(), rng);
        cum += if cfg.realized {
            r_star
                - match choice {
                    Choice::NoPurchase => 0.0,
                    Choice::Product(i) => inst.revenues()[i],
                }
        } else {
            gap
        };
        if let Some(rec) = epochs.last_mut() {
            rec.length += 1;
            rec.completed = choice == Choice::NoPurchase;
        }
        policy.observe(choice)?;
        if grid[next] == t {
            curve.cum_regret.push(cum);
            next += 1;
        }
        t += 1;
    }
    Ok(RunOutcome { curve, epoch_regret, epochs, exploratory_steps: policy.exploratory_steps() })
}

/// Mean and standard error of regret curves over independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub t_grid: Vec<u64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub terminal: Vec<f64>,
    pub curves: Vec<RegretCurve>,
    pub epoch_regret: Vec<f64>,
    pub exploratory_steps: Vec<u64>,
    pub n_runs: usize,
    pub base_seed: u64,
}

impl AggregateResult {
    pub fn mean_curve(&self) -> RegretCurve {
        RegretCurve { t_grid: self.t_grid.clone(), cum_regret: self.mean.clone() }
    }

    pub fn mean_terminal(&self) -> f64 {
        mean(&self.terminal)
    }

    pub fn terminal_stderr(&self) -> f64 {
        std_error(&self.terminal)
    }

    fn from_runs(runs: Vec<RunOutcome>, base_seed: u64) -> Self {
        let t_grid = runs[0].curve.t_grid.clone();
        let mut mean_curve = Vec::with_capacity(t_grid.len());
        let mut stderr = Vec::with_capacity(t_grid.len());
        let mut column = vec![0.0; runs.len()];
        for j in 0..t_grid.len() {
            for (c, run) in column.iter_mut().zip(&runs) {
                *c = run.curve.cum_regret[j];
            }
            mean_curve.push(mean(&column));
            stderr.push(std_error(&column));
        }
        Self {
            t_grid,
            mean: mean_curve,
            stderr,
            terminal: runs.iter().map(|r| r.curve.terminal()).collect(),
            epoch_regret: runs.iter().map(|r| r.epoch_regret).collect(),
            exploratory_steps: runs.iter().map(|r| r.exploratory_steps).collect(),
            n_runs: runs.len(),
            base_seed,
            curves: runs.into_iter().map(|r| r.curve).collect(),
        }
    }
}

/// Runs `n_runs` independent simulations in parallel; run `k` is seeded with
/// `base_seed + k` and gets a fresh policy from `factory`.
pub fn monte_carlo<P, F>(
    factory: F,
    inst: &MnlInstance,
    constraint: Constraint,
    cfg: &RunConfig,
    n_runs: usize,
    base_seed: u64,
) -> Result<AggregateResult, ExperimentError>
where
    P: AssortmentPolicy,
    F: Fn() -> P + Sync,
{
    if n_runs == 0 {
        return Err(ExperimentError::NoRuns);
    }
    let cfg = RunConfig { record_epochs: false, ..*cfg };
    let runs = (0..n_runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(base_seed.wrapping_add(k));
            let mut policy = factory();
            run_experiment(&mut policy, inst, constraint, &cfg, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AggregateResult::from_runs(runs, base_seed))
}

/// Runs explore-then-exploit until it commits (or the horizon ends) and
/// returns the committed set.
pub fn explore_then_exploit_choice<R: rand::Rng + ?Sized>(
    inst: &MnlInstance,
    k: usize,
    horizon: u64,
    unit: ExplorationUnit,
    rng: &mut R,
) -> Result<Option<Assortment>, ExperimentError> {
    let mut policy = ExploreThenExploit::with_unit(inst.revenues().to_vec(), k, horizon, unit);
    for _ in 0..horizon {
        if policy.is_committed() {
            break;
        }
        let choice = inst.sample_choice_items(policy.next_assortment().assortment.items(), rng);
        policy.observe(choice)?;
    }
    Ok(policy.committed_assortment().cloned())
}

/// Fraction of explore-then-exploit runs on the eps instance whose
/// exploitation set equals the true optimum.
pub fn identify_rate(eps: f64, horizon: u64, n_runs: usize, base_seed: u64) -> Result<f64, ExperimentError> {
    identify_rate_with(eps, horizon, ExplorationUnit::Epochs, n_runs, base_seed)
}

/// [`identify_rate`] with an explicit exploration unit.
pub fn identify_rate_with(eps: f64, horizon: u64, unit: ExplorationUnit, n_runs: usize, base_seed: u64) -> Result<f64, ExperimentError> {
    if n_runs == 0 {
        return Err(ExperimentError::NoRuns);
    }
    let inst = benchmark_instance_closed(eps)?;
    let best = optimal_assortment(&inst, Constraint::Cardinality(BENCHMARK_K)).assortment;
    let hits = (0..n_runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(base_seed.wrapping_add(k));
            explore_then_exploit_choice(&inst, BENCHMARK_K, horizon, unit, &mut rng).map(|s| s.as_ref() == Some(&best))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / n_runs as f64)
}

/// Epoch classification for the well-separated regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodEpochReport {
    pub epochs: u64,
    /// Epochs whose bounds violate the confidence band.
    pub bad_epochs: u64,
    /// Good epochs that offered a set with revenue below the optimum.
    pub good_suboptimal_epochs: u64,
    pub suboptimal_epochs: u64,
    pub gap: f64,
    /// `4 N C ln(N T) / gap^2`.
    pub tau: f64,
}

/// Classifies recorded epochs into good/bad and optimal/suboptimal.
pub fn good_epoch_diagnostics(
    records: &[EpochRecord],
    inst: &MnlInstance,
    constraint: Constraint,
    horizon: u64,
    c: f64,
) -> Result<GoodEpochReport, ExperimentError> {
    let n = inst.n_products();
    let r_star = optimal_assortment(inst, constraint).revenue;
    let gap = revenue_gap(inst, constraint)?;
    let tau = 4.0 * n as f64 * c * ((n as f64) * horizon as f64).ln() / (gap * gap);
    let mut report =
        GoodEpochReport { epochs: records.len() as u64, bad_epochs: 0, good_suboptimal_epochs: 0, suboptimal_epochs: 0, gap, tau };
    for rec in records {
        let log = exploration_log(n, rec.epoch);
        let good = rec.ucb.len() == n
            && (0..n).all(|i| {
                let v = inst.normalized(i);
                let excess = rec.ucb[i] - v;
                let t = rec.counts[i] as f64;
                excess >= 0.0 && (rec.counts[i] == 0 || excess <= GOOD_EPOCH_C1 * (v * log / t).sqrt() + GOOD_EPOCH_C2 * log / t)
            });
        let suboptimal = inst.revenue_unchecked(rec.assortment.items()) < r_star - 1e-12;
        report.bad_epochs += !good as u64;
        report.suboptimal_epochs += suboptimal as u64;
        report.good_suboptimal_epochs += (good && suboptimal) as u64;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{StaticPolicy, UcbPolicy};
    use approx::assert_abs_diff_eq;

    #[test]
    fn benchmark_construction() {
        let inst = benchmark_instance(0.1).unwrap();
        let want = [0.35, 0.35, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.35, 0.35];
        for (a, b) in inst.attractions().iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(inst.v0(), 1.0);
        assert!(benchmark_instance(0.25).is_err());
        assert!(benchmark_instance_closed(0.25).is_ok());
        assert!(benchmark_instance_closed(0.26).is_err());
        assert!(benchmark_instance(0.0).is_err());
    }

    #[test]
    fn grid_shape() {
        assert_eq!(curve_grid(1), vec![1]);
        assert_eq!(curve_grid(10), vec![1, 2, 3, 4, 6, 8, 10]);
        let g = curve_grid(100_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*g.last().unwrap(), 100_000);
        assert!(g.len() < 40);
    }

    #[test]
    fn exact_fits() {
        let t: Vec<u64> = (1..50).map(|k| k * 10).collect();
        let log_curve = RegretCurve { cum_regret: t.iter().map(|&x| 2.0 * (x as f64).ln() + 3.0).collect(), t_grid: t.clone() };
        let f = fit_log(&log_curve).unwrap();
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f.intercept, 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f.r2, 1.0, epsilon = 1e-12);
        let sqrt_curve = RegretCurve { cum_regret: t.iter().map(|&x| 0.5 * (x as f64).sqrt() - 1.0).collect(), t_grid: t.clone() };
        let f = fit_sqrt(&sqrt_curve).unwrap();
        assert_abs_diff_eq!(f.slope, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(f.intercept, -1.0, epsilon = 1e-10);
        let pow_curve = RegretCurve { cum_regret: t.iter().map(|&x| 3.0 * (x as f64).powf(0.6)).collect(), t_grid: t };
        assert_abs_diff_eq!(fit_power(&pow_curve, 1, 10_000).unwrap().slope, 0.6, epsilon = 1e-10);
        assert!(fit_log(&RegretCurve { t_grid: vec![1, 2], cum_regret: vec![0.0, 1.0] }).is_none());
    }

    #[test]
    fn oracle_has_zero_regret() {
        let inst = benchmark_instance(0.1).unwrap();
        let c = Constraint::Cardinality(4);
        let mut p = StaticPolicy::oracle(&inst, c);
        let curve = run_regret(&mut p, &inst, c, 5000, &mut rng_from_seed(1)).unwrap();
        assert!(curve.cum_regret.iter().all(|&x| x == 0.0));
        assert_eq!(curve.len(), curve_grid(5000).len());
    }

    #[test]
    fn single_product_ucb_has_no_regret() {
        let inst = MnlInstance::with_unit_v0(vec![0.7], vec![0.6]).unwrap();
        let c = Constraint::Cardinality(1);
        let mut p = UcbPolicy::standard(vec![0.6], c);
        let curve = run_regret(&mut p, &inst, c, 2000, &mut rng_from_seed(4)).unwrap();
        assert_eq!(curve.terminal(), 0.0);
    }

    #[test]
    fn records_partition_the_horizon() {
        let inst = benchmark_instance(0.1).unwrap();
        let c = Constraint::Cardinality(4);
        let mut p = UcbPolicy::standard(vec![1.0; 10], c);
        let cfg = RunConfig { record_epochs: true, ..RunConfig::new(3000) };
        let out = run_experiment(&mut p, &inst, c, &cfg, &mut rng_from_seed(8)).unwrap();
        assert_eq!(out.epochs.iter().map(|e| e.length).sum::<u64>(), 3000);
        let (last, rest) = out.epochs.split_last().unwrap();
        assert!(rest.iter().all(|e| e.completed));
        assert_eq!(last.start + last.length - 1, 3000);
        assert!(out.epochs.windows(2).all(|w| w[1].start == w[0].start + w[0].length));
        assert!(out.curve.cum_regret.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn monte_carlo_single_run_and_determinism() {
        let inst = benchmark_instance_closed(0.25).unwrap();
        let c = Constraint::Cardinality(4);
        let cfg = RunConfig::new(2000);
        let make = || UcbPolicy::standard(vec![1.0; 10], c);
        let one = monte_carlo(make, &inst, c, &cfg, 1, 11).unwrap();
        assert_eq!(one.mean, one.curves[0].cum_regret);
        assert!(one.stderr.iter().all(|&s| s == 0.0));
        let a = monte_carlo(make, &inst, c, &cfg, 4, 11).unwrap();
        let b = monte_carlo(make, &inst, c, &cfg, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.curves[0], one.curves[0]);
        assert!(monte_carlo(make, &inst, c, &cfg, 0, 11).is_err());
    }

    #[test]
    fn committed_fast_forward_matches_stepping() {
        let inst = benchmark_instance(0.1).unwrap();
        let c = Constraint::Cardinality(4);
        let s = Assortment::new(vec![2, 3, 4, 5], 10).unwrap();
        let gap = optimal_assortment(&inst, c).revenue - inst.expected_revenue(&s).unwrap();
        let mut p = StaticPolicy::new(s);
        let curve = run_regret(&mut p, &inst, c, 1000, &mut rng_from_seed(2)).unwrap();
        for (t, y) in curve.t_grid.iter().zip(&curve.cum_regret) {
            assert_abs_diff_eq!(*y, *t as f64 * gap, epsilon = 1e-9);
        }
    }

    #[test]
    fn planted_identification() {
        let inst = benchmark_instance(0.2).unwrap();
        let mut p = ExploreThenExploit::new(vec![1.0; 10], 4, 1000);
        p.plant_estimates(inst.attractions()).unwrap();
        let best = optimal_assortment(&inst, Constraint::Cardinality(4)).assortment;
        assert_eq!(p.committed_assortment(), Some(&best));
    }

    #[test]
    fn oracle_has_no_suboptimal_epochs() {
        let inst = benchmark_instance_closed(0.25).unwrap();
        let c = Constraint::Cardinality(4);
        let mut p = StaticPolicy::oracle(&inst, c);
        let cfg = RunConfig { record_epochs: true, ..RunConfig::new(2000) };
        let out = run_experiment(&mut p, &inst, c, &cfg, &mut rng_from_seed(3)).unwrap();
        let rep = good_epoch_diagnostics(&out.epochs, &inst, c, 2000, 1.0).unwrap();
        assert_eq!(rep.suboptimal_epochs, 0);
        assert_abs_diff_eq!(rep.gap, 2.0 / 3.0 - 1.75 / 2.75, epsilon = 1e-12);
        assert!(rep.tau > 0.0);
    }
}
