//! Subcommand implementations.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mnl_core::bounds::{geometric_tail_bound, simulate_tail_frequency, TailBoundQuery, TailSide};
use mnl_core::data::{self, MleConfig, ATTRIBUTES, FEATURE_DIM};
use mnl_core::experiments::{
    benchmark_instance_closed, explore_then_exploit_choice, fit_log, fit_sqrt, good_epoch_diagnostics, monte_carlo, run_experiment,
    AggregateResult, RunConfig,
};
use mnl_core::lowerbound::{run_reduction, BlockInstance};
use mnl_core::optimize::optimal_assortment;
use mnl_core::{rng_from_seed, AssortmentPolicy, Constraint, ExplorationUnit, ExploreThenExploit, MnlInstance, StaticPolicy, UcbPolicy};

use crate::config::{ExperimentConfig, FeatureFormat, InstanceSpec, PolicyName, UnitName};
use crate::output::{header, read_rows, summary_path, with_suffix, CsvWriter};

type DynPolicy = Box<dyn AssortmentPolicy>;

fn unit(cfg: &ExperimentConfig) -> ExplorationUnit {
    match cfg.exploration_unit {
        UnitName::Epochs => ExplorationUnit::Epochs,
        UnitName::Customers => ExplorationUnit::Customers,
    }
}

fn make_policy(cfg: &ExperimentConfig, inst: &MnlInstance) -> Result<DynPolicy> {
    let r = inst.revenues().to_vec();
    let c = cfg.constraint();
    Ok(match cfg.policy {
        PolicyName::Ucb => Box::new(UcbPolicy::standard(r, c)),
        PolicyName::UcbGeneral => Box::new(UcbPolicy::general(r, c)),
        PolicyName::Oracle => Box::new(StaticPolicy::oracle(inst, c)),
        PolicyName::ExploreExploit => match c {
            Constraint::Cardinality(k) => Box::new(ExploreThenExploit::with_unit(r, k, cfg.horizon, unit(cfg))),
            Constraint::Unconstrained => bail!("explore-exploit needs a cardinality k"),
        },
    })
}

/// Parses a 0/1 matrix file.
fn read_feature_matrix(path: &Path) -> Result<Vec<Vec<u8>>> {
    read_rows(path)?
        .into_iter()
        .enumerate()
        .map(|(row, fields)| {
            fields
                .iter()
                .map(|f| match f.as_str() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => bail!("{}: row {}: feature {f:?} is not 0 or 1", path.display(), row + 1),
                })
                .collect()
        })
        .collect()
}

/// Reads a theta file: one value per data row, in the last column.
pub fn read_theta(path: &Path) -> Result<Vec<f64>> {
    read_rows(path)?
        .into_iter()
        .filter(|fields| fields.first().map(String::as_str) != Some("column"))
        .map(|fields| {
            let last = fields.last().expect("rows are non-empty");
            last.parse::<f64>().with_context(|| format!("{}: bad theta value {last:?}", path.display()))
        })
        .collect()
}

fn load_features(path: &Path, format: FeatureFormat) -> Result<Vec<Vec<u8>>> {
    match format {
        FeatureFormat::Matrix => read_feature_matrix(path),
        FeatureFormat::Car => Ok(data::encode_features(&data::load_car_dataset(path)?)),
    }
}

/// Instances named by the config, each with a label for file names.
pub fn build_instances(cfg: &ExperimentConfig) -> Result<Vec<(String, MnlInstance)>> {
    Ok(match &cfg.instance {
        InstanceSpec::Explicit { v0, v, r } => vec![("explicit".into(), MnlInstance::new(*v0, v.clone(), r.clone())?)],
        InstanceSpec::Benchmark { eps } => {
            eps.iter().map(|&e| Ok((format!("{e}"), benchmark_instance_closed(e)?))).collect::<Result<_>>()?
        }
        InstanceSpec::Features { features, theta, format } => {
            let x = load_features(features, *format)?;
            let theta = read_theta(theta)?;
            let n = x.len();
            let label = features.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "features".into());
            vec![(label, MnlInstance::from_features(&theta, &x, vec![1.0; n])?)]
        }
        InstanceSpec::Lowerbound { arms, alpha, .. } => {
            let k = lowerbound_k(cfg)?;
            let block = BlockInstance::generate(*arms, k, cfg.horizon, *alpha, &mut rng_from_seed(cfg.seed))?;
            vec![("lowerbound".into(), block.mnl().clone())]
        }
    })
}

fn lowerbound_k(cfg: &ExperimentConfig) -> Result<usize> {
    match cfg.constraint() {
        Constraint::Cardinality(k) => Ok(k),
        Constraint::Unconstrained => bail!("the block instance needs a cardinality k"),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub struct RunSummary {
    pub label: String,
    pub aggregate: AggregateResult,
    pub identify_rate: Option<f64>,
}

/// Fraction of explore-then-exploit runs that commit to the optimum; runs
/// use the same seeds as the regret runs.
fn identification(cfg: &ExperimentConfig, inst: &MnlInstance) -> Result<Option<f64>> {
    let (PolicyName::ExploreExploit, Constraint::Cardinality(k)) = (cfg.policy, cfg.constraint()) else {
        return Ok(None);
    };
    let best = optimal_assortment(inst, cfg.constraint()).assortment;
    let mut hits = 0;
    for run in 0..cfg.runs as u64 {
        let mut rng = rng_from_seed(cfg.seed.wrapping_add(run));
        if explore_then_exploit_choice(inst, k, cfg.horizon, unit(cfg), &mut rng)?.as_ref() == Some(&best) {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / cfg.runs as f64))
}

/// `run`: regret curves plus one summary row per instance.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let out = cfg.out_path("curves.csv");
    let instances = build_instances(cfg)?;
    let c = cfg.constraint();
    let run_cfg = RunConfig { realized: cfg.realized, ..RunConfig::new(cfg.horizon) };
    let mut summary = CsvWriter::create(
        &summary_path(&out),
        "summary",
        &header(&[
            "policy",
            "eps_or_label",
            "T",
            "n_runs",
            "mean_terminal_regret",
            "stderr",
            "fit_log_r2",
            "fit_sqrt_r2",
            "identify_rate",
            "tau",
            "bad_epochs",
            "good_suboptimal_epochs",
        ]),
    )?;
    let mut results = Vec::new();
    for (label, inst) in &instances {
        make_policy(cfg, inst)?;
        let agg = monte_carlo(|| make_policy(cfg, inst).expect("checked above"), inst, c, &run_cfg, cfg.runs, cfg.seed)?;
        let path = if instances.len() > 1 { with_suffix(&out, label) } else { out.clone() };
        let mut curves = CsvWriter::create(&path, "curves", &header(&["run_id", "t", "cum_regret"]))?;
        for (run, curve) in agg.curves.iter().enumerate() {
            for (t, r) in curve.t_grid.iter().zip(&curve.cum_regret) {
                curves.row(&[run.to_string(), t.to_string(), format!("{r}")])?;
            }
        }
        curves.finish()?;

        let tail = agg.mean_curve().tail((cfg.horizon / 10).max(1));
        let identify = identification(cfg, inst)?;
        let epochs = match (cfg.tau_c, cfg.policy) {
            (Some(tau_c), PolicyName::Ucb | PolicyName::UcbGeneral) => {
                let mut policy = make_policy(cfg, inst)?;
                let rec_cfg = RunConfig { record_epochs: true, ..run_cfg };
                let outcome = run_experiment(&mut policy, inst, c, &rec_cfg, &mut rng_from_seed(cfg.seed))?;
                Some(good_epoch_diagnostics(&outcome.epochs, inst, c, cfg.horizon, tau_c)?)
            }
            _ => None,
        };
        summary.row(&[
            cfg.policy.as_str().to_string(),
            label.clone(),
            cfg.horizon.to_string(),
            cfg.runs.to_string(),
            format!("{}", agg.mean_terminal()),
            format!("{}", agg.terminal_stderr()),
            fmt_opt(fit_log(&tail).map(|f| f.r2)),
            fmt_opt(fit_sqrt(&tail).map(|f| f.r2)),
            fmt_opt(identify),
            fmt_opt(epochs.map(|e| e.tau)),
            epochs.map(|e| e.bad_epochs.to_string()).unwrap_or_default(),
            epochs.map(|e| e.good_suboptimal_epochs.to_string()).unwrap_or_default(),
        ])?;
        results.push(RunSummary { label: label.clone(), aggregate: agg, identify_rate: identify });
    }
    summary.finish()?;
    Ok(results)
}

/// `lowerbound`: one reduction run per row.
pub fn cmd_lowerbound(cfg: &ExperimentConfig) -> Result<usize> {
    let InstanceSpec::Lowerbound { arms, alpha, budget } = cfg.instance else {
        bail!("lowerbound needs an instance of kind \"lowerbound\"");
    };
    let k = lowerbound_k(cfg)?;
    let budget = budget.unwrap_or(cfg.horizon);
    let n = arms * k;
    let mut names: Vec<String> = header(&["run_id", "budget", "calls", "pulls", "calls_per_pull", "pull_regret", "biased_arm", "fb_none"]);
    names.extend((1..=n).map(|i| format!("fb_{i}")));
    let mut out = CsvWriter::create(&cfg.out_path("reduction.csv"), "reduction", &names)?;
    let mut rows = 0;
    if budget > 0 {
        for run in 0..cfg.runs as u64 {
            let mut rng = rng_from_seed(cfg.seed.wrapping_add(run));
            let inst = BlockInstance::generate(arms, k, cfg.horizon, alpha, &mut rng)?;
            let mut policy = make_policy(cfg, inst.mnl())?;
            let stats = run_reduction(&mut policy, &inst, budget, budget.saturating_mul(100).saturating_add(1000), &mut rng)?;
            let mut fields = vec![
                run.to_string(),
                budget.to_string(),
                stats.calls.to_string(),
                stats.pulls.to_string(),
                format!("{}", stats.calls_per_pull()),
                format!("{}", stats.pull_regret),
                (inst.mab().biased_arm() + 1).to_string(),
            ];
            fields.extend(stats.feedback.iter().map(u64::to_string));
            out.row(&fields)?;
            rows += 1;
        }
    }
    out.finish()?;
    Ok(rows)
}

pub struct BoundsReport {
    pub cells: usize,
    pub violations: usize,
}

/// `bounds-check`: simulated tail frequency against the bound per cell.
/// Lower-tail cells with `delta >= 1` are skipped.
pub fn cmd_bounds_check(cfg: &ExperimentConfig) -> Result<BoundsReport> {
    let grid = &cfg.bounds;
    let mut out = CsvWriter::create(
        &cfg.out_path("bounds.csv"),
        "bounds",
        &header(&["side", "mu", "n", "delta", "bound", "frequency", "mc_stderr", "violation"]),
    )?;
    let mut report = BoundsReport { cells: 0, violations: 0 };
    let mut cell_seed = cfg.seed;
    for &mu in &grid.mu {
        for &n in &grid.n {
            for &delta in &grid.delta {
                let q = TailBoundQuery::new(mu, n, delta)?;
                for side in [TailSide::Upper, TailSide::Lower] {
                    if side == TailSide::Lower && delta >= 1.0 {
                        continue;
                    }
                    let bound = geometric_tail_bound(&q, side)?;
                    let freq = simulate_tail_frequency(&q, side, grid.trials, &mut rng_from_seed(cell_seed));
                    cell_seed = cell_seed.wrapping_add(1);
                    let se = (bound * (1.0 - bound) / grid.trials.max(1) as f64).sqrt();
                    let violation = freq > bound + 3.0 * se + 1e-9;
                    report.cells += 1;
                    report.violations += violation as usize;
                    out.row(&[
                        side.name().to_string(),
                        format!("{mu}"),
                        n.to_string(),
                        format!("{delta}"),
                        format!("{bound}"),
                        format!("{freq}"),
                        format!("{se}"),
                        violation.to_string(),
                    ])?;
                }
            }
        }
    }
    out.finish()?;
    Ok(report)
}

/// Names of the encoded feature columns.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = ATTRIBUTES.iter().flat_map(|(attr, levels)| levels.iter().map(move |l| format!("{attr}={l}"))).collect();
    names.push("intercept".into());
    debug_assert_eq!(names.len(), FEATURE_DIM);
    names
}

pub struct FitReport {
    pub records: usize,
    pub fit: data::MleFit,
}

/// `fitdata`: car records to a theta file.
pub fn cmd_fitdata(data_path: &Path, out: &Path, mle: &MleConfig) -> Result<FitReport> {
    let records = data::load_car_dataset(data_path)?;
    let x = data::encode_features(&records);
    let y = data::purchase_labels(&records);
    let fit = data::fit_theta_mle(&x, &y, mle)?;
    let mut w = CsvWriter::create(out, "theta", &header(&["column", "theta"]))?;
    for (name, t) in feature_names().iter().zip(&fit.theta) {
        w.row(&[name.clone(), format!("{t}")])?;
    }
    w.finish()?;
    Ok(FitReport { records: records.len(), fit })
}
