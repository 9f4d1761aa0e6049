//! Car-evaluation ingestion, one-hot encoding and the regularized logistic
//! fit that turns attribute data into a feature-based MNL instance.
//!
//! Records are the seven comma-separated fields of the UCI car file:
//! `buying,maint,doors,persons,lug_boot,safety,class`. A car counts as
//! bought when its class is `acc`, `good` or `vgood`.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::model::{Constraint, MnlInstance, ModelError};

/// Attribute names and their levels, in column order.
pub const ATTRIBUTES: [(&str, &[&str]); 6] = [
    ("buying", &["vhigh", "high", "med", "low"]),
    ("maint", &["vhigh", "high", "med", "low"]),
    ("doors", &["2", "3", "4", "5more"]),
    ("persons", &["2", "4", "more"]),
    ("lug_boot", &["small", "med", "big"]),
    ("safety", &["low", "med", "high"]),
];

/// Indicator columns (21) plus the intercept.
pub const FEATURE_DIM: usize = 22;

/// Column of the constant-1 feature.
pub const INTERCEPT_COLUMN: usize = 21;

/// Cardinality cap for the car experiment.
pub const CAR_CAPACITY: usize = 100;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected 7 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: unknown {attribute} level {value:?}")]
    UnknownLevel { line: usize, attribute: &'static str, value: String },
    #[error("line {line}: unknown class {value:?}")]
    UnknownClass { line: usize, value: String },
    #[error("{rows} feature rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("feature row {row} has {len} columns, expected {dim}")]
    RowWidth { row: usize, len: usize, dim: usize },
    #[error("theta has {got} entries, expected {expected}")]
    ThetaLength { got: usize, expected: usize },
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
    #[error("objective became non-finite at iteration {0}")]
    Diverged(usize),
    #[error("not a one-hot car row")]
    NotOneHot,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rating {
    Unacc,
    Acc,
    Good,
    VGood,
}

impl Rating {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unacc" => Some(Rating::Unacc),
            "acc" => Some(Rating::Acc),
            "good" => Some(Rating::Good),
            "vgood" => Some(Rating::VGood),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rating::Unacc => "unacc",
            Rating::Acc => "acc",
            Rating::Good => "good",
            Rating::VGood => "vgood",
        }
    }

    pub fn is_purchase(self) -> bool {
        self != Rating::Unacc
    }
}

/// One car: the level index of each attribute and its rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CarRecord {
    pub levels: [u8; 6],
    pub rating: Rating,
}

impl fmt::Display for CarRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (a, &l) in ATTRIBUTES.iter().zip(&self.levels) {
            write!(f, "{},", a.1[l as usize])?;
        }
        f.write_str(self.rating.as_str())
    }
}

/// Parses car records from text. Blank lines are skipped.
pub fn parse_car_data(text: &str) -> Result<Vec<CarRecord>, DataError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(DataError::FieldCount { line, found: fields.len() });
        }
        let mut levels = [0u8; 6];
        for (slot, ((attribute, names), value)) in levels.iter_mut().zip(ATTRIBUTES.iter().zip(&fields)) {
            let pos = names.iter().position(|n| n == value).ok_or_else(|| DataError::UnknownLevel {
                line,
                attribute,
                value: value.to_string(),
            })?;
            *slot = pos as u8;
        }
        let rating = Rating::parse(fields[6]).ok_or_else(|| DataError::UnknownClass { line, value: fields[6].to_string() })?;
        out.push(CarRecord { levels, rating });
    }
    Ok(out)
}

pub fn load_car_dataset(path: impl AsRef<Path>) -> Result<Vec<CarRecord>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    parse_car_data(&text)
}

fn column_offsets() -> [usize; 6] {
    let mut offsets = [0; 6];
    for a in 1..6 {
        offsets[a] = offsets[a - 1] + ATTRIBUTES[a - 1].1.len();
    }
    offsets
}

/// One indicator per attribute level, then the intercept.
pub fn encode_record(rec: &CarRecord) -> Vec<u8> {
    let mut row = vec![0u8; FEATURE_DIM];
    for (off, &l) in column_offsets().iter().zip(&rec.levels) {
        row[off + l as usize] = 1;
    }
    row[INTERCEPT_COLUMN] = 1;
    row
}

pub fn encode_features(records: &[CarRecord]) -> Vec<Vec<u8>> {
    records.iter().map(encode_record).collect()
}

/// Inverse of [`encode_record`] on the indicator columns.
pub fn decode_features(row: &[u8]) -> Result<[u8; 6], DataError> {
    if row.len() != FEATURE_DIM {
        return Err(DataError::NotOneHot);
    }
    let mut levels = [0u8; 6];
    for ((slot, off), (_, names)) in levels.iter_mut().zip(column_offsets()).zip(ATTRIBUTES) {
        let block = &row[off..off + names.len()];
        if block.iter().map(|&b| b as usize).sum::<usize>() != 1 {
            return Err(DataError::NotOneHot);
        }
        *slot = block.iter().position(|&b| b == 1).expect("one indicator set") as u8;
    }
    Ok(levels)
}

pub fn purchase_labels(records: &[CarRecord]) -> Vec<bool> {
    records.iter().map(|r| r.rating.is_purchase()).collect()
}

fn dot(theta: &[f64], row: &[u8]) -> f64 {
    theta.iter().zip(row).filter(|(_, &m)| m != 0).map(|(t, _)| t).sum()
}

fn norm(theta: &[f64]) -> f64 {
    theta.iter().map(|t| t * t).sum::<f64>().sqrt()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_data(features: &[Vec<u8>], labels: &[bool], dim: usize) -> Result<(), DataError> {
    if features.len() != labels.len() {
        return Err(DataError::LabelCount { rows: features.len(), labels: labels.len() });
    }
    if let Some((row, f)) = features.iter().enumerate().find(|(_, f)| f.len() != dim) {
        return Err(DataError::RowWidth { row, len: f.len(), dim });
    }
    Ok(())
}

/// Neumaier-compensated sum; the line search compares objectives whose
/// difference is far below the rounding error of a naive sum.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Logistic log-likelihood of the purchase labels minus `||theta||_2`.
pub fn mle_objective(theta: &[f64], features: &[Vec<u8>], labels: &[bool]) -> f64 {
    let ll = compensated_sum(features.iter().zip(labels).map(|(m, &y)| {
        let z = dot(theta, m);
        if y {
            z - softplus(z)
        } else {
            -softplus(z)
        }
    }));
    ll - norm(theta)
}

/// Gradient of [`mle_objective`]; the norm contributes
/// `theta / max(||theta||, 1e-12)`.
pub fn mle_gradient(theta: &[f64], features: &[Vec<u8>], labels: &[bool]) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    for (m, &y) in features.iter().zip(labels) {
        let resid = y as u8 as f64 - sigmoid(dot(theta, m));
        for (gj, &mj) in g.iter_mut().zip(m) {
            if mj != 0 {
                *gj += resid;
            }
        }
    }
    let scale = norm(theta).max(1e-12);
    for (gj, t) in g.iter_mut().zip(theta) {
        *gj -= t / scale;
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleConfig {
    /// Initial (and largest) step size.
    pub step: f64,
    pub max_iters: usize,
    /// Stop once the gradient's largest entry is at most this.
    pub tol: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self { step: 1.0, max_iters: 20_000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_HALVINGS: usize = 60;
const ARMIJO: f64 = 0.5;

/// Gradient ascent with backtracking from `theta = 0`.
///
/// Each iteration first tries twice the previous step (capped at
/// `cfg.step`) and halves until the objective rises by at least half the
/// first-order prediction. If no halving achieves that, the ascent is below
/// floating-point resolution and the fit stops at the current iterate.
pub fn fit_theta_mle(features: &[Vec<u8>], labels: &[bool], cfg: &MleConfig) -> Result<MleFit, DataError> {
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(DataError::InvalidStep(cfg.step));
    }
    let dim = features.first().map_or(FEATURE_DIM, Vec::len);
    check_data(features, labels, dim)?;
    let inf = |g: &[f64]| g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut theta = vec![0.0; dim];
    let mut f = mle_objective(&theta, features, labels);
    let mut g = mle_gradient(&theta, features, labels);
    let mut step = cfg.step;
    let mut iter = 0;
    while iter < cfg.max_iters && inf(&g) > cfg.tol {
        step = (step * 2.0).min(cfg.step);
        let g_sq: f64 = g.iter().map(|x| x * x).sum();
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t + step * d).collect();
            let f_new = mle_objective(&candidate, features, labels);
            if !f_new.is_finite() {
                return Err(DataError::Diverged(iter));
            }
            if f_new >= f + ARMIJO * step * g_sq {
                accepted = Some((candidate, f_new));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, f_new)) = accepted else { break };
        theta = candidate;
        f = f_new;
        g = mle_gradient(&theta, features, labels);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(DataError::Diverged(iter));
        }
        iter += 1;
    }
    let grad_inf_norm = inf(&g);
    Ok(MleFit { converged: grad_inf_norm <= cfg.tol, objective: f, grad_inf_norm, theta, iterations: iter })
}

/// Unit-revenue feature-based instance, plus the car experiment's cap.
pub fn build_instance(theta: &[f64], features: &[Vec<u8>]) -> Result<(MnlInstance, Constraint), DataError> {
    if let Some(row) = features.first() {
        if row.len() != theta.len() {
            return Err(DataError::ThetaLength { got: theta.len(), expected: row.len() });
        }
    }
    let inst = MnlInstance::from_features(theta, features, vec![1.0; features.len()])?;
    Ok((inst, Constraint::Cardinality(CAR_CAPACITY)))
}

/// Every attribute combination once, labelled by `rating`.
pub fn full_factorial(rating: impl Fn(&[u8; 6]) -> Rating) -> Vec<CarRecord> {
    let mut out = Vec::with_capacity(1728);
    let sizes: Vec<usize> = ATTRIBUTES.iter().map(|a| a.1.len()).collect();
    let total: usize = sizes.iter().product();
    for mut code in 0..total {
        let mut levels = [0u8; 6];
        for a in (0..6).rev() {
            levels[a] = (code % sizes[a]) as u8;
            code /= sizes[a];
        }
        out.push(CarRecord { levels, rating: rating(&levels) });
    }
    out
}
