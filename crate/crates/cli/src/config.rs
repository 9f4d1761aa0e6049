//! TOML experiment configuration and command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use mnl_core::Constraint;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Ucb,
    UcbGeneral,
    ExploreExploit,
    Oracle,
}

impl PolicyName {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ucb" => PolicyName::Ucb,
            "ucb-general" => PolicyName::UcbGeneral,
            "explore-exploit" => PolicyName::ExploreExploit,
            "oracle" => PolicyName::Oracle,
            _ => bail!("unknown policy {s:?} (expected ucb, ucb-general, explore-exploit or oracle)"),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Ucb => "ucb",
            PolicyName::UcbGeneral => "ucb-general",
            PolicyName::ExploreExploit => "explore-exploit",
            PolicyName::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitName {
    #[default]
    Epochs,
    Customers,
}

/// Cardinality cap: an integer or the string `"none"`.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum CapSpec {
    Count(usize),
    Word(String),
}

impl CapSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CapSpec::Word("none".into())),
            _ => Ok(CapSpec::Count(s.parse().with_context(|| format!("--k expects an integer or \"none\", got {s:?}"))?)),
        }
    }

    pub fn constraint(&self) -> Result<Constraint> {
        match self {
            CapSpec::Count(0) => bail!("k must be at least 1"),
            CapSpec::Count(k) => Ok(Constraint::Cardinality(*k)),
            CapSpec::Word(w) if w == "none" => Ok(Constraint::Unconstrained),
            CapSpec::Word(w) => bail!("k must be an integer or \"none\", got {w:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureFormat {
    /// Comma-separated 0/1 rows.
    #[default]
    Matrix,
    /// Raw car-evaluation records, one-hot encoded on load.
    Car,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceSpec {
    Explicit {
        #[serde(default = "one")]
        v0: f64,
        v: Vec<f64>,
        r: Vec<f64>,
    },
    Benchmark {
        eps: Vec<f64>,
    },
    Features {
        features: PathBuf,
        theta: PathBuf,
        #[serde(default)]
        format: FeatureFormat,
    },
    Lowerbound {
        arms: usize,
        alpha: f64,
        /// Arm pulls per reduction run; defaults to the horizon.
        budget: Option<u64>,
    },
}

fn one() -> f64 {
    1.0
}

/// Tail-bound grid for `bounds-check`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsGrid {
    pub mu: Vec<f64>,
    pub n: Vec<u64>,
    pub delta: Vec<f64>,
    pub trials: u64,
}

impl Default for BoundsGrid {
    fn default() -> Self {
        Self { mu: vec![0.1, 0.5, 1.0, 2.0, 5.0], n: vec![10, 100, 1000], delta: vec![0.1, 0.3, 0.5, 0.9], trials: 100_000 }
    }
}

/// Everything a subcommand needs, after merging file and flags.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_policy")]
    pub policy: PolicyName,
    #[serde(default = "default_instance")]
    pub instance: InstanceSpec,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_k")]
    pub k: CapSpec,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Constant in the good-epoch threshold; enables epoch diagnostics.
    pub tau_c: Option<f64>,
    #[serde(default)]
    pub realized: bool,
    #[serde(default)]
    pub exploration_unit: UnitName,
    #[serde(default)]
    pub bounds: BoundsGrid,
}

fn default_policy() -> PolicyName {
    PolicyName::Ucb
}

fn default_instance() -> InstanceSpec {
    InstanceSpec::Benchmark { eps: vec![0.05, 0.1, 0.15, 0.25] }
}

fn default_horizon() -> u64 {
    100_000
}

fn default_k() -> CapSpec {
    CapSpec::Count(4)
}

fn default_runs() -> usize {
    50
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML experiment file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub runs: Option<usize>,
    #[arg(long, value_name = "T")]
    pub horizon: Option<u64>,
    /// ucb, ucb-general, explore-exploit or oracle.
    #[arg(long, value_name = "NAME")]
    pub policy: Option<String>,
    /// Separation of the ten-product instance; a comma list sweeps.
    #[arg(long, value_name = "REAL[,REAL..]", value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Cardinality cap, or "none".
    #[arg(long, value_name = "INT|none")]
    pub k: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Reads `--config` if given, then applies the remaining flags.
    pub fn resolve(flags: &Overrides) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(seed) = flags.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &flags.out {
            cfg.out = Some(out.clone());
        }
        if let Some(runs) = flags.runs {
            cfg.runs = runs;
        }
        if let Some(h) = flags.horizon {
            cfg.horizon = h;
        }
        if let Some(p) = &flags.policy {
            cfg.policy = PolicyName::parse(p)?;
        }
        if let Some(eps) = &flags.eps {
            cfg.instance = InstanceSpec::Benchmark { eps: eps.clone() };
        }
        if let Some(k) = &flags.k {
            cfg.k = CapSpec::parse(k)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            bail!("horizon must be at least 1");
        }
        if self.runs == 0 {
            bail!("runs must be at least 1");
        }
        self.k.constraint()?;
        if let InstanceSpec::Benchmark { eps } = &self.instance {
            if eps.is_empty() {
                bail!("eps list is empty");
            }
        }
        if let Some(c) = self.tau_c {
            if !(c > 0.0 && c.is_finite()) {
                bail!("tau_c must be positive, got {c}");
            }
        }
        Ok(())
    }

    pub fn constraint(&self) -> Constraint {
        self.k.constraint().expect("validated")
    }

    pub fn out_path(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.policy, PolicyName::Ucb);
        assert_eq!(cfg.horizon, 100_000);
        assert_eq!(cfg.constraint(), Constraint::Cardinality(4));
        assert_eq!(cfg.instance, InstanceSpec::Benchmark { eps: vec![0.05, 0.1, 0.15, 0.25] });
        assert_eq!(cfg.bounds.trials, 100_000);
    }

    #[test]
    fn parse_each_instance_kind() {
        let cfg = ExperimentConfig::from_toml(
            "policy = \"oracle\"\nk = \"none\"\n[instance]\nkind = \"explicit\"\nv = [0.5, 1.0]\nr = [1.0, 0.8]\n",
        )
        .unwrap();
        assert_eq!(cfg.constraint(), Constraint::Unconstrained);
        assert_eq!(cfg.instance, InstanceSpec::Explicit { v0: 1.0, v: vec![0.5, 1.0], r: vec![1.0, 0.8] });
        let cfg = ExperimentConfig::from_toml("[instance]\nkind = \"lowerbound\"\narms = 5\nalpha = 0.3\n").unwrap();
        assert_eq!(cfg.instance, InstanceSpec::Lowerbound { arms: 5, alpha: 0.3, budget: None });
        let cfg =
            ExperimentConfig::from_toml("[instance]\nkind = \"features\"\nfeatures = \"car.data\"\ntheta = \"t.csv\"\nformat = \"car\"\n")
                .unwrap();
        assert!(matches!(cfg.instance, InstanceSpec::Features { format: FeatureFormat::Car, .. }));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_toml("polcy = \"ucb\"").is_err());
        assert!(ExperimentConfig::from_toml("policy = \"greedy\"").is_err());
        assert!(ExperimentConfig::from_toml("[instance]\nkind = \"benchmark\"\neps = [0.1]\nv = [1.0]\n").is_err());
        let cfg = ExperimentConfig::from_toml("k = \"all\"").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml("runs = 0").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn flags_win() {
        let flags = Overrides {
            seed: Some(9),
            runs: Some(3),
            horizon: Some(10),
            policy: Some("explore-exploit".into()),
            eps: Some(vec![0.1, 0.2]),
            k: Some("none".into()),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(&flags).unwrap();
        assert_eq!((cfg.seed, cfg.runs, cfg.horizon), (9, 3, 10));
        assert_eq!(cfg.policy, PolicyName::ExploreExploit);
        assert_eq!(cfg.instance, InstanceSpec::Benchmark { eps: vec![0.1, 0.2] });
        assert_eq!(cfg.constraint(), Constraint::Unconstrained);
        assert!(ExperimentConfig::resolve(&Overrides { horizon: Some(0), ..Overrides::default() }).is_err());
        assert!(ExperimentConfig::resolve(&Overrides { k: Some("x".into()), ..Overrides::default() }).is_err());
    }
}
