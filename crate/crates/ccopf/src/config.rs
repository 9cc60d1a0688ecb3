//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ccopf_core::grid::{CaseModifications, GridCase};
use ccopf_core::qp::SolverSettings;
use ccopf_core::tuner::{Mode, TuningConfig, DEFAULT_MAX_ITERS, DEFAULT_WIDTH_TOL};
use ccopf_core::uncertainty::DistributionSpec;
use serde::{Deserialize, Serialize};

use crate::case_file;

pub const TABLE1_CONFIG: &str = include_str!("../data/table1.cfg");
pub const RTS24_CASE: &str = include_str!("../data/rts24.case");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub case: CaseConfig,
    #[serde(default)]
    pub tuning: TuningSettings,
    pub experiment: ExperimentSettings,
    #[serde(rename = "distribution")]
    pub distributions: Vec<NamedDistribution>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub file: PathBuf,
    #[serde(default = "one")]
    pub slack: u32,
    #[serde(default = "unit")]
    pub line_capacity_scale: f64,
    #[serde(default)]
    pub zero_min_output: bool,
    #[serde(default = "unit")]
    pub max_output_scale: f64,
    /// Ids of the uncertain buses, in the order of the distribution's
    /// coordinates. Empty keeps the flags from the case file.
    #[serde(default)]
    pub uncertain_buses: Vec<u32>,
    #[serde(default)]
    pub include_degenerate_constraints: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSettings {
    pub gamma: f64,
    pub width_tol: f64,
    pub max_bisection_iters: usize,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    pub s_min: Option<f64>,
    pub s_max: Option<f64>,
}

impl Default for TuningSettings {
    fn default() -> Self {
        let solver = SolverSettings::default();
        Self {
            gamma: 1e-4,
            width_tol: DEFAULT_WIDTH_TOL,
            max_bisection_iters: DEFAULT_MAX_ITERS,
            solver_tol: solver.tol,
            solver_max_iters: solver.max_iters,
            s_min: None,
            s_max: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MomentSource {
    /// Analytic for Gaussian distributions, tuning-sample estimates otherwise.
    #[default]
    Auto,
    Analytic,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    pub modes: Vec<String>,
    pub eps: Vec<f64>,
    pub replications: usize,
    pub n_tuning: usize,
    pub n_oos: usize,
    pub seed: u64,
    #[serde(default)]
    pub moments: MomentSource,
    /// Draw the out-of-sample set from the tuning seed instead of its own
    /// stream. Only useful for checks.
    #[serde(default)]
    pub reuse_tuning_seed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDistribution {
    pub name: String,
    #[serde(flatten)]
    pub dist: DistributionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistributionConfig {
    Gaussian {
        std_mw: Vec<f64>,
        #[serde(default)]
        correlation: f64,
        #[serde(default)]
        mean_mw: Option<Vec<f64>>,
    },
    /// Independent uniform marginals.
    Uniform { lower_mw: f64, upper_mw: f64 },
    /// Weights are relative and normalized on use.
    Mixture { components: Vec<Component> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    #[serde(flatten)]
    pub dist: DistributionConfig,
}

impl DistributionConfig {
    /// Builds the distribution over `dim` uncertain buses.
    pub fn to_spec(&self, dim: usize) -> Result<DistributionSpec> {
        Ok(match self {
            DistributionConfig::Gaussian { std_mw, correlation, mean_mw } => {
                if std_mw.len() != dim {
                    bail!("gaussian has {} standard deviations for {dim} uncertain buses", std_mw.len());
                }
                let mut spec = DistributionSpec::gaussian(std_mw, *correlation);
                if let (Some(m), DistributionSpec::Gaussian { mean, .. }) = (mean_mw, &mut spec) {
                    if m.len() != dim {
                        bail!("gaussian mean has {} entries for {dim} uncertain buses", m.len());
                    }
                    mean.clone_from(m);
                }
                spec
            }
            DistributionConfig::Uniform { lower_mw, upper_mw } => DistributionSpec::uniform(*lower_mw, *upper_mw, dim),
            DistributionConfig::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if components.is_empty() || !(total > 0.0) || components.iter().any(|c| !(c.weight >= 0.0)) {
                    bail!("mixture weights must be nonnegative with a positive sum");
                }
                DistributionSpec::Mixture {
                    components: components
                        .iter()
                        .map(|c| Ok((c.weight / total, c.dist.to_spec(dim)?)))
                        .collect::<Result<_>>()?,
                }
            }
        })
    }
}

impl Config {
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).context("invalid configuration")?;
        cfg.base_dir = base_dir.map(Path::to_owned);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path.parent()).with_context(|| format!("in {}", path.display()))
    }

    /// The bundled Table I configuration; its case file is the bundled
    /// RTS-96 data.
    pub fn table1() -> Self {
        Self::parse(TABLE1_CONFIG, None).expect("bundled configuration is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.replications == 0 {
            bail!("replications must be at least 1");
        }
        if e.n_tuning == 0 || e.n_oos == 0 {
            bail!("sample counts must be positive");
        }
        if e.eps.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            bail!("every eps must lie in (0, 1)");
        }
        self.modes()?;
        if self.distributions.is_empty() {
            bail!("at least one [[distribution]] is required");
        }
        let mut names: Vec<&str> = self.distributions.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!("distribution names must be unique");
        }
        Ok(())
    }

    pub fn modes(&self) -> Result<Vec<Mode>> {
        self.experiment
            .modes
            .iter()
            .map(|m| m.parse::<Mode>().map_err(anyhow::Error::msg))
            .collect()
    }

    pub fn distribution(&self, name: &str) -> Result<&NamedDistribution> {
        self.distributions
            .iter()
            .find(|d| d.name == name)
            .with_context(|| format!("no distribution named '{name}'"))
    }

    pub fn case_path(&self) -> PathBuf {
        match &self.base_dir {
            Some(dir) if self.case.file.is_relative() => dir.join(&self.case.file),
            _ => self.case.file.clone(),
        }
    }

    /// Reads the case file and applies the configured modifications. The
    /// bundled case name resolves to the embedded data when no base
    /// directory is set.
    pub fn load_case(&self) -> Result<GridCase> {
        let raw = if self.base_dir.is_none() && self.case.file == Path::new("rts24.case") {
            case_file::parse_case(RTS24_CASE)?
        } else {
            let path = self.case_path();
            case_file::read_case(&path).with_context(|| format!("loading case {}", path.display()))?
        };
        let mods = CaseModifications {
            line_capacity_scale: self.case.line_capacity_scale,
            zero_min_output: self.case.zero_min_output,
            max_output_scale: self.case.max_output_scale,
            uncertain_buses: Vec::new(),
        };
        let case = raw.apply(&mods);
        if self.case.uncertain_buses.is_empty() {
            Ok(case)
        } else {
            Ok(case.with_uncertainty_at(&self.case.uncertain_buses)?)
        }
    }

    /// Bus indices of the uncertainty sources, in distribution order.
    pub fn support(&self, case: &GridCase) -> Result<Vec<usize>> {
        if self.case.uncertain_buses.is_empty() {
            return Ok(case.uncertain_buses());
        }
        self.case
            .uncertain_buses
            .iter()
            .map(|&id| case.bus_index_by_source(id).with_context(|| format!("uncertain bus {id} is not in the case")))
            .collect()
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings { tol: self.tuning.solver_tol, max_iters: self.tuning.solver_max_iters }
    }

    pub fn tuning_config(&self, eps_des: f64, mode: Mode) -> TuningConfig {
        TuningConfig {
            eps_des,
            mode,
            gamma: self.tuning.gamma,
            n_tuning_samples: self.experiment.n_tuning,
            max_bisection_iters: self.tuning.max_bisection_iters,
            width_tol: self.tuning.width_tol,
            s_min_init: self.tuning.s_min,
            s_max_init: self.tuning.s_max,
        }
    }
}

fn one() -> u32 {
    1
}

fn unit() -> f64 {
    1.0
}
