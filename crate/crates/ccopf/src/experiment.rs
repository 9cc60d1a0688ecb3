//! Replicated tuning experiments: tune on one sample set, evaluate on an
//! independent one, average over replications.

use std::io::Write;

use anyhow::{Context, Result};
use ccopf_core::grid::GridCase;
use ccopf_core::network::{compute_ptdf, PtdfMatrix};
use ccopf_core::qp::SolverSettings;
use ccopf_core::reformulation::{build_catalog, participation_factors, CatalogOptions, ConstraintCatalog};
use ccopf_core::stats::inv_normal_cdf;
use ccopf_core::error::TuneError;
use ccopf_core::tuner::{tune, Mode, TunedDispatch, TuningResult};
use ccopf_core::uncertainty::{empirical_moments, SampleSet, Sampler, SAMPLE_BLOCK};
use ccopf_core::violation::{ViolationEvaluator, ViolationReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, MomentSource, NamedDistribution};

const TUNE_STREAM: u64 = 0x7475_6e65;
const OOS_STREAM: u64 = 0x006f_6f73;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the tuning set of replication `rep`.
pub fn tuning_seed(base: u64, rep: usize) -> u64 {
    splitmix64(splitmix64(base ^ TUNE_STREAM) ^ rep as u64)
}

/// Seed of the out-of-sample set of replication `rep`.
pub fn oos_seed(base: u64, rep: usize) -> u64 {
    splitmix64(splitmix64(base ^ OOS_STREAM) ^ rep as u64)
}

/// The case, PTDF and participation factors shared by every run.
pub struct Pipeline {
    pub case: GridCase,
    pub ptdf: PtdfMatrix,
    pub support: Vec<usize>,
    pub settings: SolverSettings,
    options: CatalogOptions,
}

/// Sample sets and constraint catalog of one replication.
pub struct Replication {
    pub tuning: SampleSet,
    pub oos: SampleSet,
    pub catalog: ConstraintCatalog,
}

impl Pipeline {
    pub fn new(cfg: &Config) -> Result<Self> {
        let case = cfg.load_case()?;
        let ptdf = compute_ptdf(&case, cfg.case.slack)?;
        let support = cfg.support(&case)?;
        Ok(Self {
            case,
            ptdf,
            support,
            settings: cfg.solver_settings(),
            options: CatalogOptions { include_degenerate_constraints: cfg.case.include_degenerate_constraints },
        })
    }

    pub fn sampler(&self, dist: &NamedDistribution) -> Result<Sampler> {
        let spec = dist.dist.to_spec(self.support.len())?;
        Sampler::new(&spec, &self.support, self.case.n_buses(), self.case.base_mva())
            .with_context(|| format!("distribution '{}'", dist.name))
    }

    /// Draws both sample sets of replication `rep` and builds the catalog
    /// from the moments the configuration asks for.
    pub fn replication(&self, cfg: &Config, dist: &NamedDistribution, rep: usize) -> Result<Replication> {
        let sampler = self.sampler(dist)?;
        let e = &cfg.experiment;
        let t_seed = tuning_seed(e.seed, rep);
        let o_seed = if e.reuse_tuning_seed { t_seed } else { oos_seed(e.seed, rep) };
        let tuning = draw(&sampler, e.n_tuning, t_seed);
        let oos = draw(&sampler, e.n_oos, o_seed);
        let analytic = match e.moments {
            MomentSource::Auto => sampler.spec().is_gaussian(),
            MomentSource::Analytic => true,
            MomentSource::Empirical => false,
        };
        let moments = if analytic { sampler.analytic_moments() } else { empirical_moments(&tuning)? };
        let alpha = participation_factors(&self.case)?;
        let catalog = build_catalog(&self.case, &self.ptdf, &alpha, &moments, self.options)?;
        Ok(Replication { tuning, oos, catalog })
    }

    pub fn tune(
        &self,
        cfg: &Config,
        rep: &Replication,
        mode: Mode,
        eps_des: f64,
    ) -> Result<TuningResult<TunedDispatch>, TuneError> {
        tune(&cfg.tuning_config(eps_des, mode), &self.case, &self.ptdf, &rep.catalog, &rep.tuning, &self.settings)
    }

    pub fn evaluator(&self, catalog: &ConstraintCatalog) -> ViolationEvaluator {
        ViolationEvaluator::new(&self.case, &self.ptdf, catalog, &self.support)
    }
}

/// Samples drawn block-parallel; identical to [`Sampler::sample_labeled`].
pub fn draw(sampler: &Sampler, n: usize, seed: u64) -> SampleSet {
    let blocks: Vec<Vec<f64>> = (0..n.div_ceil(SAMPLE_BLOCK))
        .into_par_iter()
        .map(|b| {
            let len = SAMPLE_BLOCK.min(n - b * SAMPLE_BLOCK);
            let mut data = Vec::new();
            let mut labels = Vec::new();
            sampler.draw_block(seed, b, len, &mut data, &mut labels);
            data
        })
        .collect();
    sampler.assemble(blocks.concat(), seed)
}

/// Evaluates sample blocks in parallel and merges them in block order.
pub fn evaluate_parallel(eval: &ViolationEvaluator, p_g: &[f64], samples: &SampleSet) -> Result<ViolationReport> {
    let n = samples.len();
    let parts: Vec<ViolationReport> = (0..n.div_ceil(SAMPLE_BLOCK))
        .into_par_iter()
        .map(|b| eval.evaluate_range(p_g, samples, b * SAMPLE_BLOCK..n.min((b + 1) * SAMPLE_BLOCK)))
        .collect::<Result<_, _>>()?;
    let mut total = ViolationReport::empty(eval.n_constraints());
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iterations: f64,
    pub cost: f64,
    pub s: f64,
    pub eps_obs_single: f64,
    pub eps_oos_single: f64,
    pub eps_obs_joint: f64,
    pub eps_oos_joint: f64,
}

impl Metrics {
    fn mean(rows: &[&Metrics]) -> Metrics {
        let n = rows.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| rows.iter().map(|m| f(m)).sum::<f64>() / n;
        Metrics {
            iterations: avg(|m| m.iterations),
            cost: avg(|m| m.cost),
            s: avg(|m| m.s),
            eps_obs_single: avg(|m| m.eps_obs_single),
            eps_oos_single: avg(|m| m.eps_oos_single),
            eps_obs_joint: avg(|m| m.eps_obs_joint),
            eps_oos_joint: avg(|m| m.eps_oos_joint),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(with = "mode_name")]
    pub mode: Mode,
    pub distribution: String,
    pub eps_des: f64,
    /// `None` on average rows.
    pub replication: Option<usize>,
    pub s_true: Option<f64>,
    /// `None` when the replication failed (or, on average rows, when all
    /// did).
    pub metrics: Option<Metrics>,
    /// How the search ended, or the failure message; `k/n` successful
    /// replications on average rows.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub n_tuning: usize,
    pub n_oos: usize,
    pub gamma: f64,
    pub rows: Vec<ReportRow>,
}

mod mode_name {
    use ccopf_core::tuner::Mode;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mode: &Mode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(mode.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mode, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "mode",
    "distribution",
    "eps_des",
    "replication",
    "iterations",
    "cost",
    "s",
    "s_true",
    "eps_obs_single",
    "eps_oos_single",
    "eps_obs_joint",
    "eps_oos_joint",
    "status",
];

impl ExperimentReport {
    pub fn replication_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.replication.is_some())
    }

    pub fn average_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.replication.is_none())
    }

    pub fn average(&self, mode: Mode, distribution: &str, eps_des: f64) -> Option<&ReportRow> {
        self.average_rows().find(|r| r.mode == mode && r.distribution == distribution && r.eps_des == eps_des)
    }

    pub fn failures(&self) -> usize {
        self.replication_rows().filter(|r| r.metrics.is_none()).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let m = r.metrics.as_ref();
            w.write_record([
                r.mode.name().to_string(),
                r.distribution.clone(),
                r.eps_des.to_string(),
                r.replication.map_or_else(|| "avg".to_string(), |k| k.to_string()),
                num(m.map(|m| m.iterations)),
                num(m.map(|m| m.cost)),
                num(m.map(|m| m.s)),
                num(r.s_true),
                num(m.map(|m| m.eps_obs_single)),
                num(m.map(|m| m.eps_oos_single)),
                num(m.map(|m| m.eps_obs_joint)),
                num(m.map(|m| m.eps_oos_joint)),
                r.status.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `Φ⁻¹(1 − ε)`, reported for Gaussian data in single mode.
pub fn s_true(eps_des: f64) -> f64 {
    inv_normal_cdf(1.0 - eps_des)
}

struct Cell {
    mode: Mode,
    eps_des: f64,
    outcome: Result<(Metrics, &'static str), String>,
}

fn run_cell(
    pipe: &Pipeline,
    cfg: &Config,
    rep: &Replication,
    mode: Mode,
    eps_des: f64,
) -> Result<(Metrics, &'static str)> {
    let result = pipe.tune(cfg, rep, mode, eps_des)?;
    let eval = pipe.evaluator(&rep.catalog);
    let oos = evaluate_parallel(&eval, &result.payload.dispatch.p_g, &rep.oos)?;
    let metrics = Metrics {
        iterations: result.iterations as f64,
        cost: result.cost,
        s: result.s_final,
        eps_obs_single: result.eps_single,
        eps_oos_single: oos.eps_single(),
        eps_obs_joint: result.eps_joint,
        eps_oos_joint: oos.eps_joint(),
    };
    Ok((metrics, result.terminated_by.name()))
}

fn run_replication(pipe: &Pipeline, cfg: &Config, dist: &NamedDistribution, rep: usize, modes: &[Mode]) -> Vec<Cell> {
    let prepared = pipe.replication(cfg, dist, rep);
    let mut cells = Vec::new();
    for &mode in modes {
        for &eps_des in &cfg.experiment.eps {
            let outcome = match &prepared {
                Ok(r) => run_cell(pipe, cfg, r, mode, eps_des).map_err(|e| format!("{e:#}")),
                Err(e) => Err(format!("{e:#}")),
            };
            cells.push(Cell { mode, eps_des, outcome });
        }
    }
    cells
}

/// Runs every (distribution, replication) pair in parallel on the current
/// rayon pool. Rows are ordered by mode, distribution, eps and replication,
/// with each group followed by its average row.
pub fn run_experiment(cfg: &Config) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pipe = Pipeline::new(cfg)?;
    let modes = cfg.modes()?;
    let e = &cfg.experiment;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.distributions.len()).flat_map(|d| (0..e.replications).map(move |r| (d, r))).collect();
    let results: Vec<Vec<Cell>> = jobs
        .par_iter()
        .map(|&(d, r)| run_replication(&pipe, cfg, &cfg.distributions[d], r, &modes))
        .collect();

    let mut rows = Vec::new();
    for &mode in &modes {
        for (d, dist) in cfg.distributions.iter().enumerate() {
            let gaussian = pipe.sampler(dist)?.spec().is_gaussian();
            for &eps_des in &e.eps {
                let st = (gaussian && mode == Mode::Single).then(|| s_true(eps_des));
                for (k, &(jd, rep)) in jobs.iter().enumerate() {
                    if jd != d {
                        continue;
                    }
                    let cell = results[k]
                        .iter()
                        .find(|c| c.mode == mode && c.eps_des == eps_des)
                        .expect("every cell is computed");
                    let (metrics, status) = match &cell.outcome {
                        Ok((m, how)) => (Some(m.clone()), how.to_string()),
                        Err(msg) => {
                            eprintln!("warning: {mode} {} eps={eps_des} replication {rep}: {msg}", dist.name);
                            (None, format!("failed: {msg}"))
                        }
                    };
                    rows.push(ReportRow {
                        mode,
                        distribution: dist.name.clone(),
                        eps_des,
                        replication: Some(rep),
                        s_true: st,
                        metrics,
                        status,
                    });
                }
                let start = rows.len() - e.replications;
                let good: Vec<&Metrics> = rows[start..].iter().filter_map(|r| r.metrics.as_ref()).collect();
                rows.push(ReportRow {
                    mode,
                    distribution: dist.name.clone(),
                    eps_des,
                    replication: None,
                    s_true: st,
                    metrics: (!good.is_empty()).then(|| Metrics::mean(&good)),
                    status: format!("{}/{}", good.len(), e.replications),
                });
            }
        }
    }
    Ok(ExperimentReport { seed: e.seed, n_tuning: e.n_tuning, n_oos: e.n_oos, gamma: cfg.tuning.gamma, rows })
}
