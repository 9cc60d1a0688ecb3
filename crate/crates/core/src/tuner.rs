//! Bisection search for the safety parameter.
//!
//! The search is written against [`SafetyOracle`] so that the OPF pipeline
//! and synthetic test functions share the same control flow.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::TuneError;
use crate::grid::GridCase;
use crate::network::PtdfMatrix;
use crate::qp::{QpStatus, SolverSettings};
use crate::reformulation::{build_qp, solve_dispatch, ConstraintCatalog, DispatchSolution};
use crate::uncertainty::SampleSet;
use crate::violation::{ViolationEvaluator, ViolationReport};

pub const DEFAULT_WIDTH_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 60;

/// Relative slack on the γ-band so that `|k/N − ε| = γ` is not lost to
/// rounding.
const BAND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Single,
    Joint,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Joint => "joint",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Mode::Single),
            "joint" => Ok(Mode::Joint),
            other => Err(format!("unknown mode '{other}' (expected single or joint)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningConfig {
    pub eps_des: f64,
    pub mode: Mode,
    /// Accepted distance between the observed and desired probability.
    pub gamma: f64,
    pub n_tuning_samples: usize,
    pub max_bisection_iters: usize,
    pub width_tol: f64,
    pub s_min_init: Option<f64>,
    pub s_max_init: Option<f64>,
}

impl TuningConfig {
    pub fn new(eps_des: f64, mode: Mode) -> Self {
        Self {
            eps_des,
            mode,
            gamma: 1e-4,
            n_tuning_samples: 10_000,
            max_bisection_iters: DEFAULT_MAX_ITERS,
            width_tol: DEFAULT_WIDTH_TOL,
            s_min_init: None,
            s_max_init: None,
        }
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if !(self.eps_des > 0.0 && self.eps_des < 1.0) {
            return Err(TuneError::InvalidEpsilon(self.eps_des));
        }
        if !(self.gamma > 0.0) {
            return Err(TuneError::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.width_tol > 0.0) {
            return Err(TuneError::InvalidConfig(format!("width_tol must be positive, got {}", self.width_tol)));
        }
        for (name, v) in [("s_min_init", self.s_min_init), ("s_max_init", self.s_max_init)] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(TuneError::InvalidConfig(format!("{name} must be finite and nonnegative, got {v}")));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.s_min_init, self.s_max_init) {
            if lo >= hi {
                return Err(TuneError::InvalidConfig(format!("empty bracket [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// True when `γ` is finer than the sample resolution `1/N`.
    pub fn gamma_below_resolution(&self) -> bool {
        self.n_tuning_samples > 0 && self.gamma < 1.0 / self.n_tuning_samples as f64
    }

    fn in_band(&self, eps: f64) -> bool {
        (eps - self.eps_des).abs() <= self.gamma * (1.0 + BAND_SLACK)
    }
}

/// Starting bracket from Cantelli's inequality, with Boole's inequality
/// spreading `ε` over the constraints in joint mode.
pub fn initial_bounds(eps_des: f64, mode: Mode, n_constraints: usize) -> Result<(f64, f64), TuneError> {
    if !(eps_des > 0.0 && eps_des < 1.0) {
        return Err(TuneError::InvalidEpsilon(eps_des));
    }
    let eps = match mode {
        Mode::Single => eps_des,
        Mode::Joint => {
            if n_constraints == 0 {
                return Err(TuneError::InvalidConfig("joint mode needs at least one constraint".into()));
            }
            eps_des / n_constraints as f64
        }
    };
    Ok((0.0, libm::sqrt((1.0 - eps) / eps)))
}

/// Result of trying one safety parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum Assessment<P> {
    Infeasible,
    Evaluated { eps_single: f64, eps_joint: f64, cost: f64, payload: P },
}

pub trait SafetyOracle {
    type Payload;

    fn assess(&mut self, s: f64) -> Result<Assessment<Self::Payload>, TuneError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// The lower end of the bracket, tried before bisecting.
    Probe,
    Bisection,
    /// The upper end of the bracket, tried when no iterate was conservative.
    Anchor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// 0 for the probe and anchor, otherwise the bisection step number.
    pub iteration: usize,
    pub s: f64,
    pub feasible: bool,
    pub eps_single: Option<f64>,
    pub eps_joint: Option<f64>,
    pub cost: Option<f64>,
    pub kind: StepKind,
    /// Set when this point contradicts `ε(s)` being nonincreasing with
    /// respect to an earlier point.
    pub non_monotone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminatedBy {
    EpsTolerance,
    IntervalCollapse,
    IterationCap,
}

impl TerminatedBy {
    pub fn name(self) -> &'static str {
        match self {
            TerminatedBy::EpsTolerance => "eps_tolerance",
            TerminatedBy::IntervalCollapse => "interval_collapse",
            TerminatedBy::IterationCap => "iteration_cap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult<P> {
    pub s_final: f64,
    pub payload: P,
    /// Observed probability in the tuned mode.
    pub eps_obs: f64,
    pub eps_single: f64,
    pub eps_joint: f64,
    pub cost: f64,
    /// Bisection steps taken, excluding the probe and anchor.
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub terminated_by: TerminatedBy,
    pub non_monotone_events: usize,
    pub bracket: (f64, f64),
}

struct Candidate<P> {
    s: f64,
    eps_single: f64,
    eps_joint: f64,
    cost: f64,
    payload: P,
}

struct Search<P> {
    trace: Vec<TraceEntry>,
    events: usize,
    best: Option<Candidate<P>>,
}

impl<P> Search<P> {
    fn record(&mut self, iteration: usize, s: f64, kind: StepKind, a: &Assessment<P>, mode: Mode) {
        let mut entry = TraceEntry {
            iteration,
            s,
            feasible: false,
            eps_single: None,
            eps_joint: None,
            cost: None,
            kind,
            non_monotone: false,
        };
        if let Assessment::Evaluated { eps_single, eps_joint, cost, .. } = a {
            entry.feasible = true;
            entry.eps_single = Some(*eps_single);
            entry.eps_joint = Some(*eps_joint);
            entry.cost = Some(*cost);
            let eps = pick(mode, *eps_single, *eps_joint);
            entry.non_monotone = self.trace.iter().any(|prev| {
                let Some(e) = prev_eps(prev, mode) else { return false };
                (s > prev.s && eps > e) || (s < prev.s && eps < e)
            });
            if entry.non_monotone {
                self.events += 1;
            }
        }
        self.trace.push(entry);
    }

    fn offer(&mut self, c: Candidate<P>) {
        if self.best.as_ref().map_or(true, |b| c.s < b.s) {
            self.best = Some(c);
        }
    }
}

fn pick(mode: Mode, single: f64, joint: f64) -> f64 {
    match mode {
        Mode::Single => single,
        Mode::Joint => joint,
    }
}

fn prev_eps(e: &TraceEntry, mode: Mode) -> Option<f64> {
    match mode {
        Mode::Single => e.eps_single,
        Mode::Joint => e.eps_joint,
    }
}

/// Bisects on `[bracket.0, bracket.1]`.
///
/// The lower end is tried first; if it already meets the target the search
/// stops there. Infeasible points and points meeting the target shrink the
/// upper end, points above the target raise the lower end. Points inside
/// the γ-band but above the target do not stop the search, so the returned
/// iterate always satisfies `ε ≤ ε_des` on the tuning samples.
pub fn bisect<O: SafetyOracle>(
    cfg: &TuningConfig,
    oracle: &mut O,
    bracket: (f64, f64),
) -> Result<TuningResult<O::Payload>, TuneError> {
    cfg.validate()?;
    let (s_lo, s_hi) = bracket;
    if !(s_lo >= 0.0 && s_lo < s_hi && s_hi.is_finite()) {
        return Err(TuneError::InvalidConfig(format!("invalid bracket [{s_lo}, {s_hi}]")));
    }
    let mut search = Search { trace: Vec::new(), events: 0, best: None };

    let assess = |oracle: &mut O, s: f64, trace: &Vec<TraceEntry>| {
        oracle.assess(s).map_err(|e| match e {
            TuneError::SolverFailure { s, reason, .. } => TuneError::SolverFailure { s, reason, trace: trace.clone() },
            other => other,
        })
    };

    let finish = |search: Search<O::Payload>, c: Candidate<O::Payload>, iterations, terminated_by| TuningResult {
        s_final: c.s,
        eps_obs: pick(cfg.mode, c.eps_single, c.eps_joint),
        eps_single: c.eps_single,
        eps_joint: c.eps_joint,
        cost: c.cost,
        payload: c.payload,
        iterations,
        trace: search.trace,
        terminated_by,
        non_monotone_events: search.events,
        bracket,
    };

    let a = assess(oracle, s_lo, &search.trace)?;
    search.record(0, s_lo, StepKind::Probe, &a, cfg.mode);
    match a {
        Assessment::Infeasible => return Err(TuneError::DeterministicInfeasible { s_min: s_lo }),
        Assessment::Evaluated { eps_single, eps_joint, cost, payload } => {
            let eps = pick(cfg.mode, eps_single, eps_joint);
            if eps <= cfg.eps_des {
                let by = if cfg.in_band(eps) { TerminatedBy::EpsTolerance } else { TerminatedBy::IntervalCollapse };
                let c = Candidate { s: s_lo, eps_single, eps_joint, cost, payload };
                return Ok(finish(search, c, 0, by));
            }
        }
    }

    let (mut lo, mut hi) = (s_lo, s_hi);
    let mut iterations = 0;
    let terminated_by = loop {
        if (hi - lo) / 2.0 < cfg.width_tol {
            break TerminatedBy::IntervalCollapse;
        }
        if iterations >= cfg.max_bisection_iters {
            break TerminatedBy::IterationCap;
        }
        iterations += 1;
        let s = lo + (hi - lo) / 2.0;
        let a = assess(oracle, s, &search.trace)?;
        search.record(iterations, s, StepKind::Bisection, &a, cfg.mode);
        match a {
            Assessment::Infeasible => hi = s,
            Assessment::Evaluated { eps_single, eps_joint, cost, payload } => {
                let eps = pick(cfg.mode, eps_single, eps_joint);
                if eps <= cfg.eps_des {
                    hi = s;
                    search.offer(Candidate { s, eps_single, eps_joint, cost, payload });
                    if cfg.in_band(eps) {
                        let c = search.best.take().expect("candidate just offered");
                        return Ok(finish(search, c, iterations, TerminatedBy::EpsTolerance));
                    }
                } else {
                    lo = s;
                }
            }
        }
    };

    if let Some(c) = search.best.take() {
        return Ok(finish(search, c, iterations, terminated_by));
    }
    let a = assess(oracle, s_hi, &search.trace)?;
    search.record(0, s_hi, StepKind::Anchor, &a, cfg.mode);
    match a {
        Assessment::Evaluated { eps_single, eps_joint, cost, payload }
            if pick(cfg.mode, eps_single, eps_joint) <= cfg.eps_des =>
        {
            let c = Candidate { s: s_hi, eps_single, eps_joint, cost, payload };
            Ok(finish(search, c, iterations, terminated_by))
        }
        _ => Err(TuneError::NoConservativeAnchor { trace: search.trace }),
    }
}

/// Dispatch and tuning-sample violations at one safety parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct TunedDispatch {
    pub dispatch: DispatchSolution,
    pub report: ViolationReport,
}

/// Solves the tightened program and counts violations on a fixed sample
/// set for every requested `s`.
pub struct OpfOracle<'a> {
    case: &'a GridCase,
    ptdf: &'a PtdfMatrix,
    catalog: &'a ConstraintCatalog,
    samples: &'a SampleSet,
    evaluator: ViolationEvaluator,
    settings: SolverSettings,
}

impl<'a> OpfOracle<'a> {
    pub fn new(
        case: &'a GridCase,
        ptdf: &'a PtdfMatrix,
        catalog: &'a ConstraintCatalog,
        samples: &'a SampleSet,
        settings: SolverSettings,
    ) -> Self {
        let evaluator = ViolationEvaluator::new(case, ptdf, catalog, samples.support());
        Self { case, ptdf, catalog, samples, evaluator, settings }
    }

    pub fn evaluator(&self) -> &ViolationEvaluator {
        &self.evaluator
    }
}

impl SafetyOracle for OpfOracle<'_> {
    type Payload = TunedDispatch;

    fn assess(&mut self, s: f64) -> Result<Assessment<TunedDispatch>, TuneError> {
        let tqp = build_qp(self.case, self.ptdf, self.catalog, s)?;
        let dispatch = solve_dispatch(&tqp, self.catalog.alpha(), &self.settings);
        match dispatch.status {
            QpStatus::Infeasible => Ok(Assessment::Infeasible),
            QpStatus::MaxIterations => Err(TuneError::SolverFailure {
                s,
                reason: format!("no convergence within {} iterations", self.settings.max_iters),
                trace: Vec::new(),
            }),
            QpStatus::Optimal => {
                let report = self.evaluator.evaluate(&dispatch.p_g, self.samples)?;
                Ok(Assessment::Evaluated {
                    eps_single: report.eps_single(),
                    eps_joint: report.eps_joint(),
                    cost: dispatch.cost,
                    payload: TunedDispatch { dispatch, report },
                })
            }
        }
    }
}

/// Tunes `s` for the chance-constrained OPF on the given tuning samples.
/// Missing bracket ends default to `0` and the Cantelli bound.
pub fn tune(
    cfg: &TuningConfig,
    case: &GridCase,
    ptdf: &PtdfMatrix,
    catalog: &ConstraintCatalog,
    samples: &SampleSet,
    settings: &SolverSettings,
) -> Result<TuningResult<TunedDispatch>, TuneError> {
    cfg.validate()?;
    let (lo, hi) = initial_bounds(cfg.eps_des, cfg.mode, catalog.len())?;
    let bracket = (cfg.s_min_init.unwrap_or(lo), cfg.s_max_init.unwrap_or(hi));
    let mut oracle = OpfOracle::new(case, ptdf, catalog, samples, *settings);
    bisect(cfg, &mut oracle, bracket)
}
