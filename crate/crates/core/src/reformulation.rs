//! Affine recourse and the tightened deterministic program.
//!
//! For a safety parameter `s`, every chance constraint `a·ξ`-perturbed
//! limit is replaced by its nominal version tightened by `s · ‖a Σ^{1/2}‖₂`.
//! The tightening coefficients depend only on the covariance, so they are
//! computed once per catalog and reused for every `s`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::ReformulationError;
use crate::grid::GridCase;
use crate::linalg::{dot, Matrix};
use crate::network::PtdfMatrix;
use crate::qp::{self, QpStatus, QuadraticProgram, SolverSettings};
use crate::uncertainty::{sensitivity_norm, MomentEstimate};
use crate::violation::constraint_deltas;

/// AGC participation factors, proportional to maximum output.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipationFactors(Vec<f64>);

impl ParticipationFactors {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn participation_factors(case: &GridCase) -> Result<ParticipationFactors, ReformulationError> {
    let p_max: Vec<f64> = case.generators().iter().map(|g| g.p_max_mw.max(0.0)).collect();
    let total: f64 = p_max.iter().sum();
    if !(total > 0.0) {
        return Err(ReformulationError::NoCapacity);
    }
    Ok(ParticipationFactors(p_max.iter().map(|p| p / total).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    GenUpper,
    GenLower,
    LineUpper,
    LineLower,
}

impl ConstraintKind {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::GenUpper => "gen_upper",
            ConstraintKind::GenLower => "gen_lower",
            ConstraintKind::LineUpper => "line_upper",
            ConstraintKind::LineLower => "line_lower",
        }
    }

    pub fn is_generator(self) -> bool {
        matches!(self, ConstraintKind::GenUpper | ConstraintKind::GenLower)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintDescriptor {
    pub kind: ConstraintKind,
    /// Bus index for generator rows, line index for line rows.
    pub subject: usize,
    /// Uncertainty-sensitivity row `a` (length m).
    pub sensitivity: Vec<f64>,
    /// Untightened limit, per unit.
    pub nominal_limit: f64,
    /// `‖a Σ^{1/2}‖₂`, per unit.
    pub tightening: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CatalogOptions {
    /// Also emit generator rows for buses without capacity (these can never
    /// bind or be violated).
    pub include_degenerate_constraints: bool,
}

/// Ordered chance constraints: per generator bus `upper, lower`, then per
/// line `upper, lower`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCatalog {
    entries: Vec<ConstraintDescriptor>,
    alpha: ParticipationFactors,
}

impl ConstraintCatalog {
    pub fn entries(&self) -> &[ConstraintDescriptor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn alpha(&self) -> &ParticipationFactors {
        &self.alpha
    }

    pub fn get(&self, i: usize) -> &ConstraintDescriptor {
        &self.entries[i]
    }
}

pub fn build_catalog(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    alpha: &ParticipationFactors,
    moments: &MomentEstimate,
    options: CatalogOptions,
) -> Result<ConstraintCatalog, ReformulationError> {
    let m = case.n_buses();
    for got in [alpha.len(), ptdf.n_buses(), moments.n_buses()] {
        if got != m {
            return Err(ReformulationError::Dimension { expected: m, got });
        }
    }
    if ptdf.n_lines() != case.n_lines() {
        return Err(ReformulationError::Dimension { expected: case.n_lines(), got: ptdf.n_lines() });
    }
    let p_max = case.p_max_pu();
    let p_min = case.p_min_pu();
    let mut entries = Vec::new();
    for (bus, g) in case.generators().iter().enumerate() {
        if !g.has_capacity() && !options.include_degenerate_constraints {
            continue;
        }
        let a = vec![alpha.as_slice()[bus]; m];
        let sigma = sensitivity_norm(&a, moments);
        entries.push(ConstraintDescriptor {
            kind: ConstraintKind::GenUpper,
            subject: bus,
            sensitivity: a.clone(),
            nominal_limit: p_max[bus],
            tightening: sigma,
        });
        entries.push(ConstraintDescriptor {
            kind: ConstraintKind::GenLower,
            subject: bus,
            sensitivity: a,
            nominal_limit: p_min[bus],
            tightening: sigma,
        });
    }
    let deltas = constraint_deltas(ptdf, alpha);
    let caps = case.capacities_pu();
    for (line, &cap) in caps.iter().enumerate() {
        let a = deltas.row(line).to_vec();
        let sigma = sensitivity_norm(&a, moments);
        for kind in [ConstraintKind::LineUpper, ConstraintKind::LineLower] {
            entries.push(ConstraintDescriptor {
                kind,
                subject: line,
                sensitivity: a.clone(),
                nominal_limit: cap,
                tightening: sigma,
            });
        }
    }
    Ok(ConstraintCatalog { entries, alpha: alpha.clone() })
}

/// The deterministic program for one safety parameter. Inequality row `k`
/// of [`TightenedQp::program`] is catalog entry `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TightenedQp {
    pub s: f64,
    pub program: QuadraticProgram,
    /// Bus index of each decision variable.
    pub variables: Vec<usize>,
    /// Dispatch of buses whose output is fixed (`p_min = p_max`), zero at
    /// variable buses.
    pub fixed: Vec<f64>,
}

impl TightenedQp {
    /// Expands a solver vector to a full per-bus dispatch.
    pub fn dispatch(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.fixed.clone();
        for (&bus, &v) in self.variables.iter().zip(x) {
            p[bus] = v;
        }
        p
    }
}

pub fn build_qp(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    catalog: &ConstraintCatalog,
    s: f64,
) -> Result<TightenedQp, ReformulationError> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(ReformulationError::InvalidSafety(s));
    }
    let m = case.n_buses();
    let p_max = case.p_max_pu();
    let p_min = case.p_min_pu();
    let loads = case.loads_pu();

    let mut var_of = vec![None; m];
    let mut variables = Vec::new();
    let mut fixed = vec![0.0; m];
    for bus in 0..m {
        if p_max[bus] > p_min[bus] {
            var_of[bus] = Some(variables.len());
            variables.push(bus);
        } else {
            fixed[bus] = p_min[bus];
        }
    }
    let n = variables.len();

    let mut quad = vec![0.0; n];
    let mut lin = vec![0.0; n];
    let mut constant = 0.0;
    for (bus, g) in case.generators().iter().enumerate() {
        if g.units == 0 {
            continue;
        }
        let c = case.cost_pu(bus);
        match var_of[bus] {
            Some(v) => {
                quad[v] = c.c2;
                lin[v] = c.c1;
                constant += c.c0;
            }
            None => constant += c.eval(fixed[bus]),
        }
    }

    let eq = Matrix::from_row_major(1, n, vec![1.0; n]);
    let eq_rhs = vec![loads.iter().sum::<f64>() - fixed.iter().sum::<f64>()];

    // flows contributed by fixed injections and loads
    let base_net: Vec<f64> = fixed.iter().zip(&loads).map(|(p, d)| p - d).collect();
    let base_flow: Vec<f64> = (0..ptdf.n_lines()).map(|l| dot(ptdf.row(l), &base_net)).collect();

    let rows = catalog.len();
    let mut ineq = Matrix::zeros(rows, n);
    let mut ineq_rhs = vec![0.0; rows];
    for (k, c) in catalog.entries().iter().enumerate() {
        let tight = c.nominal_limit - s * c.tightening;
        match c.kind {
            ConstraintKind::GenUpper => match var_of[c.subject] {
                Some(v) => {
                    ineq[(k, v)] = 1.0;
                    ineq_rhs[k] = tight;
                }
                None => ineq_rhs[k] = tight - fixed[c.subject],
            },
            ConstraintKind::GenLower => {
                let lower = c.nominal_limit + s * c.tightening;
                match var_of[c.subject] {
                    Some(v) => {
                        ineq[(k, v)] = -1.0;
                        ineq_rhs[k] = -lower;
                    }
                    None => ineq_rhs[k] = fixed[c.subject] - lower,
                }
            }
            ConstraintKind::LineUpper | ConstraintKind::LineLower => {
                let sign = if c.kind == ConstraintKind::LineUpper { 1.0 } else { -1.0 };
                let row = ptdf.row(c.subject);
                for (v, &bus) in variables.iter().enumerate() {
                    ineq[(k, v)] = sign * row[bus];
                }
                ineq_rhs[k] = tight - sign * base_flow[c.subject];
            }
        }
    }

    Ok(TightenedQp {
        s,
        program: QuadraticProgram { quad, lin, constant, eq, eq_rhs, ineq, ineq_rhs },
        variables,
        fixed,
    })
}

/// Scheduled generation from one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSolution {
    pub s: f64,
    pub status: QpStatus,
    /// Per-bus scheduled generation, per unit.
    pub p_g: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Objective value in the case's cost units.
    pub cost: f64,
    pub solver_iterations: usize,
}

pub fn solve_dispatch(
    tqp: &TightenedQp,
    alpha: &ParticipationFactors,
    settings: &SolverSettings,
) -> DispatchSolution {
    let sol = qp::solve(&tqp.program, settings);
    DispatchSolution {
        s: tqp.s,
        status: sol.status,
        p_g: tqp.dispatch(&sol.primal),
        alpha: alpha.as_slice().to_vec(),
        cost: sol.objective,
        solver_iterations: sol.iterations,
    }
}
