//! Empirical violation probabilities of a dispatch over uncertainty samples.
//!
//! A constraint is violated on a sample when its inner inequality fails
//! strictly; a sample sitting exactly on a limit counts as satisfied.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::EvalError;
use crate::grid::GridCase;
use crate::linalg::{dot, Matrix};
use crate::network::PtdfMatrix;
use crate::reformulation::{ConstraintCatalog, ConstraintKind, ParticipationFactors};
use crate::uncertainty::SampleSet;

/// `M (I − α 𝟙ᵀ)`: line-flow response to an uncertainty realization once
/// the AGC has rebalanced it.
pub fn constraint_deltas(ptdf: &PtdfMatrix, alpha: &ParticipationFactors) -> Matrix {
    let m = ptdf.n_buses();
    let a = alpha.as_slice();
    let mut out = Matrix::zeros(ptdf.n_lines(), m);
    for l in 0..ptdf.n_lines() {
        let row = ptdf.row(l);
        let shift = dot(row, a);
        for (o, &v) in out.row_mut(l).iter_mut().zip(row) {
            *o = v - shift;
        }
    }
    out
}

/// Violation counts over `n_samples` samples. Probabilities are the exact
/// ratios `count / n_samples`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationReport {
    counts: Vec<u64>,
    joint_count: u64,
    n_samples: u64,
}

impl ViolationReport {
    pub fn empty(n_constraints: usize) -> Self {
        Self { counts: vec![0; n_constraints], joint_count: 0, n_samples: 0 }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn joint_count(&self) -> u64 {
        self.joint_count
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    /// Largest per-constraint count.
    pub fn single_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn per_constraint(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| self.ratio(c)).collect()
    }

    pub fn eps_single(&self) -> f64 {
        self.ratio(self.single_count())
    }

    pub fn eps_joint(&self) -> f64 {
        self.ratio(self.joint_count)
    }

    fn ratio(&self, count: u64) -> f64 {
        if self.n_samples == 0 {
            0.0
        } else {
            count as f64 / self.n_samples as f64
        }
    }

    /// Adds the counts of a report over a disjoint sample range.
    pub fn merge(&mut self, other: &ViolationReport) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.joint_count += other.joint_count;
        self.n_samples += other.n_samples;
    }
}

#[derive(Debug, Clone, Copy)]
enum Check {
    GenUpper { bus: usize, limit: f64 },
    GenLower { bus: usize, limit: f64 },
    LineUpper { line: usize, limit: f64 },
    LineLower { line: usize, limit: f64 },
}

/// Precomputed evaluation data for one catalog; reused across dispatches
/// and sample sets with the same support.
#[derive(Debug, Clone)]
pub struct ViolationEvaluator {
    checks: Vec<Check>,
    alpha: Vec<f64>,
    loads: Vec<f64>,
    ptdf: Matrix,
    /// `M (I − α𝟙ᵀ)` restricted to the support columns, `l × k`.
    deltas: Matrix,
    support: Vec<usize>,
}

impl ViolationEvaluator {
    pub fn new(case: &GridCase, ptdf: &PtdfMatrix, catalog: &ConstraintCatalog, support: &[usize]) -> Self {
        let full = constraint_deltas(ptdf, catalog.alpha());
        let mut deltas = Matrix::zeros(ptdf.n_lines(), support.len());
        for l in 0..ptdf.n_lines() {
            for (c, &b) in support.iter().enumerate() {
                deltas[(l, c)] = full[(l, b)];
            }
        }
        let checks = catalog
            .entries()
            .iter()
            .map(|c| match c.kind {
                ConstraintKind::GenUpper => Check::GenUpper { bus: c.subject, limit: c.nominal_limit },
                ConstraintKind::GenLower => Check::GenLower { bus: c.subject, limit: c.nominal_limit },
                ConstraintKind::LineUpper => Check::LineUpper { line: c.subject, limit: c.nominal_limit },
                ConstraintKind::LineLower => Check::LineLower { line: c.subject, limit: c.nominal_limit },
            })
            .collect();
        Self {
            checks,
            alpha: catalog.alpha().as_slice().to_vec(),
            loads: case.loads_pu(),
            ptdf: ptdf.entries().clone(),
            deltas,
            support: support.to_vec(),
        }
    }

    pub fn n_constraints(&self) -> usize {
        self.checks.len()
    }

    pub fn evaluate(&self, p_g: &[f64], samples: &SampleSet) -> Result<ViolationReport, EvalError> {
        if samples.is_empty() {
            return Err(EvalError::NoSamples);
        }
        self.evaluate_range(p_g, samples, 0..samples.len())
    }

    /// Counts violations over samples `range` only.
    pub fn evaluate_range(
        &self,
        p_g: &[f64],
        samples: &SampleSet,
        range: Range<usize>,
    ) -> Result<ViolationReport, EvalError> {
        let m = self.alpha.len();
        if p_g.len() != m {
            return Err(EvalError::Dimension { what: "dispatch", expected: m, got: p_g.len() });
        }
        if samples.n_buses() != m {
            return Err(EvalError::Dimension { what: "samples", expected: m, got: samples.n_buses() });
        }
        if samples.support() != self.support.as_slice() {
            return Err(EvalError::Dimension {
                what: "sample support",
                expected: self.support.len(),
                got: samples.support().len(),
            });
        }
        let net: Vec<f64> = p_g.iter().zip(&self.loads).map(|(p, d)| p - d).collect();
        let flow0 = self.ptdf.mul_vec(&net);
        let n_lines = flow0.len();
        let k = self.support.len();

        let mut report = ViolationReport::empty(self.checks.len());
        let mut xi = vec![0.0; k];
        let mut flows = vec![0.0; n_lines];
        for i in range {
            let row = samples.sample(i);
            let mut omega = 0.0;
            for (c, &b) in self.support.iter().enumerate() {
                xi[c] = row[b];
                omega += row[b];
            }
            for (l, f) in flows.iter_mut().enumerate() {
                *f = flow0[l] + dot(self.deltas.row(l), &xi);
            }
            let mut any = false;
            for (count, check) in report.counts.iter_mut().zip(&self.checks) {
                let violated = match *check {
                    Check::GenUpper { bus, limit } => p_g[bus] - self.alpha[bus] * omega > limit,
                    Check::GenLower { bus, limit } => p_g[bus] - self.alpha[bus] * omega < limit,
                    Check::LineUpper { line, limit } => flows[line] > limit,
                    Check::LineLower { line, limit } => flows[line] < -limit,
                };
                if violated {
                    *count += 1;
                    any = true;
                }
            }
            if any {
                report.joint_count += 1;
            }
            report.n_samples += 1;
        }
        Ok(report)
    }
}

/// One-shot evaluation without keeping the precomputed data.
pub fn evaluate(
    p_g: &[f64],
    case: &GridCase,
    ptdf: &PtdfMatrix,
    samples: &SampleSet,
    catalog: &ConstraintCatalog,
) -> Result<ViolationReport, EvalError> {
    ViolationEvaluator::new(case, ptdf, catalog, samples.support()).evaluate(p_g, samples)
}

/// Straightforward per-sample evaluation through the full flow expression
/// `M (p_G − α Ω + ξ − d)`, used to cross-check [`ViolationEvaluator`].
pub mod reference {
    use super::*;

    pub fn evaluate(
        p_g: &[f64],
        alpha: &[f64],
        ptdf: &PtdfMatrix,
        case: &GridCase,
        samples: &SampleSet,
        catalog: &ConstraintCatalog,
    ) -> ViolationReport {
        let loads = case.loads_pu();
        let m = loads.len();
        let mut report = ViolationReport::empty(catalog.len());
        for xi in samples.iter() {
            let omega: f64 = xi.iter().sum();
            let actual: Vec<f64> = (0..m).map(|i| p_g[i] - alpha[i] * omega).collect();
            let injection: Vec<f64> = (0..m).map(|i| actual[i] + xi[i] - loads[i]).collect();
            let mut any = false;
            for (k, c) in catalog.entries().iter().enumerate() {
                let violated = match c.kind {
                    ConstraintKind::GenUpper => actual[c.subject] > c.nominal_limit,
                    ConstraintKind::GenLower => actual[c.subject] < c.nominal_limit,
                    ConstraintKind::LineUpper => dot(ptdf.row(c.subject), &injection) > c.nominal_limit,
                    ConstraintKind::LineLower => dot(ptdf.row(c.subject), &injection) < -c.nominal_limit,
                };
                if violated {
                    report.counts[k] += 1;
                    any = true;
                }
            }
            if any {
                report.joint_count += 1;
            }
            report.n_samples += 1;
        }
        report
    }
}
