//! Flat-file exports: PTDF and sample CSVs, tightened QPs, violation
//! reports and tuning traces.

use std::fmt::Write as _;
use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use ccopf_core::grid::GridCase;
use ccopf_core::network::PtdfMatrix;
use ccopf_core::reformulation::{ConstraintCatalog, TightenedQp};
use ccopf_core::tuner::{StepKind, TraceEntry};
use ccopf_core::uncertainty::SampleSet;
use ccopf_core::violation::ViolationReport;
use serde::{Deserialize, Serialize};

/// Twelve significant digits.
fn sci(v: f64) -> String {
    format!("{v:.11e}")
}

/// One row per line, one column per bus.
pub fn write_ptdf_csv<W: Write>(case: &GridCase, ptdf: &PtdfMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["line".to_string(), "from".into(), "to".into()];
    header.extend(case.buses().iter().map(|b| b.source_id.to_string()));
    w.write_record(&header)?;
    for (l, line) in case.lines().iter().enumerate() {
        let mut rec = vec![(l + 1).to_string(), case.buses()[line.from].source_id.to_string(), case.buses()[line.to].source_id.to_string()];
        rec.extend(ptdf.row(l).iter().map(|&v| sci(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One sample per row in MW, one column per bus (by id).
pub fn write_samples_csv<W: Write>(case: &GridCase, samples: &SampleSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(case.buses().iter().map(|b| b.source_id.to_string()))?;
    let base = case.base_mva();
    for row in samples.iter() {
        w.write_record(row.iter().map(|&v| (v * base).to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads samples written by [`write_samples_csv`]. Columns are matched to
/// buses by id; buses without a column and buses outside `support` read as
/// zero.
pub fn read_samples_csv<R: Read>(case: &GridCase, support: &[usize], input: R) -> Result<SampleSet> {
    let mut r = csv::Reader::from_reader(input);
    let columns: Vec<usize> = r
        .headers()?
        .iter()
        .map(|h| {
            let id: u32 = h.trim().parse().with_context(|| format!("column header '{h}' is not a bus id"))?;
            case.bus_index_by_source(id).with_context(|| format!("column for unknown bus {id}"))
        })
        .collect::<Result<_>>()?;
    let m = case.n_buses();
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut row = vec![0.0; m];
        for (&bus, field) in columns.iter().zip(rec.iter()) {
            let v: f64 = field.trim().parse().with_context(|| format!("sample {}: invalid value '{field}'", i + 1))?;
            row[bus] = case.to_pu(v);
        }
        data.extend(row);
    }
    Ok(SampleSet::from_rows(m, support, data, 0))
}

/// Plain-text listing of a tightened program in per unit:
/// `min Σ quad_i x_i² + lin·x + constant` subject to the equality and
/// inequality rows, each written as coefficients then right-hand side.
pub fn format_qp(case: &GridCase, tqp: &TightenedQp) -> String {
    let p = &tqp.program;
    let mut out = String::new();
    let _ = writeln!(out, "s {}", sci(tqp.s));
    let ids: Vec<String> = tqp.variables.iter().map(|&b| case.buses()[b].source_id.to_string()).collect();
    let _ = writeln!(out, "variables {}", ids.join(" "));
    let join = |v: &[f64]| v.iter().map(|&x| sci(x)).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "quad {}", join(&p.quad));
    let _ = writeln!(out, "lin {}", join(&p.lin));
    let _ = writeln!(out, "constant {}", sci(p.constant));
    for i in 0..p.eq.rows() {
        let _ = writeln!(out, "eq {} = {}", join(p.eq.row(i)), sci(p.eq_rhs[i]));
    }
    for i in 0..p.ineq.rows() {
        let _ = writeln!(out, "ineq {} <= {}", join(p.ineq.row(i)), sci(p.ineq_rhs[i]));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub kind: String,
    /// Bus id for generator rows, 1-based line number for line rows.
    pub subject: u32,
    pub limit_mw: f64,
    pub tightening_mw: f64,
    pub count: u64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationExport {
    pub n_samples: u64,
    pub seed: u64,
    pub eps_single: f64,
    pub eps_joint: f64,
    pub joint_count: u64,
    pub constraints: Vec<ConstraintViolation>,
}

impl ViolationExport {
    pub fn new(case: &GridCase, catalog: &ConstraintCatalog, report: &ViolationReport, seed: u64) -> Result<Self> {
        if report.counts().len() != catalog.len() {
            bail!("report has {} constraints, catalog has {}", report.counts().len(), catalog.len());
        }
        let base = case.base_mva();
        let eps = report.per_constraint();
        let constraints = catalog
            .entries()
            .iter()
            .zip(report.counts())
            .zip(eps)
            .map(|((c, &count), eps)| ConstraintViolation {
                kind: c.kind.name().to_string(),
                subject: if c.kind.is_generator() { case.buses()[c.subject].source_id } else { c.subject as u32 + 1 },
                limit_mw: c.nominal_limit * base,
                tightening_mw: c.tightening * base,
                count,
                eps,
            })
            .collect();
        Ok(Self {
            n_samples: report.n_samples(),
            seed,
            eps_single: report.eps_single(),
            eps_joint: report.eps_joint(),
            joint_count: report.joint_count(),
            constraints,
        })
    }
}

fn kind_name(kind: StepKind) -> &'static str {
    match kind {
        StepKind::Probe => "probe",
        StepKind::Bisection => "bisection",
        StepKind::Anchor => "anchor",
    }
}

/// Columns: iteration, kind, s, feasible, eps_obs_single, eps_obs_joint,
/// cost. Infeasible steps leave the last three blank.
pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "kind", "s", "feasible", "eps_obs_single", "eps_obs_joint", "cost"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            kind_name(t.kind).to_string(),
            t.s.to_string(),
            t.feasible.to_string(),
            opt(t.eps_single),
            opt(t.eps_joint),
            opt(t.cost),
        ])?;
    }
    w.flush()?;
    Ok(())
}
