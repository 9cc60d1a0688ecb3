//! Line-oriented case file format.
//!
//! ```text
//! base <mva>
//! bus  <id> <load_mw> [uncertain]
//! line <from> <to> <x_pu> <cap_mw>
//! gen  <bus> <pmin_mw> <pmax_mw> <c2> <c1> <c0>
//! ```
//!
//! `#` starts a comment. Records may appear in any order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ccopf_core::error::GridError;
use ccopf_core::grid::{BusRecord, GenRecord, GridCase, LineRecord, QuadraticCost};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("no 'base' record")]
    MissingBase,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// Records exactly as read, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecords {
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    pub gens: Vec<GenRecord>,
}

impl CaseRecords {
    pub fn into_case(self) -> Result<GridCase, CaseFileError> {
        Ok(GridCase::from_records(self.base_mva, &self.buses, &self.lines, &self.gens)?)
    }
}

pub fn parse_records(text: &str) -> Result<CaseRecords, CaseFileError> {
    let mut base = None;
    let mut buses = Vec::new();
    let mut lines = Vec::new();
    let mut gens = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = Fields { parts: content.split_whitespace(), line: line_no };
        let keyword = fields.parts.next().unwrap_or_default();
        match keyword {
            "base" => {
                if base.is_some() {
                    return Err(syntax(line_no, "duplicate 'base' record"));
                }
                base = Some(fields.next::<f64>("base MVA")?);
            }
            "bus" => {
                let id = fields.next("bus id")?;
                let load_mw = fields.next("load")?;
                let uncertain = match fields.parts.next() {
                    None => false,
                    Some("uncertain") => true,
                    Some(other) => return Err(syntax(line_no, format!("unexpected '{other}' after bus load"))),
                };
                buses.push(BusRecord { id, load_mw, uncertain });
            }
            "line" => lines.push(LineRecord {
                from: fields.next("from bus")?,
                to: fields.next("to bus")?,
                reactance_pu: fields.next("reactance")?,
                capacity_mw: fields.next("capacity")?,
            }),
            "gen" => gens.push(GenRecord {
                bus: fields.next("generator bus")?,
                p_min_mw: fields.next("pmin")?,
                p_max_mw: fields.next("pmax")?,
                cost: QuadraticCost::new(fields.next("c2")?, fields.next("c1")?, fields.next("c0")?),
            }),
            other => return Err(syntax(line_no, format!("unknown record '{other}'"))),
        }
        if let Some(extra) = fields.parts.next() {
            return Err(syntax(line_no, format!("unexpected trailing field '{extra}'")));
        }
    }
    Ok(CaseRecords { base_mva: base.ok_or(CaseFileError::MissingBase)?, buses, lines, gens })
}

pub fn parse_case(text: &str) -> Result<GridCase, CaseFileError> {
    parse_records(text)?.into_case()
}

pub fn read_case(path: &Path) -> Result<GridCase, CaseFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseFileError::Io { path: path.to_owned(), source })?;
    parse_case(&text)
}

/// Writes a case with normalized bus ids and one generator record per
/// bus that has units. Numbers use the shortest exact representation, so
/// reading the output back reproduces every value.
pub fn write_case(case: &GridCase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "base {}", case.base_mva());
    for b in case.buses() {
        let flag = if b.has_uncertainty { " uncertain" } else { "" };
        let _ = writeln!(out, "bus {} {}{}", b.id, b.load_mw, flag);
    }
    let id = |idx: usize| case.buses()[idx].id;
    for l in case.lines() {
        let _ = writeln!(out, "line {} {} {} {}", id(l.from), id(l.to), l.reactance_pu, l.capacity_mw);
    }
    for g in case.generators().iter().filter(|g| g.units > 0) {
        let c = g.cost;
        let _ = writeln!(out, "gen {} {} {} {} {} {}", id(g.bus), g.p_min_mw, g.p_max_mw, c.c2, c.c1, c.c0);
    }
    out
}

struct Fields<'a> {
    parts: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl Fields<'_> {
    fn next<T: FromStr>(&mut self, what: &str) -> Result<T, CaseFileError> {
        let tok = self.parts.next().ok_or_else(|| syntax(self.line, format!("missing {what}")))?;
        tok.parse().map_err(|_| syntax(self.line, format!("invalid {what} '{tok}'")))
    }
}

fn syntax(line: usize, message: impl Into<String>) -> CaseFileError {
    CaseFileError::Syntax { line, message: message.into() }
}
