//! Power-system data model.
//!
//! External quantities (loads, capacities, generator limits, cost
//! coefficients) are stored in MW exactly as read; per-unit views on
//! `base_mva` are produced on demand so that a case survives a text
//! round trip bit-for-bit.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::GridError;

/// A bus as it appears in an input file, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    pub id: u32,
    pub load_mw: f64,
    pub uncertain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineRecord {
    pub from: u32,
    pub to: u32,
    pub reactance_pu: f64,
    pub capacity_mw: f64,
}

/// One generating unit. Several units may sit on the same bus.
#[derive(Debug, Clone, PartialEq)]
pub struct GenRecord {
    pub bus: u32,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub cost: QuadraticCost,
}

/// `c2 p² + c1 p + c0` with `p` in MW.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadraticCost {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl QuadraticCost {
    pub fn new(c2: f64, c1: f64, c0: f64) -> Self {
        Self { c2, c1, c0 }
    }

    pub fn eval(&self, p_mw: f64) -> f64 {
        self.c2 * p_mw * p_mw + self.c1 * p_mw + self.c0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Normalized id, `1..=m` in ascending order of the original ids.
    pub id: u32,
    /// Id used in the source file.
    pub source_id: u32,
    pub load_mw: f64,
    pub has_uncertainty: bool,
}

/// A transmission line between two bus indices (0-based positions in
/// [`GridCase::buses`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub reactance_pu: f64,
    pub capacity_mw: f64,
}

/// The aggregated generator at one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub cost: QuadraticCost,
    /// Number of units merged into this record (0 for an implicit empty slot).
    pub units: usize,
}

impl Generator {
    pub fn has_capacity(&self) -> bool {
        self.p_max_mw > 0.0
    }
}

/// A validated grid with exactly one (possibly empty) generator per bus.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    base_mva: f64,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
}

impl GridCase {
    /// Validates raw records, renumbers buses contiguously, and merges
    /// generating units that share a bus.
    pub fn from_records(
        base_mva: f64,
        bus_records: &[BusRecord],
        line_records: &[LineRecord],
        gen_records: &[GenRecord],
    ) -> Result<Self, GridError> {
        if !(base_mva > 0.0) || !base_mva.is_finite() {
            return Err(GridError::InvalidBase(base_mva));
        }
        if bus_records.is_empty() {
            return Err(GridError::Empty);
        }

        let mut sorted: Vec<&BusRecord> = bus_records.iter().collect();
        sorted.sort_by_key(|b| b.id);
        let mut index_of = BTreeMap::new();
        let mut buses = Vec::with_capacity(sorted.len());
        for (idx, rec) in sorted.iter().enumerate() {
            if index_of.insert(rec.id, idx).is_some() {
                return Err(GridError::DuplicateBus(rec.id));
            }
            if !(rec.load_mw >= 0.0) || !rec.load_mw.is_finite() {
                return Err(GridError::InvalidLoad { bus: rec.id, value: rec.load_mw });
            }
            buses.push(Bus {
                id: idx as u32 + 1,
                source_id: rec.id,
                load_mw: rec.load_mw,
                has_uncertainty: rec.uncertain,
            });
        }
        let lookup = |id: u32, what: &'static str| {
            index_of
                .get(&id)
                .copied()
                .ok_or(GridError::UndefinedBus { id, referenced_by: what })
        };

        let mut lines = Vec::with_capacity(line_records.len());
        for (k, rec) in line_records.iter().enumerate() {
            let from = lookup(rec.from, "line")?;
            let to = lookup(rec.to, "line")?;
            if from == to {
                return Err(GridError::SelfLoop { line: k, bus: rec.from });
            }
            if !(rec.reactance_pu > 0.0) || !rec.reactance_pu.is_finite() {
                return Err(GridError::NonPositiveReactance { line: k, value: rec.reactance_pu });
            }
            if !(rec.capacity_mw > 0.0) || !rec.capacity_mw.is_finite() {
                return Err(GridError::NonPositiveCapacity { line: k, value: rec.capacity_mw });
            }
            lines.push(Line {
                from,
                to,
                reactance_pu: rec.reactance_pu,
                capacity_mw: rec.capacity_mw,
            });
        }

        let mut per_bus: Vec<Vec<&GenRecord>> = vec![Vec::new(); buses.len()];
        for rec in gen_records {
            let idx = lookup(rec.bus, "generator")?;
            let c = &rec.cost;
            let finite = [rec.p_min_mw, rec.p_max_mw, c.c2, c.c1, c.c0]
                .iter()
                .all(|v| v.is_finite());
            if !finite || rec.p_min_mw > rec.p_max_mw || c.c2 < 0.0 {
                return Err(GridError::InvalidGenerator { bus: rec.bus });
            }
            per_bus[idx].push(rec);
        }
        let generators = per_bus
            .iter()
            .enumerate()
            .map(|(bus, units)| aggregate_units(bus, units))
            .collect();

        let case = Self {
            base_mva,
            buses,
            lines,
            generators,
        };
        case.check_connected()?;
        let cap: f64 = case.generators.iter().map(|g| g.p_max_mw).sum();
        let load: f64 = case.buses.iter().map(|b| b.load_mw).sum();
        if cap < load {
            return Err(GridError::InsufficientCapacity { capacity_mw: cap, load_mw: load });
        }
        Ok(case)
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let reached = self.reachable_from(0);
        let unreachable: Vec<u32> = self
            .buses
            .iter()
            .zip(&reached)
            .filter(|(_, r)| !**r)
            .map(|(b, _)| b.source_id)
            .collect();
        if unreachable.is_empty() {
            Ok(())
        } else {
            Err(GridError::Disconnected { unreachable })
        }
    }

    /// Breadth-first reachability over lines.
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let m = self.buses.len();
        let mut adj = vec![Vec::new(); m];
        for line in &self.lines {
            adj[line.from].push(line.to);
            adj[line.to].push(line.from);
        }
        let mut seen = vec![false; m];
        let mut queue = alloc::collections::VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// One entry per bus, in bus order.
    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    /// Index of the bus with the given normalized id.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        let idx = (id as usize).checked_sub(1)?;
        (idx < self.buses.len()).then_some(idx)
    }

    /// Index of the bus with the given source-file id.
    pub fn bus_index_by_source(&self, source_id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.source_id == source_id)
    }

    pub fn uncertain_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.has_uncertainty)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_pu(&self, mw: f64) -> f64 {
        mw / self.base_mva
    }

    pub fn loads_pu(&self) -> Vec<f64> {
        self.buses.iter().map(|b| self.to_pu(b.load_mw)).collect()
    }

    pub fn p_max_pu(&self) -> Vec<f64> {
        self.generators.iter().map(|g| self.to_pu(g.p_max_mw)).collect()
    }

    pub fn p_min_pu(&self) -> Vec<f64> {
        self.generators.iter().map(|g| self.to_pu(g.p_min_mw)).collect()
    }

    pub fn capacities_pu(&self) -> Vec<f64> {
        self.lines.iter().map(|l| self.to_pu(l.capacity_mw)).collect()
    }

    /// Cost coefficients rescaled so that the argument is in per unit.
    pub fn cost_pu(&self, bus: usize) -> QuadraticCost {
        let c = self.generators[bus].cost;
        QuadraticCost::new(c.c2 * self.base_mva * self.base_mva, c.c1 * self.base_mva, c.c0)
    }

    /// Total cost of a per-unit dispatch (one entry per bus).
    pub fn dispatch_cost(&self, p_pu: &[f64]) -> f64 {
        self.generators
            .iter()
            .zip(p_pu)
            .map(|(g, &p)| if g.units == 0 { 0.0 } else { g.cost.eval(p * self.base_mva) })
            .sum()
    }

    /// Flags exactly the given bus ids (as written in the source file) as uncertainty sources.
    pub fn with_uncertainty_at(mut self, ids: &[u32]) -> Result<Self, GridError> {
        let mut flags = vec![false; self.buses.len()];
        for &id in ids {
            let idx = self
                .bus_index_by_source(id)
                .ok_or(GridError::UndefinedBus { id, referenced_by: "uncertainty placement" })?;
            flags[idx] = true;
        }
        for (bus, flag) in self.buses.iter_mut().zip(flags) {
            bus.has_uncertainty = flag;
        }
        Ok(self)
    }

    pub fn apply(mut self, mods: &CaseModifications) -> Self {
        for line in &mut self.lines {
            line.capacity_mw *= mods.line_capacity_scale;
        }
        for g in &mut self.generators {
            if mods.zero_min_output {
                g.p_min_mw = 0.0;
            }
            g.p_max_mw *= mods.max_output_scale;
        }
        for id in &mods.uncertain_buses {
            if let Some(idx) = self.bus_index(*id) {
                self.buses[idx].has_uncertainty = true;
            }
        }
        self
    }
}

/// Scalings applied to a base case before a study.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseModifications {
    pub line_capacity_scale: f64,
    pub zero_min_output: bool,
    pub max_output_scale: f64,
    /// Normalized bus ids that receive an uncertainty source.
    pub uncertain_buses: Vec<u32>,
}

impl CaseModifications {
    /// 70% line ratings, zero minimum output, doubled maximum output,
    /// uncertainty at buses 8 and 15.
    pub fn rts96() -> Self {
        Self {
            line_capacity_scale: 0.70,
            zero_min_output: true,
            max_output_scale: 2.0,
            uncertain_buses: vec![8, 15],
        }
    }
}

/// Applies [`CaseModifications::rts96`].
pub fn apply_rts_modifications(case: GridCase) -> GridCase {
    case.apply(&CaseModifications::rts96())
}

/// Merges the units on one bus into a single generator.
///
/// Limits add. When every unit has a positive quadratic term the costs are
/// combined as an economic dispatch of parallel quadratics
/// (`1/c2 = Σ 1/c2ᵢ`); otherwise the cost of sharing output in proportion
/// to capacity is used.
fn aggregate_units(bus: usize, units: &[&GenRecord]) -> Generator {
    match units {
        [] => Generator {
            bus,
            p_min_mw: 0.0,
            p_max_mw: 0.0,
            cost: QuadraticCost::default(),
            units: 0,
        },
        [only] => Generator {
            bus,
            p_min_mw: only.p_min_mw,
            p_max_mw: only.p_max_mw,
            cost: only.cost,
            units: 1,
        },
        _ => {
            let p_min_mw = units.iter().map(|u| u.p_min_mw).sum();
            let p_max_mw: f64 = units.iter().map(|u| u.p_max_mw).sum();
            let c0_sum: f64 = units.iter().map(|u| u.cost.c0).sum();
            let cost = if units.iter().all(|u| u.cost.c2 > 0.0) {
                let inv_sum: f64 = units.iter().map(|u| 1.0 / u.cost.c2).sum();
                let c2 = 1.0 / inv_sum;
                let c1 = c2 * units.iter().map(|u| u.cost.c1 / u.cost.c2).sum::<f64>();
                // unit outputs at zero aggregate output, equal marginal cost c1
                let c0 = c0_sum
                    + units
                        .iter()
                        .map(|u| {
                            let p = (c1 - u.cost.c1) / (2.0 * u.cost.c2);
                            u.cost.c2 * p * p + u.cost.c1 * p
                        })
                        .sum::<f64>();
                QuadraticCost::new(c2, c1, c0)
            } else {
                let n = units.len() as f64;
                let weight = |u: &GenRecord| {
                    if p_max_mw > 0.0 {
                        u.p_max_mw / p_max_mw
                    } else {
                        1.0 / n
                    }
                };
                let c2 = units.iter().map(|u| u.cost.c2 * weight(u) * weight(u)).sum();
                let c1 = units.iter().map(|u| u.cost.c1 * weight(u)).sum();
                QuadraticCost::new(c2, c1, c0_sum)
            };
            Generator {
                bus,
                p_min_mw,
                p_max_mw,
                cost,
                units: units.len(),
            }
        }
    }
}
