//! DC power-flow operators.

use alloc::vec::Vec;

use crate::error::NetworkError;
use crate::grid::GridCase;
use crate::linalg::{dot, Cholesky, Matrix};

/// Tolerance on `Σ injections` accepted by [`nominal_flows`].
pub const BALANCE_TOL: f64 = 1e-8;

/// Power transfer distribution factors: `l` rows (lines, case order) by
/// `m` columns (buses). The slack column is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PtdfMatrix {
    entries: Matrix,
    slack: usize,
}

impl PtdfMatrix {
    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// Slack bus index (0-based).
    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn n_lines(&self) -> usize {
        self.entries.rows()
    }

    pub fn n_buses(&self) -> usize {
        self.entries.cols()
    }

    pub fn row(&self, line: usize) -> &[f64] {
        self.entries.row(line)
    }

    /// `M · p`
    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        self.entries.mul_vec(injections)
    }
}

/// Builds the reduced nodal susceptance matrix with the slack row and
/// column removed. Index map: reduced position `k` is bus `k` for `k <
/// slack` and bus `k + 1` otherwise.
pub fn reduced_susceptance(case: &GridCase, slack: usize) -> Matrix {
    let m = case.n_buses();
    let red = |i: usize| -> Option<usize> {
        match i.cmp(&slack) {
            core::cmp::Ordering::Less => Some(i),
            core::cmp::Ordering::Equal => None,
            core::cmp::Ordering::Greater => Some(i - 1),
        }
    };
    let mut b = Matrix::zeros(m - 1, m - 1);
    for line in case.lines() {
        let y = 1.0 / line.reactance_pu;
        let (f, t) = (red(line.from), red(line.to));
        if let Some(f) = f {
            b[(f, f)] += y;
        }
        if let Some(t) = t {
            b[(t, t)] += y;
        }
        if let (Some(f), Some(t)) = (f, t) {
            b[(f, t)] -= y;
            b[(t, f)] -= y;
        }
    }
    b
}

/// Computes `M = B_f · B_red⁻¹` with a zero slack column. `slack_id` is a
/// normalized bus id (1-based).
pub fn compute_ptdf(case: &GridCase, slack_id: u32) -> Result<PtdfMatrix, NetworkError> {
    let slack = case
        .bus_index(slack_id)
        .ok_or(NetworkError::InvalidSlack(slack_id))?;
    let m = case.n_buses();
    let l = case.n_lines();
    let mut entries = Matrix::zeros(l, m);
    if m == 1 {
        return Ok(PtdfMatrix { entries, slack });
    }
    let b_red = reduced_susceptance(case, slack);
    let chol = Cholesky::factor(&b_red).ok_or_else(|| {
        let reached = case.reachable_from(slack);
        NetworkError::Singular {
            component: case
                .buses()
                .iter()
                .zip(reached)
                .filter(|(_, r)| !*r)
                .map(|(b, _)| b.id)
                .collect(),
        }
    })?;

    // Column j of B_red⁻¹ gives the angles for a unit injection at bus j
    // withdrawn at the slack.
    let full = |k: usize| if k < slack { k } else { k + 1 };
    let mut e = alloc::vec![0.0; m - 1];
    for k in 0..(m - 1) {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[k] = 1.0;
        let reduced = chol.solve(&e);
        let mut theta = alloc::vec![0.0; m];
        for (r, v) in reduced.into_iter().enumerate() {
            theta[full(r)] = v;
        }
        let col = full(k);
        for (i, line) in case.lines().iter().enumerate() {
            entries[(i, col)] = (theta[line.from] - theta[line.to]) / line.reactance_pu;
        }
    }
    Ok(PtdfMatrix { entries, slack })
}

/// Line flows `M (p_G − d)` at zero uncertainty, per unit.
pub fn nominal_flows(ptdf: &PtdfMatrix, p_g: &[f64], d: &[f64]) -> Result<Vec<f64>, NetworkError> {
    let m = ptdf.n_buses();
    for v in [p_g, d] {
        if v.len() != m {
            return Err(NetworkError::Dimension { expected: m, got: v.len() });
        }
    }
    let net: Vec<f64> = p_g.iter().zip(d).map(|(g, l)| g - l).collect();
    let imbalance: f64 = net.iter().sum();
    if imbalance.abs() > BALANCE_TOL {
        return Err(NetworkError::Imbalance { imbalance });
    }
    Ok((0..ptdf.n_lines()).map(|i| dot(ptdf.row(i), &net)).collect())
}
