//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ccopf_core::grid::{BusRecord, GenRecord, GridCase, LineRecord, QuadraticCost};
use ccopf_core::linalg::Matrix;
use ccopf_core::qp::QuadraticProgram;
use rand::Rng;

/// Dense Gaussian elimination with partial pivoting; `None` when a pivot
/// falls below `1e-12` times the largest entry.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Line flows from a DC power-flow solve in angle space: the full nodal
/// susceptance matrix with the slack angle pinned to zero.
pub fn angle_flows(case: &GridCase, slack: usize, injections: &[f64]) -> Vec<f64> {
    let m = case.n_buses();
    let mut b = vec![vec![0.0; m]; m];
    for l in case.lines() {
        let y = 1.0 / l.reactance_pu;
        b[l.from][l.from] += y;
        b[l.to][l.to] += y;
        b[l.from][l.to] -= y;
        b[l.to][l.from] -= y;
    }
    let mut rhs = injections.to_vec();
    for (i, row) in b.iter_mut().enumerate() {
        row[slack] = if i == slack { 1.0 } else { 0.0 };
    }
    b[slack] = vec![0.0; m];
    b[slack][slack] = 1.0;
    rhs[slack] = 0.0;
    let theta = gauss_solve(b, rhs).expect("connected network");
    case.lines()
        .iter()
        .map(|l| (theta[l.from] - theta[l.to]) / l.reactance_pu)
        .collect()
}

/// Minimizes a strictly convex diagonal QP by enumerating candidate active
/// sets. Returns the optimal point and objective, or `None` if no candidate
/// is feasible.
pub fn brute_force_qp(qp: &QuadraticProgram) -> Option<(Vec<f64>, f64)> {
    let n = qp.n_vars();
    assert!(qp.quad.iter().all(|&q| q > 0.0), "oracle needs a strictly convex objective");
    let eq: Vec<(Vec<f64>, f64)> = (0..qp.eq.rows()).map(|i| (qp.eq.row(i).to_vec(), qp.eq_rhs[i])).collect();
    let mut ineq = Vec::new();
    for i in 0..qp.ineq.rows() {
        let row = qp.ineq.row(i).to_vec();
        if row.iter().all(|&v| v == 0.0) {
            if qp.ineq_rhs[i] < 0.0 {
                return None;
            }
            continue;
        }
        ineq.push((row, qp.ineq_rhs[i]));
    }
    if eq.iter().any(|(r, f)| r.iter().all(|&v| v == 0.0) && *f != 0.0) {
        return None;
    }
    let eq: Vec<_> = eq.into_iter().filter(|(r, _)| r.iter().any(|&v| v != 0.0)).collect();

    let feasible = |x: &[f64]| {
        let tol = 1e-9;
        eq.iter().all(|(r, f)| (dot(r, x) - f).abs() <= tol * (1.0 + f.abs()))
            && ineq.iter().all(|(r, h)| dot(r, x) - h <= tol * (1.0 + h.abs()))
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let max_active = n.saturating_sub(eq.len());
    let mut subset = Vec::new();
    enumerate(ineq.len(), max_active, 0, &mut subset, &mut |active| {
        let rows: Vec<&(Vec<f64>, f64)> = eq.iter().chain(active.iter().map(|&k| &ineq[k])).collect();
        let k = rows.len();
        let mut a = vec![vec![0.0; n + k]; n + k];
        let mut b = vec![0.0; n + k];
        for i in 0..n {
            a[i][i] = 2.0 * qp.quad[i];
            b[i] = -qp.lin[i];
        }
        for (j, (r, rhs)) in rows.iter().enumerate() {
            for i in 0..n {
                a[i][n + j] = r[i];
                a[n + j][i] = r[i];
            }
            b[n + j] = *rhs;
        }
        if let Some(sol) = gauss_solve(a, b) {
            let x = sol[..n].to_vec();
            if feasible(&x) {
                let obj = qp.objective(&x);
                if best.as_ref().map_or(true, |(_, o)| obj < *o) {
                    best = Some((x, obj));
                }
            }
        }
    });
    best
}

fn enumerate(n: usize, max: usize, start: usize, current: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    f(current);
    if current.len() == max {
        return;
    }
    for k in start..n {
        current.push(k);
        enumerate(n, max, k + 1, current, f);
        current.pop();
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A random connected network with 3 to 7 buses, strictly convex costs and
/// two uncertain buses.
pub fn random_case<R: Rng>(rng: &mut R) -> GridCase {
    let m: u32 = rng.random_range(3..=7);
    let loads: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..80.0)).collect();
    let u1 = rng.random_range(1..=m);
    let u2 = loop {
        let b = rng.random_range(1..=m);
        if b != u1 {
            break b;
        }
    };
    let buses: Vec<BusRecord> = (1..=m)
        .map(|id| BusRecord { id, load_mw: loads[id as usize - 1], uncertain: id == u1 || id == u2 })
        .collect();

    let mut lines = Vec::new();
    let line = |rng: &mut R, from, to| LineRecord {
        from,
        to,
        reactance_pu: rng.random_range(0.02..0.4),
        capacity_mw: rng.random_range(60.0..300.0),
    };
    for i in 2..=m {
        let j = rng.random_range(1..i);
        lines.push(line(rng, j, i));
    }
    for _ in 0..rng.random_range(0..=2) {
        let a = rng.random_range(1..=m);
        let b = rng.random_range(1..=m);
        if a != b {
            lines.push(line(rng, a, b));
        }
    }

    let total_load: f64 = loads.iter().sum();
    let n_gen = rng.random_range(1..=3.min(m));
    let mut gen_buses: Vec<u32> = Vec::new();
    while gen_buses.len() < n_gen as usize {
        let b = rng.random_range(1..=m);
        if !gen_buses.contains(&b) {
            gen_buses.push(b);
        }
    }
    let share = 1.6 * total_load / n_gen as f64 + 30.0;
    let gens: Vec<GenRecord> = gen_buses
        .iter()
        .map(|&bus| {
            let p_min = rng.random_range(0.0..1.0) * (total_load / 4.0).min(10.0);
            GenRecord {
                bus,
                p_min_mw: p_min,
                p_max_mw: p_min + share * rng.random_range(0.8..1.5),
                cost: QuadraticCost::new(
                    rng.random_range(0.001..0.05),
                    rng.random_range(5.0..40.0),
                    rng.random_range(0.0..100.0),
                ),
            }
        })
        .collect();
    GridCase::from_records(100.0, &buses, &lines, &gens).expect("generated case is valid")
}

/// Random balanced injection vector.
pub fn balanced_injection<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mean = p.iter().sum::<f64>() / m as f64;
    p.iter_mut().for_each(|v| *v -= mean);
    p
}

/// A random strictly convex QP with up to 4 variables, an optional
/// equality row and box rows on every variable.
pub fn random_qp<R: Rng>(r: &mut R) -> QuadraticProgram {
    let n = r.random_range(1..=4);
    let quad: Vec<f64> = (0..n).map(|_| r.random_range(0.1..2.0)).collect();
    let lin: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let mut prog = QuadraticProgram::unconstrained(quad, lin);
    prog.constant = r.random_range(-1.0..1.0);
    if r.random_bool(0.5) {
        prog.eq = Matrix::from_row_major(1, n, (0..n).map(|_| r.random_range(0.5..1.5)).collect());
        prog.eq_rhs = vec![r.random_range(-1.0..2.0)];
    }
    let k = r.random_range(0..=5);
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for _ in 0..k {
        rows.push((0..n).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        rhs.push(r.random_range(-0.8..1.0));
    }
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        rows.push(e.clone());
        rhs.push(r.random_range(0.2..2.0));
        e[i] = -1.0;
        rows.push(e);
        rhs.push(r.random_range(0.2..2.0));
    }
    prog.ineq = Matrix::from_rows(&rows);
    prog.ineq_rhs = rhs;
    prog
}
