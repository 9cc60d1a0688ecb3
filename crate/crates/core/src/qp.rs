//! Dense primal-dual interior-point solver for convex QPs with a diagonal
//! Hessian:
//!
//! ```text
//!     minimize    Σ quad_i x_i² + linᵀ x + constant
//!     subject to  E x  = f
//!                 G x <= h
//! ```
//!
//! Feasibility is settled first by an explicit phase-1 LP
//! (`min t  s.t.  G x − t ≤ h,  E x = f,  t ≥ −1`); a positive optimum
//! `t*` is reported as infeasibility together with its multipliers, which
//! form a Farkas certificate (`Gᵀz + Eᵀy = 0`, `z ≥ 0`, `hᵀz + fᵀy < 0`).
//! The main problem is then solved with Mehrotra's predictor-corrector
//! method.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{axpy, dot, norm_inf, Cholesky, Lu, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    /// Diagonal quadratic coefficients (objective term `quad_i x_i²`), all `≥ 0`.
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    pub constant: f64,
    pub eq: Matrix,
    pub eq_rhs: Vec<f64>,
    pub ineq: Matrix,
    pub ineq_rhs: Vec<f64>,
}

impl QuadraticProgram {
    /// A problem with `n` variables and no constraints.
    pub fn unconstrained(quad: Vec<f64>, lin: Vec<f64>) -> Self {
        let n = quad.len();
        Self {
            quad,
            lin,
            constant: 0.0,
            eq: Matrix::zeros(0, n),
            eq_rhs: Vec::new(),
            ineq: Matrix::zeros(0, n),
            ineq_rhs: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.quad.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.quad
            .iter()
            .zip(&self.lin)
            .zip(x)
            .map(|((q, c), xi)| q * xi * xi + c * xi)
            .sum::<f64>()
            + self.constant
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self
            .eq
            .mul_vec(x)
            .iter()
            .zip(&self.eq_rhs)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let ineq = self
            .ineq
            .mul_vec(x)
            .iter()
            .zip(&self.ineq_rhs)
            .fold(0.0f64, |m, (a, b)| m.max(a - b));
        eq.max(ineq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// Scaled KKT residuals. Stationarity is relative to `1 + ‖lin‖∞`, primal
/// feasibility to `1 + max(‖f‖∞, ‖h‖∞)`, complementarity to `1 + |objective|`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feas: f64,
    pub dual_feas: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feas)
            .max(self.dual_feas)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    /// Equality multipliers `y`.
    pub eq: Vec<f64>,
    /// Nonnegative inequality multipliers `z`, normalized to sum to one.
    pub ineq: Vec<f64>,
    /// Phase-1 optimum: the smallest uniform relaxation of `G x ≤ h` that
    /// admits a point.
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub primal: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 200 }
    }
}

/// Recomputes the scaled residuals of `(x, y, z)` directly from the data.
pub fn kkt_residuals(qp: &QuadraticProgram, x: &[f64], y: &[f64], z: &[f64]) -> KktResiduals {
    let mut grad: Vec<f64> = qp
        .quad
        .iter()
        .zip(&qp.lin)
        .zip(x)
        .map(|((q, c), xi)| 2.0 * q * xi + c)
        .collect();
    for (i, &yi) in y.iter().enumerate() {
        axpy(yi, qp.eq.row(i), &mut grad);
    }
    for (i, &zi) in z.iter().enumerate() {
        axpy(zi, qp.ineq.row(i), &mut grad);
    }
    let eq_res = qp
        .eq
        .mul_vec(x)
        .iter()
        .zip(&qp.eq_rhs)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let slack: Vec<f64> = qp
        .ineq_rhs
        .iter()
        .zip(qp.ineq.mul_vec(x))
        .map(|(h, gx)| h - gx)
        .collect();
    let ineq_res = slack.iter().fold(0.0f64, |m, s| m.max(-s));
    let rhs_scale = 1.0 + norm_inf(&qp.eq_rhs).max(norm_inf(&qp.ineq_rhs));
    let comp: f64 = z.iter().zip(&slack).map(|(zi, si)| zi * si).sum();
    KktResiduals {
        stationarity: norm_inf(&grad) / (1.0 + norm_inf(&qp.lin)),
        primal_feas: eq_res.max(ineq_res) / rhs_scale,
        dual_feas: z.iter().fold(0.0f64, |m, zi| m.max(-zi)),
        complementarity: comp.abs() / (1.0 + qp.objective(x).abs()),
    }
}

/// Lagrangian dual objective at `(x, y, z)`, assuming `x` is stationary.
pub fn dual_objective(qp: &QuadraticProgram, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    let eq_term: f64 = qp
        .eq
        .mul_vec(x)
        .iter()
        .zip(&qp.eq_rhs)
        .zip(y)
        .map(|((a, b), yi)| yi * (a - b))
        .sum();
    let ineq_term: f64 = qp
        .ineq
        .mul_vec(x)
        .iter()
        .zip(&qp.ineq_rhs)
        .zip(z)
        .map(|((a, b), zi)| zi * (a - b))
        .sum();
    qp.objective(x) + eq_term + ineq_term
}

/// Indices of the inequality rows passed to the solver. All-zero rows with
/// a nonnegative right-hand side are vacuous; a negative one is returned as
/// the error.
fn split_rows(qp: &QuadraticProgram) -> Result<Vec<usize>, usize> {
    let mut kept = Vec::new();
    for i in 0..qp.ineq.rows() {
        if qp.ineq.row(i).iter().all(|&v| v == 0.0) {
            if qp.ineq_rhs[i] < -1e-12 {
                return Err(i);
            }
        } else {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn solve(qp: &QuadraticProgram, settings: &SolverSettings) -> QpSolution {
    let n = qp.n_vars();
    let n_ineq = qp.ineq.rows();

    // equality rows: drop 0 = 0, reject 0 = c
    let mut eq_kept = Vec::new();
    for i in 0..qp.eq.rows() {
        if qp.eq.row(i).iter().all(|&v| v == 0.0) {
            if qp.eq_rhs[i].abs() > 1e-12 {
                let mut eq = vec![0.0; qp.eq.rows()];
                eq[i] = -qp.eq_rhs[i].signum();
                return infeasible(qp, vec![0.0; n], eq, vec![0.0; n_ineq], qp.eq_rhs[i].abs(), 0);
            }
        } else {
            eq_kept.push(i);
        }
    }
    let kept = match split_rows(qp) {
        Ok(k) => k,
        Err(row) => {
            let mut z = vec![0.0; n_ineq];
            z[row] = 1.0;
            return infeasible(qp, vec![0.0; n], vec![0.0; qp.eq.rows()], z, -qp.ineq_rhs[row], 0);
        }
    };

    let e = select_rows(&qp.eq, &eq_kept);
    let f: Vec<f64> = eq_kept.iter().map(|&i| qp.eq_rhs[i]).collect();
    let g = select_rows(&qp.ineq, &kept);
    let h: Vec<f64> = kept.iter().map(|&i| qp.ineq_rhs[i]).collect();

    let mut phase1_iters = 0;
    if !kept.is_empty() {
        // phase 1 over (x, t)
        let mi = kept.len();
        let mut g1 = Matrix::zeros(mi + 1, n + 1);
        for i in 0..mi {
            g1.row_mut(i)[..n].copy_from_slice(g.row(i));
            g1[(i, n)] = -1.0;
        }
        g1[(mi, n)] = -1.0;
        let mut h1 = h.clone();
        h1.push(1.0);
        let mut e1 = Matrix::zeros(e.rows(), n + 1);
        for i in 0..e.rows() {
            e1.row_mut(i)[..n].copy_from_slice(e.row(i));
        }
        let mut lin1 = vec![0.0; n + 1];
        lin1[n] = 1.0;
        let p1 = Problem { hdiag: vec![0.0; n + 1], lin: &lin1, e: &e1, f: &f, g: &g1, h: &h1 };
        let out = interior_point(&p1, settings);
        phase1_iters = out.iterations;
        let t = out.x[n];
        let threshold = 10.0 * settings.tol * (1.0 + norm_inf(&h));
        if out.converged && t > threshold {
            let mut z = vec![0.0; n_ineq];
            let mass: f64 = out.z[..mi].iter().sum();
            for (k, &row) in kept.iter().enumerate() {
                z[row] = out.z[k] / mass.max(f64::MIN_POSITIVE);
            }
            let mut y = vec![0.0; qp.eq.rows()];
            for (k, &row) in eq_kept.iter().enumerate() {
                y[row] = out.y[k] / mass.max(f64::MIN_POSITIVE);
            }
            return infeasible(qp, out.x[..n].to_vec(), y, z, t, phase1_iters);
        }
        if !out.converged {
            let x = out.x[..n].to_vec();
            return finish(qp, QpStatus::MaxIterations, x, vec![0.0; qp.eq.rows()], vec![0.0; n_ineq], phase1_iters);
        }
    }

    let hdiag: Vec<f64> = qp.quad.iter().map(|q| 2.0 * q).collect();
    let p = Problem { hdiag, lin: &qp.lin, e: &e, f: &f, g: &g, h: &h };
    let out = interior_point(&p, settings);
    let mut y = vec![0.0; qp.eq.rows()];
    for (k, &row) in eq_kept.iter().enumerate() {
        y[row] = out.y[k];
    }
    let mut z = vec![0.0; n_ineq];
    for (k, &row) in kept.iter().enumerate() {
        z[row] = out.z[k];
    }
    let status = if out.converged { QpStatus::Optimal } else { QpStatus::MaxIterations };
    finish(qp, status, out.x, y, z, phase1_iters + out.iterations)
}

fn finish(qp: &QuadraticProgram, status: QpStatus, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, iterations: usize) -> QpSolution {
    let kkt = kkt_residuals(qp, &x, &y, &z);
    QpSolution {
        status,
        objective: qp.objective(&x),
        primal: x,
        eq_duals: y,
        ineq_duals: z,
        kkt,
        iterations,
        certificate: None,
    }
}

fn infeasible(
    qp: &QuadraticProgram,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    measure: f64,
    iterations: usize,
) -> QpSolution {
    let kkt = kkt_residuals(qp, &x, &vec![0.0; y.len()], &vec![0.0; z.len()]);
    QpSolution {
        status: QpStatus::Infeasible,
        objective: f64::INFINITY,
        primal: x,
        eq_duals: vec![0.0; y.len()],
        ineq_duals: vec![0.0; z.len()],
        kkt,
        iterations,
        certificate: Some(InfeasibilityCertificate { eq: y, ineq: z, measure }),
    }
}

fn select_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(m.row(r));
    }
    out
}

struct Problem<'a> {
    hdiag: Vec<f64>,
    lin: &'a [f64],
    e: &'a Matrix,
    f: &'a [f64],
    g: &'a Matrix,
    h: &'a [f64],
}

struct IpmOutput {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Newton systems for one interior-point iterate.
struct KktSystem {
    chol: Cholesky,
    schur: Option<Lu>,
    /// `K⁻¹ Eᵀ`, column per equality row
    kinv_et: Vec<Vec<f64>>,
}

impl KktSystem {
    fn new(p: &Problem, d: &[f64], reg: f64) -> Option<Self> {
        let n = p.hdiag.len();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = p.hdiag[i] + reg;
        }
        for (r, &dr) in d.iter().enumerate() {
            let row = p.g.row(r);
            for i in 0..n {
                let a = row[i];
                if a == 0.0 {
                    continue;
                }
                let w = dr * a;
                for j in 0..=i {
                    k[(i, j)] += w * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                k[(j, i)] = k[(i, j)];
            }
        }
        // Large barrier weights leave K nearly singular along directions
        // fixed only by the equality rows; shift by a growing fraction of
        // the diagonal until it factors.
        let diag = (0..n).fold(0.0f64, |m, i| m.max(k[(i, i)]));
        let mut shift = 0.0;
        let chol = loop {
            if let Some(c) = Cholesky::factor(&k) {
                break c;
            }
            let next = if shift == 0.0 { diag * 1e-14 } else { shift * 100.0 };
            if next > diag * 1e-4 || !next.is_finite() {
                return None;
            }
            for i in 0..n {
                k[(i, i)] += next - shift;
            }
            shift = next;
        };
        let pe = p.e.rows();
        let kinv_et: Vec<Vec<f64>> = (0..pe).map(|i| chol.solve(p.e.row(i))).collect();
        let schur = if pe > 0 {
            let mut s = Matrix::zeros(pe, pe);
            for i in 0..pe {
                for j in 0..pe {
                    s[(i, j)] = dot(p.e.row(i), &kinv_et[j]);
                }
            }
            Some(Lu::factor(&s)?)
        } else {
            None
        };
        Some(Self { chol, schur, kinv_et })
    }

    /// Solves `[K Eᵀ; E 0] [dx; dy] = [r1; r2]`.
    fn solve(&self, p: &Problem, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let kr = self.chol.solve(r1);
        match &self.schur {
            None => (kr, Vec::new()),
            Some(lu) => {
                let rhs: Vec<f64> = (0..p.e.rows()).map(|i| dot(p.e.row(i), &kr) - r2[i]).collect();
                let dy = lu.solve(&rhs);
                let mut dx = kr;
                for (i, &dyi) in dy.iter().enumerate() {
                    axpy(-dyi, &self.kinv_et[i], &mut dx);
                }
                (dx, dy)
            }
        }
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(vi, di)| -vi / di)
        .fold(1.0f64, f64::min)
}

fn interior_point(p: &Problem, settings: &SolverSettings) -> IpmOutput {
    let n = p.hdiag.len();
    let pe = p.e.rows();
    let mi = p.g.rows();
    let tol = settings.tol;

    let g_scale = norm_inf(p.g.as_slice()).max(norm_inf(p.e.as_slice())).max(1.0);
    let reg = 1e-13 * p.hdiag.iter().fold(g_scale * g_scale, |m, v| m.max(*v));
    let lin_scale = 1.0 + norm_inf(p.lin);
    let rhs_scale = 1.0 + norm_inf(p.f).max(norm_inf(p.h));

    // starting point: minimize the regularized least-squares merit
    let ones = vec![1.0; mi];
    let mut x;
    let mut y;
    {
        let Some(sys) = KktSystem::new(p, &ones, reg).or_else(|| KktSystem::new(p, &ones, reg.max(1e-8))) else {
            return IpmOutput { x: vec![0.0; n], y: vec![0.0; pe], z: vec![0.0; mi], converged: false, iterations: 0 };
        };
        let mut r1: Vec<f64> = p.lin.iter().map(|c| -c).collect();
        let gth = p.g.tr_mul_vec(p.h);
        axpy(1.0, &gth, &mut r1);
        let (dx, dy) = sys.solve(p, &r1, p.f);
        x = dx;
        y = dy;
    }
    let gx = p.g.mul_vec(&x);
    let mut s: Vec<f64> = p.h.iter().zip(&gx).map(|(h, g)| h - g).collect();
    let min_s = s.iter().copied().fold(f64::INFINITY, f64::min);
    if mi > 0 && min_s < 1.0 {
        let shift = 1.0 - min_s.min(0.0);
        s.iter_mut().for_each(|v| *v = v.max(0.0) + shift);
    }
    let z0 = lin_scale.sqrt().max(1.0);
    let mut z: Vec<f64> = s.iter().map(|_| z0).collect();

    let mut rd = vec![0.0; n];
    for iter in 0..=settings.max_iters {
        // residuals
        rd.iter_mut()
            .zip(p.hdiag.iter().zip(p.lin).zip(&x))
            .for_each(|(r, ((hd, c), xi))| *r = hd * xi + c);
        for (i, &yi) in y.iter().enumerate() {
            axpy(yi, p.e.row(i), &mut rd);
        }
        let gtz = p.g.tr_mul_vec(&z);
        axpy(1.0, &gtz, &mut rd);
        let re: Vec<f64> = p.e.mul_vec(&x).iter().zip(p.f).map(|(a, b)| a - b).collect();
        let gx = p.g.mul_vec(&x);
        let ri: Vec<f64> = gx.iter().zip(&s).zip(p.h).map(|((g, s), h)| g + s - h).collect();
        let gap = dot(&s, &z);
        let obj: f64 = p.hdiag.iter().zip(p.lin).zip(&x).map(|((hd, c), xi)| 0.5 * hd * xi * xi + c * xi).sum();

        let converged = norm_inf(&rd) <= tol * lin_scale
            && norm_inf(&re).max(norm_inf(&ri)) <= tol * rhs_scale
            && gap <= tol * (1.0 + obj.abs());
        if converged {
            return IpmOutput { x, y, z, converged: true, iterations: iter };
        }
        if iter == settings.max_iters {
            break;
        }

        let d: Vec<f64> = z.iter().zip(&s).map(|(zi, si)| zi / si).collect();
        let sys = match KktSystem::new(p, &d, reg) {
            Some(sys) => sys,
            None => match KktSystem::new(p, &d, reg * 1e6 + 1e-10) {
                Some(sys) => sys,
                None => break,
            },
        };
        let mu = if mi > 0 { gap / mi as f64 } else { 0.0 };
        let neg_re: Vec<f64> = re.iter().map(|v| -v).collect();

        let direction = |rc: &[f64]| {
            // Δz = D(GΔx + ri) − rc/s ; Δs = −ri − GΔx
            let w: Vec<f64> = (0..mi).map(|i| d[i] * ri[i] - rc[i] / s[i]).collect();
            let mut r1: Vec<f64> = rd.iter().map(|v| -v).collect();
            let gtw = p.g.tr_mul_vec(&w);
            axpy(-1.0, &gtw, &mut r1);
            let (dx, dy) = sys.solve(p, &r1, &neg_re);
            let gdx = p.g.mul_vec(&dx);
            let dz: Vec<f64> = (0..mi).map(|i| d[i] * (gdx[i] + ri[i]) - rc[i] / s[i]).collect();
            let ds: Vec<f64> = (0..mi).map(|i| -ri[i] - gdx[i]).collect();
            (dx, dy, dz, ds)
        };

        // predictor
        let rc_aff: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a * b).collect();
        let (dx_a, dy_a, dz_a, ds_a) = direction(&rc_aff);
        let (dx, dy, dz, ds) = if mi > 0 {
            let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let mu_aff = (0..mi)
                .map(|i| (s[i] + a_aff * ds_a[i]) * (z[i] + a_aff * dz_a[i]))
                .sum::<f64>()
                / mi as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            let rc: Vec<f64> = (0..mi)
                .map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu)
                .collect();
            direction(&rc)
        } else {
            (dx_a, dy_a, dz_a, ds_a)
        };

        let alpha = if mi > 0 {
            (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0)
        } else {
            1.0
        };
        axpy(alpha, &dx, &mut x);
        axpy(alpha, &dy, &mut y);
        axpy(alpha, &dz, &mut z);
        axpy(alpha, &ds, &mut s);
    }
    IpmOutput { x, y, z, converged: false, iterations: settings.max_iters }
}
