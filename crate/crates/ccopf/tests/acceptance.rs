//! Acceptance checks on the bundled RTS-96 experiment. Prints one
//! PASS/FAIL line per criterion and exits nonzero if a blocking one fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ccopf::config::Config;
use ccopf::experiment::{run_experiment, s_true, ExperimentReport, Pipeline};
use ccopf_core::linalg::Matrix;
use ccopf_core::qp::{self, QpStatus, SolverSettings};
use ccopf_core::reformulation::{build_catalog, build_qp, solve_dispatch, CatalogOptions, ConstraintKind};
use ccopf_core::stats::normal_cdf;
use ccopf_core::tuner::{initial_bounds, Mode};
use ccopf_core::uncertainty::{MomentEstimate, SampleSet};
use ccopf_core::violation::{reference, ViolationEvaluator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: [f64; 3] = [0.1, 0.05, 0.01];
const DISTRIBUTIONS: [&str; 2] = ["gaussian", "mixture"];

const S_TOL: f64 = 0.06;
const EPS_OOS_SINGLE_TOL: f64 = 0.01;
const EPS_OOS_JOINT_TOL: [f64; 3] = [0.005, 0.005, 0.003];
const ITERATION_RANGE: (f64, f64) = (7.0, 20.0);
const COST_TOL_REL: f64 = 0.03;
const MIN_CONSERVATIVE: usize = 18;
const EPS_S_TARGET: f64 = 0.095;
const EPS_S_TOL: f64 = 0.005;
const QP_OBJ_TOL: f64 = 1e-6;
const PTDF_TOL: f64 = 1e-9;
const EVAL_BUDGET: Duration = Duration::from_secs(1);
const TUNE_BUDGET: Duration = Duration::from_secs(3);
const EXPERIMENT_BUDGET: Duration = Duration::from_secs(300);

/// Average costs of the published Table I, single then joint, Gaussian then
/// mixture, eps 0.1, 0.05, 0.01.
const PUBLISHED_COST: [[[f64; 3]; 2]; 2] = [
    [[42201.6, 42376.1, 42709.0], [42799.6, 43105.4, 43680.4]],
    [[42485.6, 42632.9, 42918.5], [43284.4, 43507.0, 43924.0]],
];

struct Outcome {
    pass: bool,
    detail: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new(failures: Vec<String>, summary: String) -> Self {
        let pass = failures.is_empty();
        let detail = if pass { summary } else { failures.join("; ") };
        Self { pass, detail, notes: Vec::new() }
    }
}

fn avg<'a>(report: &'a ExperimentReport, mode: Mode, dist: &str, eps: f64) -> &'a ccopf::experiment::Metrics {
    report
        .average(mode, dist, eps)
        .and_then(|r| r.metrics.as_ref())
        .unwrap_or_else(|| panic!("no average for {mode} {dist} {eps}"))
}

fn gaussian_single_recovery(report: &ExperimentReport, elapsed: Duration) -> Outcome {
    let mut fail = Vec::new();
    let mut parts = Vec::new();
    for eps in EPS {
        let m = avg(report, Mode::Single, "gaussian", eps);
        let target = s_true(eps);
        if (m.s - target).abs() > S_TOL {
            fail.push(format!("eps {eps}: s {:.4} vs {target:.4}", m.s));
        }
        if (m.eps_oos_single - eps).abs() > EPS_OOS_SINGLE_TOL {
            fail.push(format!("eps {eps}: eps_oos_single {:.4}", m.eps_oos_single));
        }
        parts.push(format!("s {:.4}/{target:.4} oos {:.4}", m.s, m.eps_oos_single));
    }
    if elapsed > EXPERIMENT_BUDGET {
        fail.push(format!("experiment took {elapsed:.1?}"));
    }
    Outcome::new(fail, format!("{} ({elapsed:.1?})", parts.join(", ")))
}

fn joint_calibration(report: &ExperimentReport, gamma: f64) -> Outcome {
    let mut fail = Vec::new();
    for r in report.replication_rows().filter(|r| r.mode == Mode::Joint) {
        match &r.metrics {
            Some(m) if (m.eps_obs_joint - r.eps_des).abs() <= gamma * (1.0 + 1e-9) => {}
            Some(m) => fail.push(format!(
                "{} eps {} rep {:?}: eps_obs_joint {}",
                r.distribution, r.eps_des, r.replication, m.eps_obs_joint
            )),
            None => fail.push(format!("{} eps {} rep {:?} failed", r.distribution, r.eps_des, r.replication)),
        }
    }
    let mut parts = Vec::new();
    for dist in DISTRIBUTIONS {
        for (k, eps) in EPS.into_iter().enumerate() {
            let m = avg(report, Mode::Joint, dist, eps);
            if (m.eps_oos_joint - eps).abs() > EPS_OOS_JOINT_TOL[k] {
                fail.push(format!("{dist} eps {eps}: eps_oos_joint {:.4}", m.eps_oos_joint));
            }
            parts.push(format!("{:.4}", m.eps_oos_joint));
        }
    }
    Outcome::new(fail, format!("all replications in band; avg eps_oos_joint {}", parts.join(" ")))
}

fn iteration_counts(report: &ExperimentReport, cfg: &Config, n_constraints: usize) -> Outcome {
    let mut fail = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for r in report.average_rows() {
        let it = r.metrics.as_ref().map_or(f64::NAN, |m| m.iterations);
        lo = lo.min(it);
        hi = hi.max(it);
        if !(it >= ITERATION_RANGE.0 && it <= ITERATION_RANGE.1) {
            fail.push(format!("{} {} eps {}: {it}", r.mode, r.distribution, r.eps_des));
        }
    }
    for r in report.replication_rows() {
        let (s_min, s_max) = initial_bounds(r.eps_des, r.mode, n_constraints).unwrap();
        let cap = ((s_max - s_min) / cfg.tuning.width_tol).log2().floor();
        if let Some(m) = &r.metrics {
            if m.iterations > cap {
                fail.push(format!("{} {} eps {}: {} > cap {cap}", r.mode, r.distribution, r.eps_des, m.iterations));
            }
        }
    }
    Outcome::new(fail, format!("averages in [{lo:.2}, {hi:.2}], every run within its cap"))
}

fn cost_trends(report: &ExperimentReport) -> Outcome {
    let mut fail = Vec::new();
    let mut notes = Vec::new();
    let mut worst: f64 = 0.0;
    for (mi, mode) in [Mode::Single, Mode::Joint].into_iter().enumerate() {
        for (di, dist) in DISTRIBUTIONS.into_iter().enumerate() {
            let costs: Vec<f64> = EPS.iter().map(|&e| avg(report, mode, dist, e).cost).collect();
            if costs.windows(2).any(|w| w[1] < w[0]) {
                fail.push(format!("{mode} {dist}: costs {costs:?} decrease with confidence"));
            }
            for (k, &c) in costs.iter().enumerate() {
                let rel = c / PUBLISHED_COST[mi][di][k] - 1.0;
                worst = worst.max(rel.abs());
            }
        }
    }
    for dist in DISTRIBUTIONS {
        for eps in EPS {
            let (s, j) = (avg(report, Mode::Single, dist, eps).cost, avg(report, Mode::Joint, dist, eps).cost);
            if j < s {
                fail.push(format!("{dist} eps {eps}: joint {j:.1} < single {s:.1}"));
            }
        }
    }
    let c = avg(report, Mode::Single, "gaussian", 0.1).cost;
    notes.push(format!(
        "{} absolute cost vs published Table I: worst deviation {:.1}% (tolerance {:.0}%, non-blocking); \
         gaussian single eps 0.1 average {c:.1} vs 42201.6",
        if worst <= COST_TOL_REL { "PASS" } else { "FAIL" },
        100.0 * worst,
        100.0 * COST_TOL_REL
    ));
    let mut out = Outcome::new(fail, "nondecreasing in confidence; joint >= single everywhere".into());
    out.notes = notes;
    out
}

fn conservatism(report: &ExperimentReport) -> Outcome {
    let mut fail = Vec::new();
    let mut counts = Vec::new();
    for eps in EPS {
        let target = s_true(eps);
        let rows: Vec<_> = report
            .replication_rows()
            .filter(|r| r.mode == Mode::Single && r.distribution == "gaussian" && r.eps_des == eps)
            .collect();
        let above = rows.iter().filter(|r| r.metrics.as_ref().is_some_and(|m| m.s >= target)).count();
        if above < MIN_CONSERVATIVE {
            fail.push(format!("eps {eps}: s >= s_true in {above}/{}", rows.len()));
        }
        counts.push(format!("{above}/{}", rows.len()));
    }
    let eps_s = 1.0 - normal_cdf(avg(report, Mode::Single, "gaussian", 0.1).s);
    if (eps_s - EPS_S_TARGET).abs() > EPS_S_TOL {
        fail.push(format!("eps_s {eps_s:.4}"));
    }
    Outcome::new(fail, format!("s >= s_true in {}; eps_s = 1 - Phi(s) = {eps_s:.4}", counts.join(", ")))
}

fn oracle_equivalence(pipe: &Pipeline, cfg: &Config) -> Outcome {
    let mut fail = Vec::new();
    let settings = SolverSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    let mut qp_mismatch = 0;
    for _ in 0..1000 {
        let prog = common::random_qp(&mut rng);
        let sol = qp::solve(&prog, &settings);
        let ok = match common::brute_force_qp(&prog) {
            Some((_, obj)) => {
                sol.status == QpStatus::Optimal && (sol.objective - obj).abs() <= QP_OBJ_TOL * (1.0 + obj.abs())
            }
            None => sol.status == QpStatus::Infeasible,
        };
        qp_mismatch += usize::from(!ok);
    }
    if qp_mismatch > 0 {
        fail.push(format!("{qp_mismatch}/1000 QPs disagree with enumeration"));
    }

    let slack = pipe.ptdf.slack();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = common::balanced_injection(&mut rng, pipe.case.n_buses());
        let want = common::angle_flows(&pipe.case, slack, &p);
        for (got, want) in pipe.ptdf.flows(&p).iter().zip(&want) {
            worst = worst.max((got - want).abs() / (1.0 + want.abs()));
        }
    }
    if worst > PTDF_TOL {
        fail.push(format!("PTDF deviation {worst:e}"));
    }

    let mut exact = 0;
    for dist in &cfg.distributions {
        let rep = pipe.replication(cfg, dist, 0).unwrap();
        let tqp = build_qp(&pipe.case, &pipe.ptdf, &rep.catalog, 1.5).unwrap();
        let sol = solve_dispatch(&tqp, rep.catalog.alpha(), &settings);
        let fast = ViolationEvaluator::new(&pipe.case, &pipe.ptdf, &rep.catalog, &pipe.support)
            .evaluate(&sol.p_g, &rep.tuning)
            .unwrap();
        let slow = reference::evaluate(&sol.p_g, rep.catalog.alpha().as_slice(), &pipe.ptdf, &pipe.case, &rep.tuning, &rep.catalog);
        if fast == slow && fast.n_samples() == 10_000 {
            exact += 1;
        } else {
            fail.push(format!("{}: evaluator differs from the per-sample loop", dist.name));
        }
    }
    Outcome::new(
        fail,
        format!("1000/1000 QPs, PTDF max deviation {worst:.1e}, evaluator bit-exact on {exact} sets of 10^4"),
    )
}

fn properties(pipe: &Pipeline, cfg: &Config, report: &ExperimentReport) -> Outcome {
    let mut fail = Vec::new();
    let settings = SolverSettings::default();
    let rep = pipe.replication(cfg, &cfg.distributions[1], 0).unwrap();
    let alpha = rep.catalog.alpha();
    let eval = ViolationEvaluator::new(&pipe.case, &pipe.ptdf, &rep.catalog, &pipe.support);

    // Boole ordering on every report row and on fresh evaluations
    for r in &report.rows {
        if let Some(m) = &r.metrics {
            if m.eps_obs_joint < m.eps_obs_single || m.eps_oos_joint < m.eps_oos_single {
                fail.push(format!("Boole ordering broken in {} {} {}", r.mode, r.distribution, r.eps_des));
            }
        }
    }

    // nesting and cost monotonicity on a grid of 10 s values
    let grid: Vec<f64> = (0..10).map(|i| 0.35 * i as f64).collect();
    let programs: Vec<_> = grid.iter().map(|&s| build_qp(&pipe.case, &pipe.ptdf, &rep.catalog, s).unwrap()).collect();
    let sols: Vec<_> = programs.iter().map(|q| solve_dispatch(q, alpha, &settings)).collect();
    let mut last_cost = f64::NEG_INFINITY;
    let mut seen_infeasible = false;
    for (j, sol) in sols.iter().enumerate() {
        if sol.status != QpStatus::Optimal {
            seen_infeasible = true;
            continue;
        }
        if seen_infeasible {
            fail.push(format!("feasible again at s = {}", grid[j]));
        }
        let x: Vec<f64> = programs[j].variables.iter().map(|&b| sol.p_g[b]).collect();
        if programs[..j].iter().any(|p| p.program.max_violation(&x) > 1e-7) {
            fail.push(format!("solution at s = {} leaves a looser feasible set", grid[j]));
        }
        if sol.cost < last_cost - 1e-7 * last_cost.abs() {
            fail.push(format!("cost decreases at s = {}", grid[j]));
        }
        last_cost = sol.cost;
        let r = eval.evaluate(&sol.p_g, &rep.tuning).unwrap();
        let sum: f64 = r.per_constraint().iter().sum();
        if r.eps_joint() < r.eps_single() || r.eps_joint() > sum + 1e-12 {
            fail.push(format!("Boole bounds broken at s = {}", grid[j]));
        }
    }

    // s = 0 is the deterministic DC-OPF
    let m = pipe.case.n_buses();
    let zero = MomentEstimate::from_parts(vec![0.0; m], Matrix::zeros(m, m), &pipe.support);
    let plain = build_catalog(&pipe.case, &pipe.ptdf, alpha, &zero, CatalogOptions::default()).unwrap();
    let a = build_qp(&pipe.case, &pipe.ptdf, &rep.catalog, 0.0).unwrap();
    let b = build_qp(&pipe.case, &pipe.ptdf, &plain, 0.0).unwrap();
    if a.program != b.program || solve_dispatch(&a, alpha, &settings) != solve_dispatch(&b, alpha, &settings) {
        fail.push("s = 0 differs from the deterministic program".into());
    }

    // generator rows fire exactly when p_i - alpha_i * Omega leaves its limits
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (p_max, p_min) = (pipe.case.p_max_pu(), pipe.case.p_min_pu());
    for _ in 0..20 {
        let p_g: Vec<f64> = p_max.iter().zip(&p_min).map(|(hi, lo)| lo + (hi - lo) * rng.random_range(0.0..1.0)).collect();
        for i in 0..200 {
            let xi = rep.tuning.sample(i);
            let one = SampleSet::from_rows(m, &pipe.support, xi.to_vec(), 0);
            let report = eval.evaluate(&p_g, &one).unwrap();
            let omega: f64 = xi.iter().sum();
            for (k, c) in rep.catalog.entries().iter().enumerate() {
                if !c.kind.is_generator() {
                    continue;
                }
                let actual = p_g[c.subject] - alpha.as_slice()[c.subject] * omega;
                let expected = match c.kind {
                    ConstraintKind::GenUpper => actual > c.nominal_limit,
                    _ => actual < c.nominal_limit,
                };
                if (report.counts()[k] == 1) != expected {
                    fail.push(format!("generator row {k} indicator mismatch"));
                }
            }
        }
    }

    // seed determinism of the whole pipeline
    let mut small = cfg.clone();
    small.experiment.replications = 2;
    small.experiment.n_oos = 20_000;
    let first = run_experiment(&small).unwrap();
    let second = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_experiment(&small).unwrap());
    if first != second {
        fail.push("two runs with the same seed differ".into());
    }
    fail.dedup();
    Outcome::new(fail, "Boole, nesting, cost monotonicity, s = 0, generator indicators, determinism".into())
}

fn performance(pipe: &Pipeline, cfg: &Config) -> Outcome {
    let mut fail = Vec::new();
    let rep = pipe.replication(cfg, &cfg.distributions[0], 0).unwrap();
    let started = Instant::now();
    let result = pipe.tune(cfg, &rep, Mode::Single, 0.05).unwrap();
    let tune_time = started.elapsed();
    let eval = ViolationEvaluator::new(&pipe.case, &pipe.ptdf, &rep.catalog, &pipe.support);
    let started = Instant::now();
    let r = eval.evaluate(&result.payload.dispatch.p_g, &rep.oos).unwrap();
    let eval_time = started.elapsed();
    if r.n_samples() != 100_000 {
        fail.push(format!("evaluated {} samples", r.n_samples()));
    }
    if eval_time > EVAL_BUDGET {
        fail.push(format!("evaluation took {eval_time:.2?}"));
    }
    if tune_time > TUNE_BUDGET {
        fail.push(format!("tuning took {tune_time:.2?}"));
    }
    Outcome::new(
        fail,
        format!(
            "evaluation of 100000 x {} in {eval_time:.2?} (single thread), tuning ({} iterations) in {tune_time:.2?}",
            rep.catalog.len(),
            result.iterations
        ),
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let cfg = Config::table1();
    let pipe = Pipeline::new(&cfg).expect("bundled case loads");
    let n_constraints = pipe.replication(&cfg, &cfg.distributions[0], 0).unwrap().catalog.len();

    let started = Instant::now();
    let report = run_experiment(&cfg).expect("experiment runs");
    let elapsed = started.elapsed();

    let results = [
        ("1 Gaussian single-constraint recovery", gaussian_single_recovery(&report, elapsed)),
        ("2 joint calibration", joint_calibration(&report, cfg.tuning.gamma)),
        ("3 iteration counts", iteration_counts(&report, &cfg, n_constraints)),
        ("4 cost trends", cost_trends(&report)),
        ("5 conservatism", conservatism(&report)),
        ("6 oracle equivalence", oracle_equivalence(&pipe, &cfg)),
        ("7 property suite", properties(&pipe, &cfg, &report)),
        ("8 performance", performance(&pipe, &cfg)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        for n in &o.notes {
            println!("     {n}");
        }
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
