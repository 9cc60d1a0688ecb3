use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ccopf::case_file;
use ccopf::config::Config;
use ccopf::experiment::{self, evaluate_parallel, run_experiment, s_true, Pipeline};
use ccopf::export::{self, ViolationExport};
use ccopf_core::error::TuneError;
use ccopf_core::qp::QpStatus;
use ccopf_core::reformulation::{build_qp, solve_dispatch};
use ccopf_core::tuner::Mode;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ccopf", version, about = "Chance-constrained DC-OPF with a tuned safety parameter")]
struct Cli {
    /// Experiment configuration; defaults to the bundled Table I setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; results go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a case file and print a summary.
    Parse {
        /// Case file; the configured case (with its modifications) if omitted.
        case: Option<PathBuf>,
    },
    /// Write the PTDF matrix (rows = lines, columns = buses).
    Ptdf,
    /// Draw a sample set in MW.
    Sample {
        #[command(flatten)]
        draw: DrawArgs,
        /// Draw the out-of-sample set instead of the tuning set.
        #[arg(long)]
        oos: bool,
    },
    /// Solve the tightened program at a fixed safety parameter.
    Solve {
        #[arg(long)]
        s: f64,
        #[command(flatten)]
        draw: DrawArgs,
        /// Also write the program as text.
        #[arg(long)]
        qp: bool,
    },
    /// Bisect the safety parameter on the tuning samples.
    Tune {
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Evaluate violations out of sample, at a given `s` or after tuning.
    Evaluate {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        s: Option<f64>,
        /// Evaluate on samples read from this CSV instead of drawing them.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Run the replicated experiment from the configuration.
    Experiment {
        /// Desired violation probabilities (comma separated).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        replications: Option<usize>,
        /// Only run the named distribution.
        #[arg(long)]
        distribution: Option<String>,
    },
}

#[derive(Args)]
struct DrawArgs {
    /// Distribution name from the configuration (default: the first).
    #[arg(long)]
    distribution: Option<String>,
    #[arg(long, default_value_t = 0)]
    replication: usize,
    /// Sample count (default: the configured tuning or out-of-sample size).
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct TargetArgs {
    #[command(flatten)]
    draw: DrawArgs,
    #[arg(long, default_value = "single")]
    mode: Mode,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
}

/// Infeasible programs and failed searches; exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Infeasible(String);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let search_failed = e.chain().any(|c| {
                c.is::<Infeasible>()
                    || matches!(
                        c.downcast_ref::<TuneError>(),
                        Some(
                            TuneError::DeterministicInfeasible { .. }
                                | TuneError::NoConservativeAnchor { .. }
                                | TuneError::SolverFailure { .. }
                        )
                    )
            });
            ExitCode::from(if search_failed { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::table1(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    Ok(cfg)
}

/// Writes to `<out>/<name>` or, without `--out`, to stdout.
fn output(cli: &Cli, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            write(&mut w).and_then(|()| Ok(w.flush()?)).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
        }
    }
}

fn json(w: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Parse { case } => parse(cli, case.as_deref()),
        Command::Ptdf => {
            let cfg = load_config(cli)?;
            let pipe = Pipeline::new(&cfg)?;
            output(cli, "ptdf.csv", |w| export::write_ptdf_csv(&pipe.case, &pipe.ptdf, w))
        }
        Command::Sample { draw, oos } => sample(cli, draw, *oos),
        Command::Solve { s, draw, qp } => solve(cli, *s, draw, *qp),
        Command::Tune { target } => tune(cli, target),
        Command::Evaluate { target, s, samples } => evaluate(cli, target, *s, samples.as_deref()),
        Command::Experiment { eps, mode, replications, distribution } => {
            let mut cfg = load_config(cli)?;
            if let Some(eps) = eps {
                cfg.experiment.eps.clone_from(eps);
            }
            if let Some(mode) = mode {
                cfg.experiment.modes = vec![mode.name().to_string()];
            }
            if let Some(r) = replications {
                cfg.experiment.replications = *r;
            }
            if let Some(name) = distribution {
                let keep = cfg.distribution(name)?.clone();
                cfg.distributions = vec![keep];
            }
            let report = run_experiment(&cfg)?;
            match cli.format {
                Format::Csv => output(cli, "report.csv", |w| report.write_csv(w))?,
                Format::Json => output(cli, "report.json", |w| json(w, &report))?,
            }
            let failed = report.failures();
            if failed > 0 {
                return Err(Infeasible(format!("{failed} replication runs failed")).into());
            }
            Ok(())
        }
    }
}

fn parse(cli: &Cli, path: Option<&Path>) -> Result<()> {
    let case = match path {
        Some(p) => case_file::read_case(p)?,
        None => load_config(cli)?.load_case()?,
    };
    let load: f64 = case.buses().iter().map(|b| b.load_mw).sum();
    let capacity: f64 = case.generators().iter().map(|g| g.p_max_mw).sum();
    let units: usize = case.generators().iter().map(|g| g.units).sum();
    let uncertain: Vec<u32> = case.uncertain_buses().iter().map(|&b| case.buses()[b].source_id).collect();
    eprintln!(
        "{} buses, {} lines, {units} generating units, load {load} MW, capacity {capacity} MW, uncertain buses {uncertain:?}",
        case.n_buses(),
        case.n_lines(),
    );
    if cli.out.is_some() {
        output(cli, "case.case", |w| Ok(w.write_all(case_file::write_case(&case).as_bytes())?))?;
    }
    Ok(())
}

fn sample(cli: &Cli, args: &DrawArgs, oos: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    let pipe = Pipeline::new(&cfg)?;
    let dist = pick(&cfg, args)?;
    let e = &cfg.experiment;
    let (n, seed) = if oos {
        (args.n.unwrap_or(e.n_oos), experiment::oos_seed(e.seed, args.replication))
    } else {
        (args.n.unwrap_or(e.n_tuning), experiment::tuning_seed(e.seed, args.replication))
    };
    let samples = experiment::draw(&pipe.sampler(dist)?, n, seed);
    output(cli, "samples.csv", |w| export::write_samples_csv(&pipe.case, &samples, w))
}

fn pick<'a>(cfg: &'a Config, args: &DrawArgs) -> Result<&'a ccopf::config::NamedDistribution> {
    match &args.distribution {
        Some(name) => cfg.distribution(name),
        None => Ok(&cfg.distributions[0]),
    }
}

#[derive(Serialize)]
struct DispatchRow {
    bus: u32,
    p_mw: f64,
    alpha: f64,
}

#[derive(Serialize)]
struct SolveOutput {
    s: f64,
    cost: f64,
    solver_iterations: usize,
    dispatch: Vec<DispatchRow>,
}

fn solve(cli: &Cli, s: f64, args: &DrawArgs, write_qp: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    let pipe = Pipeline::new(&cfg)?;
    let rep = pipe.replication(&cfg, pick(&cfg, args)?, args.replication)?;
    let tqp = build_qp(&pipe.case, &pipe.ptdf, &rep.catalog, s)?;
    if write_qp {
        output(cli, "program.txt", |w| Ok(w.write_all(export::format_qp(&pipe.case, &tqp).as_bytes())?))?;
    }
    let sol = solve_dispatch(&tqp, rep.catalog.alpha(), &pipe.settings);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(Infeasible(format!("the tightened program is infeasible at s = {s}")).into()),
        QpStatus::MaxIterations => {
            return Err(Infeasible(format!("the solver did not converge within {} iterations", pipe.settings.max_iters)).into())
        }
    }
    let base = pipe.case.base_mva();
    let dispatch: Vec<DispatchRow> = pipe
        .case
        .buses()
        .iter()
        .enumerate()
        .filter(|&(i, _)| pipe.case.generators()[i].units > 0)
        .map(|(i, b)| DispatchRow { bus: b.source_id, p_mw: sol.p_g[i] * base, alpha: sol.alpha[i] })
        .collect();
    let out = SolveOutput { s, cost: sol.cost, solver_iterations: sol.solver_iterations, dispatch };
    eprintln!("s = {s}, cost = {}", out.cost);
    match cli.format {
        Format::Json => output(cli, "dispatch.json", |w| json(w, &out)),
        Format::Csv => output(cli, "dispatch.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            for row in &out.dispatch {
                c.serialize(row)?;
            }
            c.flush()?;
            Ok(())
        }),
    }
}

#[derive(Serialize)]
struct TuneOutput {
    mode: String,
    distribution: String,
    eps_des: f64,
    s: f64,
    s_true: Option<f64>,
    cost: f64,
    iterations: usize,
    eps_obs_single: f64,
    eps_obs_joint: f64,
    terminated_by: &'static str,
    non_monotone_events: usize,
    bracket: (f64, f64),
}

fn tune(cli: &Cli, target: &TargetArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let pipe = Pipeline::new(&cfg)?;
    let dist = pick(&cfg, &target.draw)?;
    let rep = pipe.replication(&cfg, dist, target.draw.replication)?;
    let result = pipe.tune(&cfg, &rep, target.mode, target.eps)?;
    let gaussian = pipe.sampler(dist)?.spec().is_gaussian();
    let out = TuneOutput {
        mode: target.mode.name().to_string(),
        distribution: dist.name.clone(),
        eps_des: target.eps,
        s: result.s_final,
        s_true: (gaussian && target.mode == Mode::Single).then(|| s_true(target.eps)),
        cost: result.cost,
        iterations: result.iterations,
        eps_obs_single: result.eps_single,
        eps_obs_joint: result.eps_joint,
        terminated_by: result.terminated_by.name(),
        non_monotone_events: result.non_monotone_events,
        bracket: result.bracket,
    };
    eprintln!(
        "s = {:.6} after {} iterations ({}), eps_obs = {}",
        out.s, out.iterations, out.terminated_by, result.eps_obs
    );
    match cli.format {
        Format::Csv => output(cli, "trace.csv", |w| export::write_trace_csv(&result.trace, w)),
        Format::Json => output(cli, "tune.json", |w| json(w, &out)),
    }?;
    if cli.out.is_some() && cli.format == Format::Csv {
        output(cli, "tune.json", |w| json(w, &out))?;
    }
    Ok(())
}

fn evaluate(cli: &Cli, target: &TargetArgs, s: Option<f64>, samples: Option<&Path>) -> Result<()> {
    let cfg = load_config(cli)?;
    let pipe = Pipeline::new(&cfg)?;
    let rep = pipe.replication(&cfg, pick(&cfg, &target.draw)?, target.draw.replication)?;
    let p_g = match s {
        Some(s) => {
            let tqp = build_qp(&pipe.case, &pipe.ptdf, &rep.catalog, s)?;
            let sol = solve_dispatch(&tqp, rep.catalog.alpha(), &pipe.settings);
            if sol.status != QpStatus::Optimal {
                return Err(Infeasible(format!("no dispatch at s = {s}")).into());
            }
            sol.p_g
        }
        None => pipe.tune(&cfg, &rep, target.mode, target.eps)?.payload.dispatch.p_g,
    };
    let oos = match samples {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let set = export::read_samples_csv(&pipe.case, &pipe.support, file)
                .with_context(|| format!("reading {}", path.display()))?;
            if set.is_empty() {
                bail!("{} holds no samples", path.display());
            }
            set
        }
        None => rep.oos,
    };
    let report = evaluate_parallel(&pipe.evaluator(&rep.catalog), &p_g, &oos)?;
    eprintln!("eps_single = {}, eps_joint = {}, N = {}", report.eps_single(), report.eps_joint(), report.n_samples());
    let export = ViolationExport::new(&pipe.case, &rep.catalog, &report, oos.seed())?;
    output(cli, "violations.json", |w| json(w, &export))
}
