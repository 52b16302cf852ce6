//! `riskplan` command-line tool.
//!
//! Exit codes: 0 success, 1 input error, 2 solver or validation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use riskplan::distmoments::{mixture_moments, MixtureComponent, MomentTable, TruncatedGaussianSpec};
use riskplan::harness::{batch_experiment, trajectory_svg, validate_plan, write_batch, BatchFormulation, BatchSpec};
use riskplan::io::{read_json, write_json, write_text, write_trajectory_csv, ExpressSpec, LoadedProblem};
use riskplan::planner::solve;
use riskplan::polyalg::{render, Dialect};
use riskplan::riskbounds::{mixture_bound_unchecked, ConcKind};

#[derive(Parser, Debug)]
#[command(name = "riskplan", version, about = "Moment-based collision risk bounds and chance-constrained planning")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Seed for Monte Carlo validation; for `benchmark`, replaces the seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Concentration inequality, overriding the input file.
    #[arg(long, global = true, value_enum)]
    conc: Option<ConcArg>,
    /// Per-knot risk level, overriding the input file.
    #[arg(long, global = true)]
    eps: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean and second-moment expressions of a polynomial constraint.
    Express {
        spec: PathBuf,
        #[arg(long, value_enum)]
        dialect: Option<DialectArg>,
    },
    /// Raw moments of a planar mixture given as a JSON component list.
    Moments {
        components: PathBuf,
        #[arg(long, default_value_t = 4)]
        order: u32,
    },
    /// Risk bound from a mean and variance, or from mixture components.
    Bound {
        #[arg(long, allow_hyphen_values = true, required_unless_present = "mixture")]
        mean: Option<f64>,
        #[arg(long, requires = "mean")]
        variance: Option<f64>,
        /// JSON list of `{weight, mean, variance}`.
        #[arg(long, conflicts_with_all = ["mean", "variance"])]
        mixture: Option<PathBuf>,
    },
    /// Solve a planning problem file.
    Plan {
        problem: PathBuf,
        #[arg(long, value_enum)]
        formulation: Option<FormulationArg>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Check a saved plan against Monte Carlo collision estimates.
    Validate {
        result: PathBuf,
        problem: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, value_enum)]
        formulation: Option<FormulationArg>,
    },
    /// Run a batch experiment from a batch spec file.
    Benchmark { spec: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConcArg {
    Cantelli,
    Vp,
    Gauss,
}

impl From<ConcArg> for ConcKind {
    fn from(c: ConcArg) -> Self {
        match c {
            ConcArg::Cantelli => ConcKind::Cantelli,
            ConcArg::Vp => ConcKind::Vp,
            ConcArg::Gauss => ConcKind::Gauss,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormulationArg {
    Gmm,
    #[value(alias = "truncated", alias = "truncated_gmm")]
    TruncatedGmm,
    Deterministic,
}

impl From<FormulationArg> for BatchFormulation {
    fn from(f: FormulationArg) -> Self {
        match f {
            FormulationArg::Gmm => BatchFormulation::Gmm,
            FormulationArg::TruncatedGmm => BatchFormulation::TruncatedGmm,
            FormulationArg::Deterministic => BatchFormulation::Deterministic,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DialectArg {
    Plain,
    #[value(alias = "c")]
    CLike,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Solver(anyhow::Error),
}

impl<E: std::error::Error + Send + Sync + 'static> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn solver_failure(msg: impl Into<String>) -> Failure {
    Failure::Solver(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("failure: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(eps) = cli.global.eps {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Failure::Input(anyhow!("--eps must lie in (0, 1), got {eps}")));
        }
    }
    let g = &cli.global;
    match cli.command {
        Command::Express { spec, dialect } => express(g, &spec, dialect),
        Command::Moments { components, order } => moments(g, &components, order),
        Command::Bound {
            mean,
            variance,
            mixture,
        } => bound(g, mean, variance, mixture.as_deref()),
        Command::Plan {
            problem,
            formulation,
            max_iter,
        } => plan(g, &problem, formulation, max_iter),
        Command::Validate {
            result,
            problem,
            samples,
            formulation,
        } => validate(g, &result, &problem, samples, formulation),
        Command::Benchmark { spec } => benchmark(g, &spec),
    }
}

#[derive(Serialize)]
struct ExpressOutput {
    polynomial: String,
    mean: String,
    second_moment: String,
}

fn express(g: &Global, path: &Path, dialect: Option<DialectArg>) -> Outcome {
    let spec: ExpressSpec = read_json(path)?;
    let dialect = match dialect {
        Some(DialectArg::Plain) => Dialect::PlainInfix,
        Some(DialectArg::CLike) => Dialect::CLike,
        None => spec.dialect()?,
    };
    let e = spec
        .express()
        .with_context(|| format!("in {}", path.display()))
        .map_err(Failure::Input)?;
    let out = ExpressOutput {
        polynomial: riskplan::polyalg::render_polynomial(&e.polynomial, dialect),
        mean: render(&e.mean, dialect),
        second_moment: render(&e.second_moment, dialect),
    };
    println!("mean = {}", out.mean);
    println!("second_moment = {}", out.second_moment);
    if let Some(dir) = &g.out_dir {
        write_json(&dir.join("express.json"), &out)?;
    }
    Ok(())
}

fn moments(g: &Global, path: &Path, order: u32) -> Outcome {
    let comps: Vec<MixtureComponent> = read_json(path)?;
    if comps.is_empty() {
        return Err(Failure::Input(anyhow!("{}: component list is empty", path.display())));
    }
    let tables = comps
        .iter()
        .map(|c| {
            let base = c.gaussian();
            base.validate()?;
            match c.trunc_k {
                Some(k) => TruncatedGaussianSpec::at_sigmas(&base, k)?.moments(order),
                None => base.moments(order),
            }
        })
        .collect::<Result<Vec<MomentTable>, _>>()
        ?;
    let weights: Vec<f64> = comps.iter().map(|c| c.weight).collect();
    let table = mixture_moments(&weights, &tables)?;
    for (idx, v) in table.entries() {
        let e = idx.exponents();
        println!("E[w1^{}*w2^{}] = {v:.12e}", e[0], e[1]);
    }
    if let Some(dir) = &g.out_dir {
        write_json(&dir.join("moments.json"), &table)?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalarComponent {
    weight: f64,
    mean: f64,
    variance: f64,
}

#[derive(Serialize)]
struct BoundOutput {
    conc: ConcKind,
    bound: f64,
    conc_star: f64,
    valid: bool,
}

fn bound(g: &Global, mean: Option<f64>, variance: Option<f64>, mixture: Option<&Path>) -> Outcome {
    let conc = g.conc.map_or(ConcKind::Vp, ConcKind::from);
    let comps: Vec<(f64, f64, f64)> = match (mixture, mean) {
        (Some(p), _) => read_json::<Vec<ScalarComponent>>(p)?
            .into_iter()
            .map(|c| (c.weight, c.mean, c.variance))
            .collect(),
        (None, Some(m)) => vec![(1.0, m, variance.unwrap_or(0.0))],
        (None, None) => return Err(Failure::Input(anyhow!("give --mean/--variance or --mixture"))),
    };
    let b = mixture_bound_unchecked(&comps, conc)?;
    println!("bound = {:.12e}", b.value);
    println!("conc_star = {:.12e}", b.conc_star);
    println!("valid = {}", b.valid);
    if let Some(dir) = &g.out_dir {
        let out = BoundOutput {
            conc,
            bound: b.value,
            conc_star: b.conc_star,
            valid: b.valid,
        };
        write_json(&dir.join("bound.json"), &out)?;
    }
    match b.diagnostic() {
        Some(d) => Err(solver_failure(d)),
        None => Ok(()),
    }
}

fn load_problem(g: &Global, path: &Path, formulation: Option<FormulationArg>) -> Result<LoadedProblem, Failure> {
    let mut lp = LoadedProblem::load(path)?;
    if let Some(eps) = g.eps {
        lp.file.eps = eps;
    }
    if let Some(c) = g.conc {
        lp.file.conc = c.into();
    }
    if let Some(f) = formulation {
        lp.file.formulation = f.into();
    }
    lp.validate()?;
    Ok(lp)
}

fn out_dir(g: &Global) -> PathBuf {
    g.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn plan(g: &Global, path: &Path, formulation: Option<FormulationArg>, max_iter: Option<usize>) -> Outcome {
    let mut lp = load_problem(g, path, formulation)?;
    if let Some(n) = max_iter {
        lp.file.solver.max_iter = n;
    }
    let problem = lp.plan_problem()?;
    let result = solve(&problem, &lp.file.solver).map_err(|e| Failure::Solver(e.into()))?;
    let dir = out_dir(g);
    write_json(&dir.join("plan.json"), &result)?;
    write_trajectory_csv(&dir.join("trajectory.csv"), &result, lp.file.dt)?;
    let preds = lp.predictions()?;
    let label = lp.file.formulation.name();
    let svg = trajectory_svg(&lp.scenario.path, &[(label, &result.states)], &preds);
    write_text(&dir.join("plan.svg"), &svg)?;
    println!(
        "status = {:?}, cost = {:.6}, iterations = {}, total risk bound = {:.6e}, time = {:.1} ms",
        result.status, result.cost, result.iterations, result.total_risk_bound, result.solve_time_ms
    );
    println!("wrote {}", dir.display());
    if result.converged() {
        Ok(())
    } else {
        Err(solver_failure(format!("solver stopped with status {:?}; best iterate written", result.status)))
    }
}

fn validate(
    g: &Global,
    result_path: &Path,
    problem_path: &Path,
    samples: u64,
    formulation: Option<FormulationArg>,
) -> Outcome {
    if samples == 0 {
        return Err(Failure::Input(anyhow!("--samples must be positive")));
    }
    let lp = load_problem(g, problem_path, formulation)?;
    let result: riskplan::planner::PlanResult = read_json(result_path)?;
    if result.states.len() != lp.file.horizon || result.risk.len() != lp.file.horizon {
        return Err(Failure::Input(anyhow!(
            "result has {} states, problem horizon is {}",
            result.states.len(),
            lp.file.horizon
        )));
    }
    let obstacles: usize = lp.scenario.agents.iter().map(|a| a.geometry().num_circles()).sum();
    if result.risk.iter().any(|r| r.per_obstacle.len() != obstacles) {
        return Err(Failure::Input(anyhow!(
            "result does not match the problem's {obstacles} agent circles"
        )));
    }
    let preds = lp.predictions()?;
    let seed = g.seed.unwrap_or(0);
    let s = validate_plan(&lp.scenario, &result, &preds, samples, seed)?;
    println!("samples per step = {samples}, seed = {seed}");
    println!("max empirical probability = {:.6e}", s.max_probability);
    println!("max excess over bound = {:.3} standard errors", s.max_excess_se);
    if let Some(dir) = &g.out_dir {
        write_json(&dir.join("validation.json"), &s)?;
    }
    if s.sound {
        println!("all steps sound");
        Ok(())
    } else {
        println!("unsound steps found");
        Err(solver_failure("empirical collision probability exceeds the bound"))
    }
}

fn benchmark(g: &Global, path: &Path) -> Outcome {
    let mut spec: BatchSpec = read_json(path)?;
    if let Some(eps) = g.eps {
        spec.eps_grid = vec![eps];
    }
    if let Some(c) = g.conc {
        spec.conc = c.into();
    }
    if let Some(s) = g.seed {
        spec.seeds = vec![s];
    }
    let metrics = batch_experiment(&spec)?;
    let dir = out_dir(g);
    write_batch(&dir, &spec, &metrics)?;
    println!("{:>12} {:>6} {:>10} {:>10} {:>10}", "eps", "runs", "gmm", "truncated", "cost_ratio");
    for m in &metrics.per_eps {
        let ratio = m.mean_cost_ratio.map_or("-".to_string(), |r| format!("{r:.4}"));
        println!(
            "{:>12.4e} {:>6} {:>10.3} {:>10.3} {:>10}",
            m.eps, m.runs, m.success_gmm, m.success_truncated, ratio
        );
    }
    println!(
        "runs = {}, convergence = {:.3}, median solve time = {:.1} ms",
        metrics.runs.len(),
        metrics.convergence_rate,
        metrics.median_solve_time_ms
    );
    println!("wrote {}", dir.display());
    let failed = metrics.runs.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(solver_failure(format!("{failed} runs ended with an error")));
    }
    if !metrics.all_sound {
        return Err(solver_failure("Monte Carlo validation found an unsound run"));
    }
    Ok(())
}
