//! `safe-cddp` command-line driver.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde_json::json;

use safe_cddp::constraints::TightenedConstraintSet;
use safe_cddp::ddp::{backward_pass, forward_pass, PassOptions};
use safe_cddp::mpc::{plan, run_episode, EpisodeOptions};
use safe_cddp::scenario::{load_scenario, Problem};
use safe_cddp::sim::{
    min_clearance, run_monte_carlo, write_atomic, write_episode, write_margins, write_metrics,
    write_plan, DEFAULT_BETAS,
};
use safe_cddp::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// One noiseless optimization; writes the plan and its margins.
    Solve,
    /// One seeded closed-loop run.
    Episode,
    /// Repeated episodes for each β; writes the metrics table.
    Montecarlo,
    /// Wall-clock statistics of single backward+forward iterations.
    Bench,
}

#[derive(Debug, Parser)]
#[command(name = "safe-cddp", version, about = "Chance-constrained DDP with receding-horizon control")]
struct Args {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Scenario file or built-in name (point2d, car2d, quadrotor3d, diffdrive).
    #[arg(long)]
    scenario: String,
    /// Satisfaction probability; defaults to the scenario's β (solve,
    /// episode, bench) or to 0.5, 0.9, 0.95, 0.99 (montecarlo).
    #[arg(long)]
    beta: Option<f64>,
    /// Episodes per β (montecarlo) or repetitions (bench).
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Base seed; defaults to the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for montecarlo.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Stream JSON-lines diagnostics to stderr.
    #[arg(long)]
    verbose: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 4,
        e if e.is_config() => 2,
        _ => 3,
    }
}

fn diag(verbose: bool, value: serde_json::Value) {
    if verbose {
        eprintln!("{value}");
    }
}

fn report(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
}

fn run(args: &Args) -> safe_cddp::Result<()> {
    if args.threads == 0 {
        return Err(Error::config("threads", "must be at least 1"));
    }
    let scenario = load_scenario(&args.scenario)?;
    let problem = scenario.problem()?;
    let beta = args.beta.unwrap_or(scenario.beta);
    let seed = args.seed.unwrap_or(scenario.seed);
    match args.mode {
        Mode::Solve => solve_mode(args, &problem, beta),
        Mode::Episode => episode_mode(args, &problem, beta, seed),
        Mode::Montecarlo => montecarlo_mode(args, &problem, seed),
        Mode::Bench => bench_mode(args, &problem, beta),
    }
}

fn solve_mode(args: &Args, problem: &Problem, beta: f64) -> safe_cddp::Result<()> {
    let out = plan(problem, beta)?;
    for r in &out.report.iterations {
        diag(args.verbose, json!({ "event": "iteration", "record": r }));
    }
    write_plan(&args.out.join("plan.csv"), &out.traj, &out.tightened)?;
    write_margins(&args.out.join("margins.csv"), &out.tightened)?;
    report(json!({
        "mode": "solve",
        "beta": beta,
        "cost": out.traj.cost,
        "max_tightened_violation": out.report.max_violation,
        "feasible": out.report.feasible,
        "min_clearance": min_clearance(&problem.set, &out.traj.xs),
        "iterations": out.report.iterations.len(),
    }));
    if !out.report.feasible {
        return Err(Error::Solver(format!(
            "plan ends with tightened violation {:.3e}",
            out.report.max_violation
        )));
    }
    Ok(())
}

fn episode_mode(args: &Args, problem: &Problem, beta: f64, seed: u64) -> safe_cddp::Result<()> {
    let ep = run_episode(problem, &EpisodeOptions { beta, seed, noise: true })?;
    for r in &ep.records {
        diag(args.verbose, json!({ "event": "step", "record": r }));
    }
    write_episode(&args.out.join("episode.csv"), &ep)?;
    report(json!({
        "mode": "episode",
        "beta": beta,
        "seed": seed,
        "steps": ep.controls.len(),
        "violations": ep.violations,
        "reached_goal": ep.reached_goal,
        "aborted": ep.aborted,
        "min_clearance": min_clearance(&problem.set, &ep.states),
    }));
    Ok(())
}

fn montecarlo_mode(args: &Args, problem: &Problem, seed: u64) -> safe_cddp::Result<()> {
    let betas = args.beta.map_or(DEFAULT_BETAS.to_vec(), |b| vec![b]);
    let mc = run_monte_carlo(problem, &betas, args.episodes, seed, args.threads)?;
    for (row, episodes) in mc.rows.iter().zip(&mc.episodes) {
        for (i, ep) in episodes.iter().enumerate() {
            diag(
                args.verbose,
                json!({
                    "event": "episode", "beta": ep.beta, "seed": ep.seed,
                    "violations": ep.violations, "reached_goal": ep.reached_goal,
                    "aborted": ep.aborted,
                }),
            );
            let name = format!("beta_{}_episode_{i:04}.csv", row.beta);
            write_episode(&args.out.join("episodes").join(name), ep)?;
        }
    }
    write_metrics(&args.out.join("metrics.csv"), &mc.rows)?;
    report(json!({ "mode": "montecarlo", "seed": seed, "rows": mc.rows }));
    Ok(())
}

fn bench_mode(args: &Args, problem: &Problem, beta: f64) -> safe_cddp::Result<()> {
    let mut set = problem.set.clone();
    set.set_beta(beta)?;
    let init = problem.initialize()?;
    let tight = TightenedConstraintSet::untightened(set, init.horizon() + 1);
    let opts = PassOptions::default();
    let radius = (&problem.set.u_max - &problem.set.u_min).max() / 4.0;
    let reps = args.episodes.max(1);
    let mut ms = Vec::with_capacity(reps);
    for rep in 0..reps {
        let t0 = Instant::now();
        let bp = backward_pass(&problem.model, &problem.cost, &tight, &init, None, &opts)?;
        let fp = forward_pass(&problem.model, &problem.cost, &tight, &init, &bp, radius, &opts)?;
        let elapsed = t0.elapsed().as_secs_f64() * 1e3;
        diag(args.verbose, json!({ "event": "bench", "rep": rep, "ms": elapsed, "cost": fp.traj.cost }));
        ms.push(elapsed);
    }
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let max = ms.iter().copied().fold(0.0, f64::max);
    let min = ms.iter().copied().fold(f64::INFINITY, f64::min);
    let mut text = String::from("rep,ms\n");
    for (i, v) in ms.iter().enumerate() {
        text.push_str(&format!("{i},{v}\n"));
    }
    write_atomic(&args.out.join("bench.csv"), text.as_bytes())?;
    report(json!({
        "mode": "bench",
        "horizon": init.horizon(),
        "repetitions": reps,
        "mean_ms": mean,
        "min_ms": min,
        "max_ms": max,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
