//! `kmp`: primitives, search, repair, planning and benchmarks from the shell.
//!
//! Exit codes: 0 success, 1 no solution, 2 usage or input error.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use kmp_core::bench::{self, TrialRecord};
use kmp_core::dbastar::{check_db_bounded, db_astar, DbAstarParams, PrimitiveSet, SearchProblem};
use kmp_core::dynamics::make_system;
use kmp_core::metric::MetricWeights;
use kmp_core::planner::{plan, PlannerConfig};
use kmp_core::primitives::{generate_primitives, sort_by_dispersion, GenerationConfig, PrimitiveLibrary, DEFAULT_PIECE_LENGTH};
use kmp_core::scenario::{scenario_files, Scenario};
use kmp_core::trajectory::Trajectory;
use kmp_core::trajopt::{feasibility_report, optimize_fixed_t, optimize_with_time_search, resample, OptProblem, OptSettings};

#[derive(Parser)]
#[command(name = "kmp", version, about = "Kinodynamic motion planning with discontinuity-bounded search")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a primitive library.
    GenPrimitives(GenArgs),
    /// Run one discontinuity-bounded search.
    DbAstar(SearchArgs),
    /// Repair a guess into a feasible trajectory.
    Optimize(OptimizeArgs),
    /// Run the anytime planner.
    Plan(PlanArgs),
    /// Check a trajectory file against a scenario.
    Check(CheckArgs),
    /// Run seeded trials over scenarios.
    Bench(BenchArgs),
    #[command(hide = true)]
    BenchTrial(TrialArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    system: String,
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = DEFAULT_PIECE_LENGTH)]
    piece_length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    primitives: PathBuf,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long)]
    max_cost: Option<f64>,
    #[arg(long)]
    max_expansions: Option<usize>,
    /// Accepted for uniformity; the search itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    guess: PathBuf,
    /// Fixed horizon in steps; without it the horizon is searched.
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    primitives: PathBuf,
    #[arg(long, default_value_t = 300.0)]
    timeout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Planner settings as YAML; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    /// Also check the discontinuity bound; defaults to the file's `delta`.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Scenario files or directories of them.
    #[arg(long, num_args = 1.., required = true)]
    scenarios: Vec<PathBuf>,
    /// Directory of `<system>_<variant>.kmp` libraries; missing ones are generated.
    #[arg(long)]
    primitives: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    library_size: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 300.0)]
    timeout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    primitives: PathBuf,
    #[arg(long)]
    trial: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    timeout: f64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Outcome of a command that ran to completion.
enum Done {
    Ok,
    NoSolution,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::GenPrimitives(a) => gen_primitives(a),
        Cmd::DbAstar(a) => run_db_astar(a),
        Cmd::Optimize(a) => run_optimize(a),
        Cmd::Plan(a) => run_plan(a),
        Cmd::Check(a) => run_check(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::BenchTrial(a) => run_bench_trial(a),
    };
    match result {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::NoSolution) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_library(path: &Path, scenario: &Scenario) -> anyhow::Result<PrimitiveLibrary> {
    Ok(PrimitiveLibrary::load(path, &scenario.system)?)
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PlannerConfig> {
    let Some(path) = path else {
        return Ok(PlannerConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let cfg: PlannerConfig = serde_yaml::from_str(&text).with_context(|| format!("{}: invalid planner config", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn gen_primitives(a: GenArgs) -> anyhow::Result<Done> {
    let system = make_system(&a.system, &a.variant)?;
    let config = GenerationConfig {
        piece_length: a.piece_length,
        ..GenerationConfig::default()
    };
    let started = Instant::now();
    let prims = generate_primitives(&system, a.count, a.seed, &config)?;
    let weights = MetricWeights::default();
    let metric = kmp_core::metric::StateMetric::new(weights, &system);
    let lib = PrimitiveLibrary::new(&system, weights, sort_by_dispersion(&metric, prims));
    lib.save(&a.out)?;
    eprintln!("{} primitives for {} in {:.1?}", lib.len(), system.id(), started.elapsed());
    Ok(Done::Ok)
}

fn run_db_astar(a: SearchArgs) -> anyhow::Result<Done> {
    let scenario = Scenario::load(&a.scenario)?;
    let lib = load_library(&a.primitives, &scenario)?;
    if !(a.delta >= 0.0) || !(a.alpha > 0.0 && a.alpha < 1.0) {
        bail!("need delta >= 0 and 0 < alpha < 1");
    }
    let metric = scenario.metric();
    let mut set = PrimitiveSet::new(&metric, &scenario.robot);
    set.extend(lib.primitives);
    let problem = SearchProblem {
        system: &scenario.system,
        metric: &metric,
        environment: &scenario.environment,
        shape: &scenario.robot,
        start: scenario.start,
        goal: scenario.goal,
    };
    let mut params = DbAstarParams::new(a.delta, a.alpha);
    params.max_cost = a.max_cost.unwrap_or(f64::INFINITY);
    params.max_expansions = a.max_expansions;
    let result = db_astar(&problem, &set, &params);
    eprintln!("{:?} after {} expansions", result.status, result.stats.expansions);
    let Some(sol) = result.solution else {
        return Ok(Done::NoSolution);
    };
    let mut traj = Trajectory::new(&scenario.system, sol.states, sol.controls);
    traj.cost = sol.cost;
    traj.delta = Some(a.delta);
    traj.save(&a.out)?;
    Ok(Done::Ok)
}

fn run_optimize(a: OptimizeArgs) -> anyhow::Result<Done> {
    let scenario = Scenario::load(&a.scenario)?;
    let guess = Trajectory::load(&a.guess)?;
    let system = guess.validate()?;
    if system.id() != scenario.system.id() {
        bail!("guess is for {}, scenario for {}", system.id(), scenario.system.id());
    }
    let settings = OptSettings::default();
    let env = Some((&scenario.environment, &scenario.robot));
    let result = match a.horizon {
        Some(0) => bail!("--T must be positive"),
        Some(t) => {
            let (states, controls) = resample(&system, &guess.states, &guess.actions, t);
            let r = optimize_fixed_t(&OptProblem {
                system: &system,
                environment: env,
                horizon: t,
                start: scenario.start,
                goal: scenario.goal,
                guess_states: states,
                guess_controls: controls,
                settings,
            });
            r.converged.then_some(r)
        }
        None => optimize_with_time_search(&system, env, &scenario.start, &scenario.goal, &guess.states, &guess.actions, &settings, None)
            .best()
            .cloned(),
    };
    let Some(r) = result else {
        eprintln!("optimization did not converge");
        return Ok(Done::NoSolution);
    };
    let mut traj = Trajectory::new(&system, r.states, r.controls);
    traj.residuals = Some(r.residuals);
    traj.save(&a.out)?;
    eprintln!("T = {}, cost {:.2} s", traj.horizon(), traj.cost);
    Ok(Done::Ok)
}

fn run_plan(a: PlanArgs) -> anyhow::Result<Done> {
    let scenario = Scenario::load(&a.scenario)?;
    let lib = load_library(&a.primitives, &scenario)?;
    let mut config = load_config(a.config.as_deref())?;
    config.timeout = a.timeout;
    config.seed = a.seed;
    if a.max_iterations.is_some() {
        config.max_iterations = a.max_iterations;
    }
    std::fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let mut count = 0;
    let mut write_err = None;
    let out = plan(&scenario, &lib, &config, |s| {
        let mut traj = Trajectory::new(&scenario.system, s.states.clone(), s.controls.clone());
        traj.residuals = Some(s.residuals.clone());
        let path = a.out.join(format!("solution_{count:03}.yaml"));
        count += 1;
        eprintln!("{:8.2} s  cost {:.2}", s.found_at, s.cost);
        if let Err(e) = traj.save(&path) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    std::fs::write(a.out.join("trace.json"), out.trace.to_json()?)?;
    std::fs::write(a.out.join("timings.json"), serde_json::to_string_pretty(&out.timings)?)?;
    Ok(if out.solutions.is_empty() { Done::NoSolution } else { Done::Ok })
}

fn run_check(a: CheckArgs) -> anyhow::Result<Done> {
    let scenario = Scenario::load(&a.scenario)?;
    let traj = Trajectory::load(&a.trajectory)?;
    let system = traj.validate()?;
    if system.id() != scenario.system.id() {
        bail!("trajectory is for {}, scenario for {}", system.id(), scenario.system.id());
    }
    let env = Some((&scenario.environment, &scenario.robot));
    let tol = OptSettings::default().tolerances;
    let report = feasibility_report(&system, env, &traj.states, &traj.actions, &scenario.start, &scenario.goal, &tol);
    println!("feasibility: {}", serde_json::to_string(&report)?);
    let mut ok = report.ok;
    if let Some(delta) = a.delta.or(traj.delta) {
        let metric = scenario.metric();
        let bounded = check_db_bounded(
            &system,
            &metric,
            &scenario.environment,
            &scenario.robot,
            &traj.states,
            &traj.actions,
            delta,
            &scenario.start,
            &scenario.goal,
        );
        println!("bounded(delta = {delta}): {}", serde_json::to_string(&bounded)?);
        ok = bounded.ok;
    }
    Ok(if ok { Done::Ok } else { Done::NoSolution })
}

fn library_path(dir: &Path, scenario: &Scenario) -> PathBuf {
    dir.join(format!("{}_{}.kmp", scenario.system.name, scenario.system.variant))
}

fn run_bench(a: BenchArgs) -> anyhow::Result<Done> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let mut paths = Vec::new();
    for p in &a.scenarios {
        if p.is_dir() {
            paths.extend(scenario_files(p)?);
        } else {
            paths.push(p.clone());
        }
    }
    let scenarios = paths.iter().map(Scenario::load).collect::<Result<Vec<_>, _>>()?;
    let config = load_config(a.config.as_deref())?;
    std::fs::create_dir_all(&a.primitives)?;
    std::fs::create_dir_all(&a.out)?;
    for s in &scenarios {
        let lib = library_path(&a.primitives, s);
        if !lib.exists() {
            eprintln!("generating {} primitives for {}", a.library_size, s.system.id());
            gen_primitives(GenArgs {
                system: s.system.name.clone(),
                variant: s.system.variant.clone(),
                count: a.library_size,
                piece_length: config.piece_length,
                seed: a.seed,
                out: lib,
            })?;
        }
    }

    let jobs: Vec<(usize, usize)> = (0..scenarios.len()).flat_map(|s| (0..a.trials).map(move |t| (s, t))).collect();
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, jobs.len());
    let exe = std::env::current_exe()?;
    let scratch = a.out.join("trials");
    std::fs::create_dir_all(&scratch)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<TrialRecord>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(si, trial)) = jobs.get(j) else { break };
                let rec = spawn_trial(&exe, &a, &paths[si], &scenarios[si], trial, &scratch);
                eprintln!(
                    "{} #{trial}: {}",
                    rec.scenario,
                    rec.j_final().map_or_else(|| rec.error.clone().unwrap_or_else(|| "no solution".into()), |j| format!("{j:.2} s"))
                );
                results.lock().unwrap()[j] = Some(rec);
            });
        }
    });
    let records: Vec<TrialRecord> = results.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect();
    bench::write_csv(a.out.join("results.csv"), &records)?;
    bench::write_timelines(a.out.join("timelines.json"), &records)?;
    let summary = bench::summarize(&records);
    std::fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
    println!("{:<32} {:>5} {:>8} {:>8} {:>8}", "scenario", "p", "t_first", "J_first", "J_final");
    for s in &summary {
        println!("{:<32} {:>5.2} {:>8} {:>8} {:>8}", s.scenario, s.success_rate, fmt(s.t_first), fmt(s.j_first), fmt(s.j_final));
    }
    Ok(Done::Ok)
}

/// Runs one trial in a child process. Anything but a clean record is a failure.
fn spawn_trial(exe: &Path, a: &BenchArgs, path: &Path, scenario: &Scenario, trial: usize, scratch: &Path) -> TrialRecord {
    let out = scratch.join(format!("{}_{trial}.json", scenario.name));
    let _ = std::fs::remove_file(&out);
    let mut cmd = Command::new(exe);
    cmd.arg("bench-trial")
        .arg("--scenario")
        .arg(path)
        .arg("--primitives")
        .arg(library_path(&a.primitives, scenario))
        .args(["--trial", &trial.to_string(), "--seed", &a.seed.to_string(), "--timeout", &a.timeout.to_string()])
        .arg("--out")
        .arg(&out)
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    if let Some(c) = &a.config {
        cmd.arg("--config").arg(c);
    }
    let failed = |msg: String| TrialRecord {
        scenario: scenario.name.clone(),
        system: scenario.system.id(),
        trial,
        seed: bench::trial_seed(a.seed, &scenario.name, trial),
        timeline: Vec::new(),
        deltas: Vec::new(),
        primitives: Vec::new(),
        error: Some(msg),
    };
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return failed(format!("spawn failed: {e}")),
    };
    // The planner checks its deadline between phases; allow it to finish one.
    let hard_limit = Duration::from_secs_f64(2.0 * a.timeout + 60.0);
    let started = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(s)) => break Some(s),
            Ok(None) if started.elapsed() > hard_limit => {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(20)),
            Err(_) => break None,
        }
    };
    match status {
        None => failed("killed after exceeding the time limit".into()),
        Some(s) if !s.success() => failed(format!("worker exited with {s}")),
        Some(_) => std::fs::read_to_string(&out)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_else(|| failed("worker wrote no result".into())),
    }
}

fn run_bench_trial(a: TrialArgs) -> anyhow::Result<Done> {
    let scenario = Scenario::load(&a.scenario)?;
    let lib = load_library(&a.primitives, &scenario)?;
    let mut config = load_config(a.config.as_deref())?;
    config.timeout = a.timeout;
    let rec = bench::run_trial(&scenario, &lib, &config, a.seed, a.trial);
    std::fs::write(&a.out, serde_json::to_string(&rec)?)?;
    Ok(Done::Ok)
}
