//! `lgvci` command-line tool: run scenarios, execute verification suites,
//! report inertia tensors, render energy plots and measure convergence order.

use std::collections::HashSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand};

use lgvci::body::RigidBody;
use lgvci::driver::{run, Termination};
use lgvci::scenario::{
    build_body, load_scenario, read_trajectory, render_energy_series, render_energy_svg, scenario_to_json,
    write_events, write_trajectory, EnergySeries, RunSummary, Scenario,
};
use lgvci::verify::{convergence_study, eps_tol_override, run_suite, solver_from_env, DEFAULT_SEED, SUITES};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_ZENO: u8 = 3;
const EXIT_SOLVER_FAILURE: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "lgvci",
    version,
    about = "Rigid body bouncing on a plane, integrated with a Lie group variational collision integrator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one or more scenarios; each writes into <out>/<scenario name>/.
    Run {
        /// Scenario JSON file; repeat to run a batch concurrently.
        #[arg(long = "scenario", required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute verification suites and report measured values.
    Verify {
        #[arg(long, default_value = "all", value_parser = suite_names())]
        suite: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Print the inertia tensor of a scenario's body.
    Inertia {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Render the energy plot of a trajectory CSV.
    Plot {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scenario the trajectory came from; defaults to scenario.json next to the trajectory.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Measure the observed order of the collision-free flow.
    Convergence {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated step sizes (at least 3).
        #[arg(long = "h", value_delimiter = ',', required = true)]
        hs: Vec<f64>,
        /// Integration horizon in seconds.
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// RK4 substeps of the reference solution per second.
        #[arg(long, default_value_t = 40_000)]
        reference_rate: usize,
    },
}

fn suite_names() -> clap::builder::PossibleValuesParser {
    let mut names = vec!["all"];
    names.extend(SUITES);
    clap::builder::PossibleValuesParser::new(names)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { scenarios, out } => cmd_run(&scenarios, &out),
        Command::Verify { suite, seed } => cmd_verify(&suite, seed),
        Command::Inertia { scenario } => cmd_inertia(&scenario),
        Command::Plot { traj, out, scenario } => cmd_plot(&traj, &out, scenario.as_deref()),
        Command::Convergence { scenario, hs, horizon, reference_rate } => {
            if hs.len() < 3 {
                Cli::command()
                    .error(
                        clap::error::ErrorKind::ValueValidation,
                        format!("--h needs at least 3 step sizes, got {}", hs.len()),
                    )
                    .exit();
            }
            cmd_convergence(&scenario, &hs, horizon, reference_rate)
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut sc = load_scenario(&text).with_context(|| format!("loading scenario {}", path.display()))?;
    if let Some(tol) = eps_tol_override()? {
        sc.solver.eps_tol = tol;
    }
    Ok(sc)
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> lgvci::Result<()>) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut sink = BufWriter::new(file);
    write(&mut sink).with_context(|| format!("writing {}", path.display()))?;
    std::io::Write::flush(&mut sink)?;
    Ok(())
}

/// Simulates one scenario and writes its outputs into `dir`.
fn simulate(sc: &Scenario, dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let traj = run(&sc.initial, &sc.world, &sc.sim, &sc.solver)?;
    let outputs = &sc.spec.outputs;
    write_file(&dir.join(&outputs.trajectory), |s| write_trajectory(&traj, &sc.world, s))?;
    write_file(&dir.join(&outputs.events), |s| write_events(&traj, &sc.world, s))?;
    fs::write(dir.join(&outputs.plot), render_energy_svg(&traj, &sc.world))?;
    fs::write(dir.join("scenario.json"), scenario_to_json(&sc.spec)?)?;
    let summary = RunSummary::new(sc, &traj);
    fs::write(dir.join(&outputs.summary), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

fn exit_code_for(t: Termination) -> u8 {
    match t {
        Termination::Completed => EXIT_OK,
        Termination::ZenoGuard => EXIT_ZENO,
        Termination::SolverFailure => EXIT_SOLVER_FAILURE,
    }
}

fn cmd_run(paths: &[PathBuf], out: &Path) -> Result<u8> {
    let mut scenarios = Vec::with_capacity(paths.len());
    let mut names = HashSet::new();
    for p in paths {
        let sc = read_scenario(p)?;
        if !names.insert(sc.spec.name.clone()) {
            bail!("two scenarios are named {:?}; names select the output directories", sc.spec.name);
        }
        scenarios.push(sc);
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut results: Vec<Result<RunSummary>> = Vec::with_capacity(scenarios.len());
    for batch in scenarios.chunks(workers) {
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                batch.iter().map(|sc| scope.spawn(move || simulate(sc, &out.join(&sc.spec.name)))).collect();
            for h in handles {
                results.push(h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("simulation thread panicked"))));
            }
        });
    }
    let (mut errors, mut worst) = (false, EXIT_OK);
    for (sc, result) in scenarios.iter().zip(results) {
        match result {
            Ok(s) => {
                println!(
                    "{}: {:?}, {} steps, {} events, relative energy drift {:.3e} -> {}",
                    s.name,
                    s.termination,
                    s.steps_completed,
                    s.events,
                    s.relative_energy_drift,
                    out.join(&s.name).display()
                );
                if let Some(f) = &s.failure {
                    eprintln!("{}: solver failure: {f}", s.name);
                }
                worst = worst.max(exit_code_for(s.termination));
            }
            Err(e) => {
                eprintln!("error: {}: {e:#}", sc.spec.name);
                errors = true;
            }
        }
    }
    Ok(if errors { EXIT_ERROR } else { worst })
}

fn cmd_verify(suite: &str, seed: u64) -> Result<u8> {
    let solver = solver_from_env()?;
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let mut all_passed = true;
    for name in names {
        match run_suite(name, seed, &solver) {
            Ok(report) => {
                print!("{}", report.render());
                all_passed &= report.passed();
            }
            Err(e) => {
                println!("[FAIL] {name}: {e}");
                all_passed = false;
            }
        }
    }
    Ok(if all_passed { EXIT_OK } else { EXIT_ERROR })
}

fn print_tensor(label: &str, body: &RigidBody) {
    let j = body.inertia();
    println!("{label}:");
    for i in 0..3 {
        println!("  [{:>16.9e} {:>16.9e} {:>16.9e}]", j[(i, 0)], j[(i, 1)], j[(i, 2)]);
    }
    let mut eig: Vec<f64> = j.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    println!("  principal moments: {:.9e} {:.9e} {:.9e}", eig[0], eig[1], eig[2]);
}

fn cmd_inertia(path: &Path) -> Result<u8> {
    let sc = read_scenario(path)?;
    println!("body of {} (mass {})", sc.spec.name, sc.spec.mass);
    print_tensor("inertia used by the simulation", &sc.world.body);
    if sc.spec.inertia.is_some() {
        let mut spec = sc.spec.clone();
        spec.inertia = None;
        let computed = build_body(&spec)?;
        print_tensor("inertia computed from the shape", &computed);
    }
    Ok(EXIT_OK)
}

fn cmd_plot(traj_path: &Path, out: &Path, scenario: Option<&Path>) -> Result<u8> {
    let scenario_path = match scenario {
        Some(p) => p.to_path_buf(),
        None => traj_path.parent().unwrap_or(Path::new(".")).join("scenario.json"),
    };
    let sc = read_scenario(&scenario_path).context("a scenario is needed to split the energy into its parts")?;
    let text = fs::read_to_string(traj_path).with_context(|| format!("reading {}", traj_path.display()))?;
    let rows = read_trajectory(&text)?;
    let series = EnergySeries::from_states(rows.iter().map(|r| (r.t, &r.state, r.kind)), &sc.world);
    fs::write(out, render_energy_series(&series)).with_context(|| format!("writing {}", out.display()))?;
    println!("{} samples, {} impacts -> {}", rows.len(), series.impacts.len(), out.display());
    Ok(EXIT_OK)
}

fn cmd_convergence(path: &Path, hs: &[f64], horizon: f64, reference_rate: usize) -> Result<u8> {
    let sc = read_scenario(path)?;
    let substeps = ((reference_rate as f64) * horizon).ceil().max(1.0) as usize;
    let report = convergence_study(&sc.world, &sc.initial, horizon, hs, substeps, &sc.solver)?;
    for (h, e) in &report.errors {
        println!("h = {h:<10} error = {e:.6e}");
    }
    match report.order {
        Some(p) => println!("fitted order: {p:.4}"),
        None => println!("all errors are at the rounding level; order fit skipped"),
    }
    Ok(EXIT_OK)
}
