use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hallway_reach::closed_loop::{monte_carlo, run_episode};
use hallway_reach::controller::MLPController;
use hallway_reach::env_server::{initial_lateral_for_seed, serve_env};
use hallway_reach::fixtures;
use hallway_reach::lidar::FaultConfig;
use hallway_reach::reach::{verify, Budget, Verdict, VerifyOptions};
use hallway_reach::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "hallway",
    version,
    about = "Reachability and simulation for a LiDAR steering controller in a hallway loop"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the margin over every subset of the initial window.
    Verify(VerifyArgs),
    /// Run one closed-loop episode and write its trace.
    Simulate(SimulateArgs),
    /// Run many episodes from random starts.
    MonteCarlo(MonteCarloArgs),
    /// Serve the training environment over TCP.
    ServeEnv(ServeArgs),
    /// Write one of the built-in controllers as a weight file.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON (track, rays, dynamics, horizon, window).
    #[arg(long)]
    scenario: PathBuf,
    /// Controller weight file.
    #[arg(long)]
    weights: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Subset width in meters (0.005 = 0.5 cm).
    #[arg(long, default_value_t = 0.005)]
    subset_size: f64,
    /// Override the scenario horizon, seconds.
    #[arg(long)]
    horizon: Option<f64>,
    /// Wall-clock budget per subset, seconds.
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Cap on propagated path steps per subset.
    #[arg(long)]
    max_path_steps: Option<usize>,
    /// Halve Unknown subsets up to this depth.
    #[arg(long, default_value_t = 0)]
    refine_depth: usize,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Timing file; defaults to the report path with a `.timing.json` suffix.
    #[arg(long)]
    timing_out: Option<PathBuf>,
    /// Optional reach-tube CSV.
    #[arg(long)]
    tube_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Lateral start offset in meters, leftward positive.
    #[arg(long)]
    init_lateral: Option<f64>,
    /// Seeds the faults and, without --init-lateral, the start.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of faulty rays (overrides the scenario's fault setting).
    #[arg(long)]
    faults: Option<usize>,
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
    /// Optional per-ray scan CSV.
    #[arg(long)]
    scan_out: Option<PathBuf>,
}

#[derive(Args)]
struct MonteCarloArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    faults: Option<usize>,
    #[arg(long, default_value = "monte_carlo.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// Scenario JSON (track, rays, dynamics, horizon, window).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "127.0.0.1:5555")]
    bind: String,
    #[arg(long)]
    faults: Option<usize>,
    /// Episode length in control steps (default: the horizon).
    #[arg(long)]
    episode_steps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureName {
    Centering,
    Sensitive,
    Zero,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(value_enum)]
    name: FixtureName,
    #[arg(long, default_value_t = 21)]
    rays: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn set_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            bail!("--jobs must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load(common: &Common) -> Result<(Scenario, MLPController)> {
    set_jobs(common.jobs)?;
    let scenario =
        Scenario::load(&common.scenario).with_context(|| format!("loading scenario {}", common.scenario.display()))?;
    let controller = MLPController::load(&common.weights)
        .with_context(|| format!("loading weights {}", common.weights.display()))?;
    controller.check_rays(scenario.rays.count)?;
    Ok((scenario, controller))
}

fn fault_config(scenario: &Scenario, count: Option<usize>) -> Result<Option<FaultConfig>> {
    let f = match count {
        None => scenario.faults.clone(),
        Some(0) => None,
        Some(n) => Some(FaultConfig {
            num_faulty_rays: n,
            ..scenario.faults.clone().unwrap_or_default()
        }),
    };
    if let Some(f) = &f {
        f.validate(&scenario.rays)?;
    }
    Ok(f)
}

fn timing_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    report.with_file_name(format!("{stem}.timing.json"))
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let (mut scenario, controller) = load(&a.common)?;
    if let Some(h) = a.horizon {
        scenario.horizon = h;
        scenario.validate()?;
    }
    let options = VerifyOptions {
        subset_size: a.subset_size,
        budget: Budget {
            wall_seconds: a.budget_seconds,
            max_path_steps: a.max_path_steps,
        },
        refine_depth: a.refine_depth,
    };
    let report = verify(&scenario, &controller, &options)?;
    write_atomic(&a.out, (report.to_json_pretty() + "\n").as_bytes())?;
    let timing = serde_json::to_string_pretty(&report.timing())? + "\n";
    write_atomic(&a.timing_out.unwrap_or_else(|| timing_path(&a.out)), timing.as_bytes())?;
    if let Some(p) = &a.tube_csv {
        let mut buf = Vec::new();
        report.write_tube_csv(&mut buf)?;
        write_atomic(p, &buf)?;
    }
    println!("{}", report.summary_row());
    println!("overall: {:?}", report.overall);
    Ok(if report.overall == Verdict::Safe {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_simulate(a: SimulateArgs) -> Result<ExitCode> {
    let (scenario, controller) = load(&a.common)?;
    let faults = fault_config(&scenario, a.faults)?;
    let lateral = a
        .init_lateral
        .unwrap_or_else(|| initial_lateral_for_seed(&scenario, a.seed));
    let trace = run_episode(
        &controller,
        &scenario,
        scenario.initial_state(lateral),
        faults.as_ref(),
        a.seed,
    )?;
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    write_atomic(&a.out, &buf)?;
    if let Some(p) = &a.scan_out {
        let mut buf = Vec::new();
        trace.write_scan_csv(&mut buf)?;
        write_atomic(p, &buf)?;
    }
    println!(
        "outcome: {:?}, min clearance {:.4} m, total reward {:.3}",
        trace.outcome,
        trace.min_clearance(),
        trace.total_reward()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_monte_carlo(a: MonteCarloArgs) -> Result<ExitCode> {
    let (scenario, controller) = load(&a.common)?;
    let faults = fault_config(&scenario, a.faults)?;
    let report = monte_carlo(&controller, &scenario, a.runs as usize, faults.as_ref(), a.seed)?;
    write_atomic(&a.out, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    println!("{} ({} within margin)", report.summary(), report.margin_safe);
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(a: ServeArgs) -> Result<ExitCode> {
    let scenario = Scenario::load(&a.scenario).with_context(|| format!("loading scenario {}", a.scenario.display()))?;
    let faults = fault_config(&scenario, a.faults)?;
    let steps = a.episode_steps.unwrap_or_else(|| scenario.steps());
    if steps == 0 {
        bail!("--episode-steps must be positive");
    }
    let listener = TcpListener::bind(&a.bind).with_context(|| format!("binding {}", a.bind))?;
    log::info!("listening on {}", listener.local_addr()?);
    let on_episode = |e: &hallway_reach::env_server::EpisodeEnd| {
        log::info!(
            "episode seed={} steps={} crashed={} reward={:.3}",
            e.seed,
            e.steps,
            e.crashed,
            e.total_reward
        );
    };
    serve_env(
        listener,
        &scenario,
        faults.as_ref(),
        steps,
        Arc::new(AtomicBool::new(false)),
        &on_episode,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_fixture(a: FixtureArgs) -> Result<ExitCode> {
    let c = match a.name {
        FixtureName::Centering => fixtures::centering_controller(a.rays),
        FixtureName::Sensitive => fixtures::sensitive_controller(a.rays),
        FixtureName::Zero => fixtures::zero_controller(a.rays),
    };
    write_atomic(&a.out, (c.to_json() + "\n").as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::MonteCarlo(a) => cmd_monte_carlo(a),
        Command::ServeEnv(a) => cmd_serve(a),
        Command::Fixture(a) => cmd_fixture(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
