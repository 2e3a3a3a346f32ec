//! `sketchfly`: scenario runner, tracker benchmark, replay, gateway server
//! and load test.

use std::fs;
use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sketchfly::control::{ControlConfig, ControlLoop};
use sketchfly::harness::{self, bench_tracker, read_commands, run_scenario, BenchConfig, RunOptions, Scenario};
use sketchfly::sim::{write_path, DroneState};
use sketchfly_gateway::loadtest::{load_scene, run_load_test, LoadConfig};
use sketchfly_gateway::{Gateway, GatewayConfig};

/// Jitter bound the load test enforces, as a fraction of the tick period.
const MAX_JITTER: f64 = 0.10;

#[derive(Parser)]
#[command(name = "sketchfly", version, about = "Sketch-driven drone control: simulation, tracking and serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless and print its report.
    Run(RunArgs),
    /// Benchmark the tracker on synthetic translation sequences.
    Bench(BenchArgs),
    /// Re-fly a recorded commands.csv and print the flight path.
    Replay(ReplayArgs),
    /// Serve the control loop over WebSocket.
    Serve(ServeArgs),
    /// Flood an in-process gateway with clients and report loop cadence.
    Loadtest(LoadArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file, or `-` for stdin.
    scenario: String,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write report.json, path.csv and commands.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root directory for capture sessions.
    #[arg(long)]
    capture_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    sequences: usize,
    /// Frames per sequence.
    #[arg(long, default_value_t = 120)]
    frames: usize,
    /// Shift-oracle trials.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Print the full JSON report.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// commands.csv written by `run --out`.
    commands: PathBuf,
    /// Scenario that produced the log (start pose, dynamics, sampling).
    #[arg(long)]
    scenario: String,
    /// Write the path here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail unless the replayed path matches this path.csv byte for byte.
    #[arg(long)]
    expect: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Scene file: scenario TOML whose objects, camera and tuning are used; steps are ignored.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Do not serve UI assets.
    #[arg(long)]
    headless: bool,
    /// Static UI directory.
    #[arg(long, default_value = "webui/dist")]
    ui_dir: PathBuf,
    /// Cap on sketch command magnitude, 0..1.
    #[arg(long)]
    speed_cap: Option<f64>,
    /// Track-validity PSR threshold.
    #[arg(long)]
    psr_threshold: Option<f64>,
    #[arg(long)]
    capture_dir: Option<PathBuf>,
    /// Shared token clients must present.
    #[arg(long, env = "SKETCHFLY_TOKEN")]
    token: Option<String>,
}

#[derive(Args)]
struct LoadArgs {
    #[arg(long, default_value_t = 8)]
    clients: usize,
    #[arg(long, default_value_t = 1)]
    throttled: usize,
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Replay(a) => replay(a),
        Command::Serve(a) => serve(a),
        Command::Loadtest(a) => loadtest(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(arg: &str) -> Result<Scenario> {
    harness::load_scenario(arg).with_context(|| arg.to_string())
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let mut sc = load(&a.scenario)?;
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    let out = run_scenario(&sc, &RunOptions { capture_dir: a.capture_dir })?;
    if let Some(dir) = &a.out {
        out.write_artifacts(dir).with_context(|| format!("writing artifacts to {}", dir.display()))?;
    }
    io::stdout().write_all(out.report.to_json().as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let cfg = BenchConfig { seed: a.seed, sequences: a.sequences, frames_per_sequence: a.frames, shift_trials: a.trials, ..Default::default() };
    let r = bench_tracker(&cfg)?;
    if a.json {
        io::stdout().write_all(r.to_json().as_bytes())?;
        return Ok(ExitCode::SUCCESS);
    }
    let mut o = io::stdout().lock();
    writeln!(o, "window        {}x{}", r.window[0], r.window[1])?;
    writeln!(o, "seq  vx      vy      valid  mean_px   max_px")?;
    for s in &r.sequences {
        writeln!(
            o,
            "{:<4} {:+.3}  {:+.3}  {:>3}/{:<3} {:.4}  {:.4}",
            s.index, s.velocity_px[0], s.velocity_px[1], s.valid_frames, s.frames, s.mean_error_px, s.max_error_px
        )?;
    }
    writeln!(o, "mean error    {:.4} px", r.mean_error_px)?;
    writeln!(o, "max error     {:.4} px", r.max_error_px)?;
    let so = &r.shift_oracle;
    writeln!(o, "shift oracle  {}/{} within 1 px ({:.1}%), worst {:.3} px", so.within_one_px, so.trials, so.fraction * 100.0, so.max_error_px)?;
    writeln!(o, "throughput    {:.0} updates/s ({} updates in {:.3} s)", r.timing.updates_per_sec, r.timing.updates, r.timing.seconds)?;
    Ok(ExitCode::SUCCESS)
}

fn replay(a: ReplayArgs) -> Result<ExitCode> {
    let sc = load(&a.scenario)?;
    let file = fs::File::open(&a.commands).with_context(|| format!("{}", a.commands.display()))?;
    let rows = read_commands(io::BufReader::new(file)).with_context(|| format!("{}", a.commands.display()))?;
    let cfg = sc.control_config(None);
    let path = harness::replay(sc.start_state(), &cfg.drone, &rows, 1.0 / cfg.physics_hz, sc.export_period)?;
    let mut csv = Vec::new();
    write_path(&mut csv, &path)?;
    match &a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("{}", p.display()))?,
        None => io::stdout().write_all(&csv)?,
    }
    if let Some(expect) = &a.expect {
        let want = fs::read(expect).with_context(|| format!("{}", expect.display()))?;
        if want != csv {
            eprintln!("replayed path differs from {}", expect.display());
            return Ok(ExitCode::FAILURE);
        }
        eprintln!("replayed path matches {} ({} samples)", expect.display(), path.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs) -> Result<ExitCode> {
    let (mut cfg, scene, start, name) = match &a.scene {
        Some(arg) => {
            let sc = load(arg)?;
            let scene = sc.load_scene()?;
            (sc.control_config(None), scene, sc.start_state(), sc.name.clone())
        }
        None => (ControlConfig::default(), load_scene(), DroneState::at([0.0, 0.0, 0.0], 0.0), "default".to_string()),
    };
    let mut scene = scene;
    if let Some(seed) = a.seed {
        cfg.tracker.seed = seed;
        scene.background_seed = seed;
    }
    if let Some(cap) = a.speed_cap {
        if !(0.0..=1.0).contains(&cap) {
            bail!("--speed-cap must be in [0, 1], got {cap}");
        }
        cfg.sketch.speed_cap = cap;
    }
    if let Some(t) = a.psr_threshold {
        cfg.tracker.psr_threshold = t;
    }
    cfg.capture_dir = a.capture_dir.clone();
    let cl = ControlLoop::new(cfg, scene, &name, start)?;
    let ui_dir = if a.headless { None } else { Some(a.ui_dir.clone()) };
    if let Some(dir) = &ui_dir {
        if !dir.is_dir() {
            tracing::warn!("UI directory {} not found; only the API is served", dir.display());
        }
    }
    let gw_cfg = GatewayConfig { token: a.token.clone(), ui_dir, ..Default::default() };
    let rt = sketchfly_gateway::runtime()?;
    rt.block_on(async move {
        let gw = Gateway::start(cl, gw_cfg);
        let addr = SocketAddr::new(a.bind, a.port);
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        tracing::info!("listening on http://{}", listener.local_addr()?);
        sketchfly_gateway::serve(listener, gw, async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn loadtest(a: LoadArgs) -> Result<ExitCode> {
    if !(a.seconds > 0.0) {
        bail!("--seconds must be positive");
    }
    let cfg = LoadConfig { clients: a.clients, throttled: a.throttled, duration: Duration::from_secs_f64(a.seconds), ..Default::default() };
    let rt = sketchfly_gateway::runtime()?;
    let r = rt.block_on(run_load_test(&cfg, ControlConfig::default()))?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    let ok = r.cadence.rms_jitter < MAX_JITTER && r.frames_out_of_order == 0;
    eprintln!(
        "cadence {:.2} Hz, jitter {:.2}% rms, {} frames out of order: {}",
        r.cadence.rate_hz,
        r.cadence.rms_jitter * 100.0,
        r.frames_out_of_order,
        if ok { "ok" } else { "FAILED" }
    );
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
