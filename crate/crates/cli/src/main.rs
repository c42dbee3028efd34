use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::{ArgGroup, Parser};
use tracing::{info, warn};

use uavsim::{Engine, SimConfig};
use uavsim_cli::{exit, finish_run, resolve_config, replay_log, run_headless, run_replay, ticks_for, Artifacts, CliError, RunSummary};
use uavsim_gateway::{start, ServeOptions};

/// Multi-UAV search-and-rescue simulator.
///
/// Exit codes: 0 ok, 1 I/O failure, 2 usage or config error, 3 replay mismatch.
#[derive(Debug, Parser)]
#[command(name = "uavsim", version)]
#[command(group(ArgGroup::new("mode").required(true).args(["serve", "headless", "replay"])))]
struct Args {
    /// Serve the operator gateway on this port, stepping in real time.
    #[arg(long, value_name = "PORT")]
    serve: Option<u16>,
    /// Run as fast as possible without a gateway.
    #[arg(long, requires = "duration")]
    headless: bool,
    /// Re-run a recorded XML event log and verify its final hash.
    #[arg(long, value_name = "LOG")]
    replay: Option<PathBuf>,

    /// Simulated seconds to run. Serve mode runs until interrupted without it.
    #[arg(long, value_name = "SECONDS")]
    duration: Option<f64>,
    /// Address the gateway binds to.
    #[arg(long, default_value = "127.0.0.1", requires = "serve")]
    bind: IpAddr,

    /// Scenario XML; the built-in default scenario when absent.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Event log output; NDJSON if the name ends in .ndjson, XML otherwise.
    #[arg(long, value_name = "FILE")]
    log_out: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    export_trajectory: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    export_deviation: Option<PathBuf>,
    /// Export CSV rows every physics tick instead of every snapshot.
    #[arg(long)]
    full_rate: bool,
    #[arg(long, value_name = "JSON")]
    summary: Option<PathBuf>,
}

impl Args {
    fn artifacts(&self) -> Artifacts {
        Artifacts {
            log_out: self.log_out.clone(),
            trajectory: self.export_trajectory.clone(),
            deviation: self.export_deviation.clone(),
            summary: self.summary.clone(),
            full_rate: self.full_rate,
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    match run(&args) {
        Ok(summary) => {
            info!(
                ticks = summary.ticks,
                uavs = summary.uavs.len(),
                hash = %summary.final_hash,
                "run complete"
            );
            ExitCode::from(exit::OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(args: &Args) -> Result<RunSummary, CliError> {
    if let Some(d) = args.duration {
        if !(d.is_finite() && d >= 0.0) {
            return Err(CliError::Usage(format!("--duration must be a non-negative number of seconds, got {d}")));
        }
    }
    let (config, warnings) = resolve_config(args.config.as_deref(), args.seed)?;
    for w in &warnings {
        warn!("{w}");
    }
    let artifacts = args.artifacts();
    if let Some(log) = &args.replay {
        let (_, summary) = run_replay(&config, log, &artifacts)?;
        return Ok(summary);
    }
    if let Some(port) = args.serve {
        return serve(config, SocketAddr::new(args.bind, port), args.duration, &artifacts);
    }
    let (_, summary) = run_headless(&config, args.duration.unwrap_or(0.0), &artifacts)?;
    Ok(summary)
}

fn serve(config: SimConfig, addr: SocketAddr, duration: Option<f64>, artifacts: &Artifacts) -> Result<RunSummary, CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: "tokio runtime".into(),
        source,
    })?;
    let options = ServeOptions {
        max_ticks: duration.map(|d| ticks_for(&config, d)),
        ..ServeOptions::default()
    };
    let report = runtime.block_on(async {
        let handle = start(Engine::new(config.clone()), addr, options)
            .await
            .map_err(|source| CliError::Io {
                path: addr.to_string(),
                source,
            })?;
        info!(addr = %handle.local_addr(), "serving; Ctrl-C to stop");
        let stop = handle.stop_flag();
        tokio::spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                stop.store(true, Ordering::Relaxed);
            }
        });
        Ok::<_, CliError>(handle.wait().await)
    })?;
    info!(
        ticks = report.ticks,
        overruns = report.overruns,
        max_tick_ms = report.max_tick_time.as_secs_f64() * 1e3,
        "engine stopped"
    );
    if artifacts.trajectory.is_none() && artifacts.deviation.is_none() {
        return finish_run(&report.engine, artifacts);
    }
    // CSVs come from an offline re-run of the session's own log, which
    // reproduces the served physics exactly.
    replay_log(&config, &report.engine.log(), artifacts).map(|(_, summary)| summary)
}
