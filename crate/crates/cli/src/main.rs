//! `slicer` — run slice scenarios offline, serve the REST control plane,
//! and render breakdown reports.

mod calibrate;
mod client;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use slicer_core::engine::{events_to_jsonl, EngineOptions};
use slicer_core::model::parse_cluster_config;
use slicer_core::report;
use slicer_core::scenario::{self, timelines_from_json, timelines_to_json, Scenario};
use slicer_service::ServeMode;

use client::Client;

#[derive(Parser)]
#[command(name = "slicer", version, about = "disaggregated-cluster slice manager and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario offline to completion and write its outputs.
    Run {
        /// Bundled scenario name or path to a scenario JSON file.
        scenario: String,
        /// Output directory (created if missing).
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render a finished run directory as a table or text chart.
    Report {
        /// Directory written by `slicer run`.
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Chart width in buckets (gantt only).
        #[arg(long, default_value_t = 100)]
        width: usize,
    },
    /// Serve the REST control plane over a cluster.
    Serve {
        /// Cluster config JSON file.
        #[arg(long)]
        cluster: PathBuf,
        /// Listen address, e.g. 127.0.0.1:8080 (port 0 picks one).
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, value_enum, default_value_t = Mode::Sim)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Block on the queue head instead of skipping unsatisfiable jobs.
        #[arg(long)]
        strict_fifo: bool,
    },
    /// Submit a job document to a server.
    Submit {
        job_file: PathBuf,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Show a job's current status.
    Status {
        job_id: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Fetch a finished job's timeline.
    Timeline {
        job_id: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Cancel a job.
    Cancel {
        job_id: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Show the cluster inventory and attachment map.
    Cluster {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Page through the event log.
    Events {
        #[arg(long, default_value_t = 0)]
        since: usize,
        #[arg(long, default_value_t = 1000)]
        limit: usize,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Advance the simulated clock (simulated-mode servers only).
    Advance {
        seconds: f64,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// List bundled scenarios, or export them as JSON files.
    Scenarios {
        /// Write each bundled scenario to this directory.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Search latency parameters that reproduce the published overhead
    /// windows and verify them through the engine.
    Calibrate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Gantt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sim,
    Wall,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { scenario, out } => {
            cmd_run(&scenario, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report {
            run_dir,
            format,
            width,
        } => {
            cmd_report(&run_dir, format, width)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            cluster,
            listen,
            mode,
            seed,
            strict_fifo,
        } => {
            cmd_serve(&cluster, &listen, mode, seed, strict_fifo)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Submit { job_file, server } => {
            let body = fs::read_to_string(&job_file)
                .with_context(|| format!("read {}", job_file.display()))?;
            Ok(Client::new(&server).post("/v1/jobs", &body)?.finish())
        }
        Command::Status { job_id, server } => {
            Ok(Client::new(&server).get(&format!("/v1/jobs/{job_id}"))?.finish())
        }
        Command::Timeline { job_id, server } => Ok(Client::new(&server)
            .get(&format!("/v1/jobs/{job_id}/timeline"))?
            .finish()),
        Command::Cancel { job_id, server } => Ok(Client::new(&server)
            .delete(&format!("/v1/jobs/{job_id}"))?
            .finish()),
        Command::Cluster { server } => Ok(Client::new(&server).get("/v1/cluster")?.finish()),
        Command::Events {
            since,
            limit,
            server,
        } => Ok(Client::new(&server)
            .get(&format!("/v1/events?since={since}&limit={limit}"))?
            .finish()),
        Command::Advance { seconds, server } => {
            let body = serde_json::json!({ "seconds": seconds }).to_string();
            Ok(Client::new(&server).post("/v1/clock/advance", &body)?.finish())
        }
        Command::Scenarios { export } => {
            cmd_scenarios(export.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate => {
            calibrate::cmd_calibrate()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    if let Some(bundled) = scenario::bundled(name_or_path) {
        return Ok(bundled);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        bail!(
            "{name_or_path} is neither a bundled scenario ({}) nor a file",
            scenario::BUNDLED_NAMES.join(", ")
        );
    }
    let text = fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
    scenario::parse_scenario(&text).with_context(|| format!("parse {}", path.display()))
}

fn cmd_run(name_or_path: &str, out: &Path) -> Result<()> {
    let scenario = load_scenario(name_or_path)?;
    let output = scenario::run(&scenario).context("scenario failed")?;
    fs::create_dir_all(out).with_context(|| format!("create {}", out.display()))?;

    let events_path = out.join("events.jsonl");
    fs::write(&events_path, events_to_jsonl(&output.events))?;
    let timelines_path = out.join("timelines.json");
    fs::write(&timelines_path, timelines_to_json(&output.timelines))?;
    let csv_path = out.join("breakdown.csv");
    fs::write(&csv_path, report::breakdown_csv(&output.timelines)?)?;

    println!(
        "{}: {} jobs, {} events -> {}",
        name_or_path,
        output.timelines.len(),
        output.events.len(),
        out.display()
    );
    Ok(())
}

fn cmd_report(run_dir: &Path, format: Format, width: usize) -> Result<()> {
    let timelines_path = run_dir.join("timelines.json");
    let text = fs::read_to_string(&timelines_path)
        .with_context(|| format!("read {}; is this a run directory?", timelines_path.display()))?;
    let timelines = timelines_from_json(&text)
        .with_context(|| format!("parse {}", timelines_path.display()))?;
    match format {
        Format::Csv => print!("{}", report::breakdown_csv(&timelines)?),
        Format::Gantt => print!("{}", report::gantt(&timelines, width)),
    }
    Ok(())
}

fn cmd_serve(
    cluster_path: &Path,
    listen: &str,
    mode: Mode,
    seed: u64,
    strict_fifo: bool,
) -> Result<()> {
    let text = fs::read_to_string(cluster_path)
        .with_context(|| format!("read {}", cluster_path.display()))?;
    let cluster = parse_cluster_config(&text)
        .with_context(|| format!("parse {}", cluster_path.display()))?;
    let mode = match mode {
        Mode::Sim => ServeMode::Sim,
        Mode::Wall => ServeMode::Wall,
    };
    let options = EngineOptions {
        params: None,
        seed,
        strict_fifo,
        ..EngineOptions::default()
    };
    let router = slicer_service::build(cluster, options, mode)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("start runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("bind {listen}"))?;
        let addr = listener.local_addr()?;
        println!("listening on {addr}");
        use std::io::Write as _;
        std::io::stdout().flush().ok();
        slicer_service::serve(listener, router).await?;
        Ok(())
    })
}

fn cmd_scenarios(export: Option<&Path>) -> Result<()> {
    match export {
        None => {
            for name in scenario::BUNDLED_NAMES {
                let bundled = scenario::bundled(name).expect("bundled");
                println!(
                    "{name}: {} jobs on {} nodes",
                    bundled.jobs.len(),
                    bundled.cluster.nodes.len()
                );
            }
        }
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for name in scenario::BUNDLED_NAMES {
                let bundled = scenario::bundled(name).expect("bundled");
                let mut text = serde_json::to_string_pretty(&bundled)?;
                text.push('\n');
                let path = dir.join(format!("{name}.json"));
                fs::write(&path, text)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
