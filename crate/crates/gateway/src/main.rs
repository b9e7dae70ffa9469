use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use clap::{Parser, Subcommand};
use vrlab_core::analysis::{analyze, AnalysisOptions, Measure};
use vrlab_core::archive::{export_experiment, import_archive, Archive};
use vrlab_core::experiment::{load_experiment, QualityFilters};
use vrlab_core::ids::{ExperimentId, Timestamp, WorkerId};
use vrlab_core::journal::open_data_dir;
use vrlab_core::panel::{DeviceType, PanelExportRecord};
use vrlab_core::session::SessionState;
use vrlab_core::sim::{enroll, panel_fixture, simulate, AgentProfile, SimConfig, SimMode, Study};
use vrlab_core::wire::{LabApi, LocalApi};
use vrlab_core::Lab;
use vrlab_gateway::{AppState, HttpApi, ServerConfig};

const TOKEN_FILE: &str = "token.key";

#[derive(Parser)]
#[command(name = "vrlab", version, about = "Orchestration service for VR crowd experiments")]
struct Cli {
    /// Storage root holding the event log and keys.
    #[arg(long, env = "VRLAB_DATA_DIR", default_value = "vrlab-data", global = true)]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register an experiment from a config file or a bundled study.
    Create {
        file: Option<PathBuf>,
        /// study1, study2 or study3
        #[arg(long, conflicts_with = "file")]
        study: Option<String>,
    },
    Activate {
        experiment: ExperimentId,
    },
    /// Post the experiment on the simulated task board.
    Post {
        experiment: ExperimentId,
        #[arg(long)]
        reward_cents: u32,
        #[arg(long, default_value_t = 7)]
        days: u32,
        /// Restrict to these devices; defaults to the experiment's requirements.
        #[arg(long = "device")]
        devices: Vec<String>,
    },
    /// Session counts per state, for one or all experiments.
    Status {
        experiment: Option<ExperimentId>,
    },
    Export {
        experiment: ExperimentId,
        #[arg(long)]
        out: PathBuf,
    },
    Import {
        dir: PathBuf,
    },
    Analyze {
        experiment: ExperimentId,
        /// `zone1_share`, `splits`, `unfair_accepts` or `<instrument>.<subscale>`
        #[arg(long)]
        measure: Measure,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = vrlab_core::telemetry::DEFAULT_FOV_DEG)]
        fov: f64,
        #[arg(long)]
        trim_sd: Option<f64>,
        /// Keep surveys redeemed after the window.
        #[arg(long)]
        include_late: bool,
        #[arg(long)]
        json: bool,
    },
    /// Drive scripted participants through an experiment.
    Simulate {
        #[arg(long)]
        experiment: ExperimentId,
        #[arg(long)]
        agents: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run agents on this many threads instead of one after another.
        #[arg(long)]
        threads: Option<usize>,
        /// AgentProfile JSON; defaults to the bundled study's profile.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Talk to a running server instead of the data directory.
        #[arg(long)]
        api: Option<String>,
        #[arg(long, env = "VRLAB_ADMIN_TOKEN")]
        admin_token: Option<String>,
    },
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Take request time from the X-Vrlab-Sim-Time header.
        #[arg(long)]
        simulated_clock: bool,
        #[arg(long, env = "VRLAB_ADMIN_TOKEN")]
        admin_token: Option<String>,
        /// Seconds between idle-session sweeps; 0 disables them.
        #[arg(long, default_value_t = 60)]
        sweep_secs: u64,
    },
    /// Panel administration.
    Panel {
        #[command(subcommand)]
        command: PanelCommand,
    },
}

#[derive(Subcommand)]
enum PanelCommand {
    /// Enroll the synthetic qualification fixture.
    Seed {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print approved workers as JSON lines.
    List,
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn study(name: &str) -> Result<Study, String> {
    match name {
        "study1" | "restorative" => Ok(Study::Restorative),
        "study2" | "proteus" => Ok(Study::Proteus),
        "study3" | "crowd" => Ok(Study::Crowd),
        other => Err(format!("unknown study {other:?}; expected study1, study2 or study3")),
    }
}

fn device(name: &str) -> Result<DeviceType, String> {
    serde_json::from_value(serde_json::Value::String(name.into())).map_err(|_| format!("unknown device {name:?}"))
}

fn profile_for(id: &ExperimentId, file: Option<&Path>) -> Result<AgentProfile, Box<dyn std::error::Error>> {
    if let Some(path) = file {
        return Ok(serde_json::from_str(&fs::read_to_string(path)?)?);
    }
    Ok(Study::ALL.into_iter().find(|s| &s.experiment().experiment_id == id).map_or_else(AgentProfile::default, Study::profile))
}

fn run(cli: Cli) -> CliResult {
    let dir = cli.data_dir;
    let now = Timestamp::now();
    match cli.command {
        Command::Create { file, study: name } => {
            let exp = match (file, name) {
                (Some(path), _) => load_experiment(&fs::read_to_string(&path)?)?,
                (None, Some(name)) => study(&name)?.experiment(),
                (None, None) => return Err("give a config file or --study".into()),
            };
            let id = open_data_dir(&dir)?.create_experiment(exp, now)?;
            println!("{id}");
        }
        Command::Activate { experiment } => {
            open_data_dir(&dir)?.activate_experiment(&experiment, now)?;
        }
        Command::Post { experiment, reward_cents, days, devices } => {
            let eligibility = if devices.is_empty() {
                None
            } else {
                Some(devices.iter().map(|d| device(d)).collect::<Result<BTreeSet<_>, _>>()?)
            };
            let posting = open_data_dir(&dir)?.post_task(&experiment, eligibility, reward_cents, days, now)?;
            println!("{}", serde_json::to_string(&posting)?);
        }
        Command::Status { experiment } => {
            let lab = open_data_dir(&dir)?;
            print!("{}", status(&lab, experiment.as_ref())?);
        }
        Command::Export { experiment, out } => {
            let lab = open_data_dir(&dir)?;
            let archive = export_experiment(&lab, &experiment)?;
            archive.write_to(&out)?;
            println!("wrote {} files to {}", archive.files.len(), out.display());
        }
        Command::Import { dir: from } => {
            let archive = Archive::read_from(&from)?;
            let id = import_archive(&mut open_data_dir(&dir)?, &archive)?;
            println!("{id}");
        }
        Command::Analyze { experiment, measure, alpha, fov, trim_sd, include_late, json } => {
            let lab = open_data_dir(&dir)?;
            let mut filters: QualityFilters = lab.experiment(&experiment)?.experiment.filters.clone();
            if include_late {
                filters.exclude_late_surveys = false;
            }
            let opts = AnalysisOptions { alpha, fov_deg: fov, filters: Some(filters), trim_sd };
            let report = analyze(&lab, &experiment, &measure, &opts)?;
            print!("{}", if json { report.to_json() } else { report.to_text() });
        }
        Command::Simulate { experiment, agents, seed, threads, profile, api, admin_token } => {
            let profile = profile_for(&experiment, profile.as_deref())?;
            let mut config = SimConfig::new(seed, now);
            if let Some(threads) = threads {
                config.mode = SimMode::Concurrent { threads };
            }
            let report = match api {
                Some(base) => {
                    let http = HttpApi::new(base).with_admin_token(admin_token);
                    let exp = http.experiment(&experiment)?;
                    let workers: Vec<WorkerId> = http
                        .panel_workers()?
                        .into_iter()
                        .filter(|r: &PanelExportRecord| !r.devices.is_disjoint(&exp.device_requirements))
                        .map(|r| r.worker_id)
                        .collect();
                    run_sim(&http, &experiment, &workers, agents, &profile, &config)?
                }
                None => {
                    let lab = Arc::new(RwLock::new(open_data_dir(&dir)?));
                    let workers = {
                        let lab = lab.read().unwrap_or_else(|e| e.into_inner());
                        lab.eligible_workers(&lab.experiment(&experiment)?.experiment.device_requirements)
                    };
                    run_sim(&LocalApi::new(lab), &experiment, &workers, agents, &profile, &config)?
                }
            };
            let done = report.runs.iter().filter(|r| r.session.state == SessionState::SurveyComplete).count();
            println!("{} sessions, {done} completed, {} abandoned", report.runs.len(), report.abandoned.len());
        }
        Command::Serve { addr, simulated_clock, admin_token, sweep_secs } => {
            let lab = Arc::new(RwLock::new(open_data_dir(&dir)?));
            let config = ServerConfig { token_secret: token_secret(&dir)?, simulated_clock, admin_token };
            let sweep = (sweep_secs > 0 && !simulated_clock).then(|| Duration::from_secs(sweep_secs));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                vrlab_gateway::serve(listener, AppState::new(lab, config), sweep).await
            })?;
        }
        Command::Panel { command: PanelCommand::Seed { seed } } => {
            let lab = Arc::new(RwLock::new(open_data_dir(&dir)?));
            let approved = enroll(&LocalApi::new(lab), &panel_fixture(seed), now)?;
            println!("approved {} workers", approved.len());
        }
        Command::Panel { command: PanelCommand::List } => {
            let lab = open_data_dir(&dir)?;
            for w in lab.panel().workers() {
                if let Some(rec) = lab.panel().export_record(&w.worker_id) {
                    println!("{}", serde_json::to_string(&rec)?);
                }
            }
        }
    }
    Ok(())
}

fn run_sim(
    api: &dyn LabApi,
    experiment: &ExperimentId,
    workers: &[WorkerId],
    agents: usize,
    profile: &AgentProfile,
    config: &SimConfig,
) -> Result<vrlab_core::sim::SimReport, Box<dyn std::error::Error>> {
    if workers.len() < agents {
        return Err(format!("only {} eligible workers for {agents} agents; try `vrlab panel seed`", workers.len()).into());
    }
    Ok(simulate(api, experiment, &workers[..agents], &|_| profile.clone(), config)?)
}

fn status(lab: &Lab, only: Option<&ExperimentId>) -> Result<String, vrlab_core::LabError> {
    let mut out = String::new();
    let ids: Vec<ExperimentId> = match only {
        Some(id) => vec![lab.experiment(id)?.experiment.experiment_id.clone()],
        None => lab.experiments().map(|e| e.experiment.experiment_id.clone()).collect(),
    };
    for id in ids {
        let entry = lab.experiment(&id)?;
        let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
        for e in lab.sessions_of(&id)? {
            *counts.entry(format!("{:?}", e.session.state)).or_default() += 1;
        }
        let state = if entry.active { "active" } else { "draft" };
        let counts: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.push_str(&format!("{id}\t{state}\t{} sessions\t{}\n", entry.sessions.len(), counts.join(" ")));
    }
    Ok(out)
}

/// Reads (or creates) the secret that session tokens are derived from.
fn token_secret(dir: &Path) -> io::Result<Vec<u8>> {
    let path = dir.join(TOKEN_FILE);
    match fs::read_to_string(&path) {
        Ok(s) => hex::decode(s.trim()).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let secret: [u8; 32] = rand::random();
            fs::write(&path, format!("{}\n", hex::encode(secret)))?;
            Ok(secret.to_vec())
        }
        Err(e) => Err(e),
    }
}
