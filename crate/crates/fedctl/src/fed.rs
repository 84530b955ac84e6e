use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use fedod::fedcore::transport::{resolve_bind, TcpAcceptor, TcpLink};
use fedod::fedcore::{
    run_client, run_federation, run_server, ClientData, FedError, FederationResult, LocalClient, StopReason, Transport,
};
use fedod::params::write_fdw;
use fedod::tinydet::init_params;
use fedod::Rng;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::{latest_gen, layout, load_client};

pub const HISTORY_SCHEMA: &str = "fedod-history/1";

/// How the federation's clients run.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum ClientMode {
    /// One thread per client inside this process.
    #[default]
    Threads,
    /// One OS process per client, started from this executable, over TCP.
    Processes(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRound {
    pub round: u32,
    /// Global broadcast at the start of the round.
    pub global: String,
    /// Client accuracies of that global; absent for the round-0
    /// initialization.
    pub accuracies: Option<BTreeMap<String, f64>>,
    pub mean: Option<f64>,
}

/// `history.json`: one entry per aggregated round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub schema: String,
    pub rounds_used: u32,
    pub stop_reason: StopReason,
    pub stop_threshold: f64,
    pub max_rounds: u32,
    pub local_epochs: usize,
    /// The round file whose weights `final.fdw` holds.
    pub final_global: String,
    pub rounds: Vec<HistoryRound>,
}

#[derive(Debug, Clone)]
pub struct FedOutput {
    pub dir: PathBuf,
    pub result: FederationResult,
    pub history: History,
}

fn load_clients(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<ClientData>)> {
    let gen = latest_gen(cfg)?;
    let data = cfg
        .client_names()
        .iter()
        .map(|n| load_client(&gen, n))
        .collect::<Result<Vec<_>>>()?;
    for d in &data {
        if d.train.is_empty() || d.test.is_empty() {
            return Err(CliError::Dataset(format!(
                "client {} needs non-empty train and test splits",
                d.client_id
            )));
        }
    }
    Ok((gen, data))
}

fn history(cfg: &ExperimentConfig, r: &FederationResult) -> History {
    let final_index = r
        .globals
        .iter()
        .rposition(|g| *g == r.final_weights)
        .expect("the final weights are one of the globals");
    let rounds = (0..r.rounds_used)
        .map(|round| {
            let rec = r.accuracy_history.iter().find(|h| h.round == round);
            HistoryRound {
                round,
                global: layout::round_file(round as usize),
                accuracies: rec.map(|h| h.accuracies.clone()),
                mean: rec.map(|h| h.mean),
            }
        })
        .collect();
    History {
        schema: HISTORY_SCHEMA.into(),
        rounds_used: r.rounds_used,
        stop_reason: r.stop_reason,
        stop_threshold: cfg.federation.stop_threshold,
        max_rounds: cfg.federation.max_rounds,
        local_epochs: cfg.federation.local_epochs,
        final_global: layout::round_file(final_index),
        rounds,
    }
}

/// Runs the federation over the newest generated data and writes every
/// global (`round_NN.fdw`, `round_00` the initialization), `final.fdw`,
/// `history.json`, the resolved `config.json` and `run.json`. Nothing
/// written depends on wall-clock time, paths or transport timing.
pub fn cmd_fed(cfg: &ExperimentConfig, mode: &ClientMode) -> Result<FedOutput> {
    let (gen, data) = load_clients(cfg)?;
    let n_k: BTreeMap<String, usize> = data.iter().map(|d| (d.client_id.clone(), d.train.len())).collect();
    let dir = layout::create_run_dir(&cfg.out, "fed")?;
    layout::write_text(&dir.join("config.json"), &cfg.to_json())?;
    let result = match mode {
        ClientMode::Threads => run_federation(&cfg.federation, &cfg.detector, data)?,
        ClientMode::Processes(exe) => {
            let names: Vec<String> = data.iter().map(|d| d.client_id.clone()).collect();
            run_with_processes(cfg, exe, &dir.join("config.json"), &gen, &names)?
        }
    };
    for (i, g) in result.globals.iter().enumerate() {
        write_fdw(dir.join(layout::round_file(i)), g)?;
    }
    write_fdw(dir.join("final.fdw"), &result.final_weights)?;
    let history = history(cfg, &result);
    layout::write_json(&dir.join("history.json"), &history)?;
    layout::write_json(
        &dir.join("run.json"),
        &serde_json::json!({
            "scenario": cfg.scenario,
            "seed": cfg.seed,
            "num_samples": n_k,
            "rounds_used": result.rounds_used,
            "stop_reason": result.stop_reason,
            "final_global": history.final_global,
        }),
    )?;
    info!(
        "federation stopped after {} rounds ({:?}); outputs in {}",
        result.rounds_used,
        result.stop_reason,
        dir.display()
    );
    Ok(FedOutput { dir, result, history })
}

fn spawn_client(exe: &Path, config: &Path, gen: &Path, name: &str, addr: &str) -> Result<Child> {
    Command::new(exe)
        .arg("--config")
        .arg(config)
        .arg("client")
        .arg("--name")
        .arg(name)
        .arg("--data")
        .arg(gen.join("data").join(name))
        .arg("--connect")
        .arg(addr)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| CliError::Other(format!("cannot start client {name} from {}: {e}", exe.display())))
}

fn run_with_processes(
    cfg: &ExperimentConfig,
    exe: &Path,
    config: &Path,
    gen: &Path,
    names: &[String],
) -> Result<FederationResult> {
    if cfg.federation.transport != Transport::Tcp {
        return Err(CliError::Config("client processes need `--transport tcp`".into()));
    }
    cfg.detector.validate()?;
    let acceptor = TcpAcceptor::bind(&resolve_bind(&cfg.federation.bind))?;
    let addr = acceptor.local_addr()?.to_string();
    info!("listening on {addr}");
    let mut children = Vec::with_capacity(names.len());
    for name in names {
        match spawn_client(exe, config, gen, name, &addr) {
            Ok(c) => children.push(c),
            Err(e) => {
                for mut c in children {
                    let _ = c.kill();
                    let _ = c.wait();
                }
                return Err(e);
            }
        }
    }
    let init = init_params(&cfg.detector, &mut Rng::new(cfg.seed))?;
    let timeout = Duration::from_secs(cfg.federation.timeout_secs);
    let server = acceptor
        .accept(names.len(), timeout)
        .and_then(|mut hub| run_server(&mut hub, &cfg.federation, init));
    let mut failed = Vec::new();
    for (name, mut child) in names.iter().zip(children) {
        if server.is_err() {
            let _ = child.kill();
        }
        match child.wait() {
            Ok(s) if s.success() => {}
            Ok(s) => failed.push(format!("client {name} exited with {s}")),
            Err(e) => failed.push(format!("client {name}: {e}")),
        }
    }
    let result = server?;
    if !failed.is_empty() {
        warn!("{}", failed.join("; "));
        return Err(CliError::Federation(FedError::ProtocolViolation(failed.join("; "))));
    }
    Ok(result)
}

/// Body of the hidden `client` subcommand: one participant connecting to a
/// server started by [`cmd_fed`] in process mode.
pub fn run_spawned_client(cfg: &ExperimentConfig, name: &str, data_dir: &Path, addr: &str) -> Result<()> {
    let ds = fedod::synthdata::read_yolo(data_dir)?;
    let data = ClientData {
        client_id: name.to_string(),
        train: ds.split(fedod::synthdata::Split::Train),
        test: ds.split(fedod::synthdata::Split::Test),
    };
    let mut logic = LocalClient::new(data, cfg.detector.clone(), cfg.federation.local_epochs, cfg.seed);
    let mut link = TcpLink::connect(addr, Duration::from_secs(cfg.federation.timeout_secs))?;
    run_client(&mut link, &mut logic)?;
    Ok(())
}
