use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fedctl::eval::{cmd_eval, EvalTarget};
use fedctl::fed::{cmd_fed, run_spawned_client, ClientMode};
use fedctl::gen::cmd_gen;
use fedctl::modelcard::cmd_modelcard;
use fedctl::report::cmd_report;
use fedctl::train::cmd_train_local;
use fedctl::{resolve_config, CliError, ExperimentConfig, Overrides, Result};
use fedod::fedcore::Transport;
use fedod::synthdata::Split;

/// Desk-scale federated object detection experiments.
///
/// Exit codes: 0 ok, 1 other failure, 2 invalid config, 3 dataset missing or
/// corrupt, 4 protocol/transport failure, 5 checkpoint schema mismatch,
/// 6 report inputs missing, 7 experiment incomplete.
#[derive(Debug, Parser)]
#[command(name = "fedctl", version)]
struct Cli {
    /// Experiment config (JSON). Defaults to the newest gen run's config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    transport: Option<TransportArg>,
    /// Server bind address; FEDOD_BIND takes precedence.
    #[arg(long, global = true)]
    bind: Option<String>,
    /// Experiment directory holding the run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TransportArg {
    Inprocess,
    Tcp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate every client, cross-test, swap and domain-shift dataset.
    Gen,
    /// Train local baselines.
    TrainLocal {
        /// Only this client.
        #[arg(long)]
        client: Option<String>,
    },
    /// Run the federation.
    Fed {
        /// Run each client as its own process over TCP.
        #[arg(long)]
        spawn_clients: bool,
    },
    /// Score models and print the metrics table.
    Eval {
        /// Score this checkpoint instead of the experiment's models.
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
        /// Dataset directory for a single evaluation.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, requires = "data")]
        split: Option<SplitArg>,
        #[arg(long, requires = "data")]
        model: Option<String>,
        #[arg(long, hide = true, requires = "data")]
        echo_truth: bool,
    },
    /// Print the local vs federated comparison.
    Report,
    /// Export the federated model's card.
    Modelcard,
    #[command(hide = true)]
    Client {
        #[arg(long)]
        name: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        connect: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        transport: cli.transport.map(|t| match t {
            TransportArg::Inprocess => Transport::InProcess,
            TransportArg::Tcp => Transport::Tcp,
        }),
        bind: cli.bind,
        out: cli.out,
    };
    let cfg: ExperimentConfig = resolve_config(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Cmd::Gen => {
            let g = cmd_gen(&cfg)?;
            eprintln!("{}", g.dir.display());
        }
        Cmd::TrainLocal { client } => {
            for r in cmd_train_local(&cfg, client.as_deref())? {
                eprintln!("{}", r.dir.display());
            }
        }
        Cmd::Fed { spawn_clients } => {
            let mode = if spawn_clients {
                let exe = std::env::current_exe().map_err(|e| CliError::Other(e.to_string()))?;
                ClientMode::Processes(exe)
            } else {
                ClientMode::Threads
            };
            let f = cmd_fed(&cfg, &mode)?;
            eprintln!("{}", f.dir.display());
        }
        Cmd::Eval {
            checkpoint,
            data,
            split,
            model,
            echo_truth,
        } => {
            let target = match data {
                None => EvalTarget::Experiment,
                Some(data) => EvalTarget::Single {
                    checkpoint,
                    data,
                    split: split.map(|s| match s {
                        SplitArg::Train => Split::Train,
                        SplitArg::Val => Split::Val,
                        SplitArg::Test => Split::Test,
                    }),
                    model,
                    echo_truth,
                },
            };
            print!("{}", cmd_eval(&cfg, &target)?.table);
        }
        Cmd::Report => print!("{}", cmd_report(&cfg)?.markdown),
        Cmd::Modelcard => {
            let c = cmd_modelcard(&cfg)?;
            eprintln!("{}", c.dir.join("modelcard.json").display());
        }
        Cmd::Client { name, data, connect } => run_spawned_client(&cfg, &name, &data, &connect)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
