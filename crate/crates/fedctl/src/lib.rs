//! Experiment runner for desk-scale federated detection: dataset
//! generation, local baselines, federated training, evaluation tables,
//! comparison reports and model cards.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid config, 3 missing or
//! corrupt dataset, 4 protocol or transport failure, 5 checkpoint schema
//! mismatch, 6 report inputs missing, 7 experiment incomplete for a model
//! card.

pub mod config;
pub mod error;
pub mod eval;
pub mod fed;
pub mod gen;
pub mod layout;
pub mod modelcard;
pub mod report;
pub mod train;

use std::path::{Path, PathBuf};

use fedod::fedcore::ClientData;
use fedod::synthdata::{read_yolo, Dataset, Split};

pub use config::{ExperimentConfig, Overrides, Scenario};
pub use error::{exit, CliError, Result};

/// Loads the config for a command: `file` if given, else the config echoed
/// by the newest `gen` run under the effective output directory, else the
/// defaults; command-line overrides win over all of them.
pub fn resolve_config(file: Option<&Path>, o: &Overrides) -> Result<ExperimentConfig> {
    let base = match file {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let out = o.out.clone().unwrap_or_else(|| ExperimentConfig::default().out);
            match layout::latest_run(&out, "gen").map(|d| d.join("config.json")) {
                Some(p) if p.is_file() => {
                    log::info!("using config {}", p.display());
                    ExperimentConfig::load(&p)?
                }
                _ => ExperimentConfig::default(),
            }
        }
    };
    base.with_overrides(o).resolve()
}

/// The newest generated dataset directory.
pub fn latest_gen(cfg: &ExperimentConfig) -> Result<PathBuf> {
    layout::latest_run(&cfg.out, "gen").ok_or_else(|| {
        CliError::Dataset(format!(
            "no gen run under {}; run `fedctl gen` first",
            cfg.out.display()
        ))
    })
}

pub fn load_set(gen: &Path, set: &str) -> Result<Dataset> {
    Ok(read_yolo(&gen.join("data").join(set))?)
}

/// A client's training and test splits.
pub fn load_client(gen: &Path, name: &str) -> Result<ClientData> {
    let ds = load_set(gen, name)?;
    Ok(ClientData {
        client_id: name.to_string(),
        train: ds.split(Split::Train),
        test: ds.split(Split::Test),
    })
}
