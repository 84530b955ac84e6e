use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use fedod::fedcore::client_seed;
use fedod::params::write_fdw;
use fedod::tinydet::{init_params, train_local_with, TrainStats};
use fedod::{Execution, Rng};
use log::info;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::{latest_gen, layout, load_client};

#[derive(Debug, Clone)]
pub struct LocalOutput {
    pub dir: PathBuf,
    pub client: String,
    pub stats: TrainStats,
}

/// Trains a local baseline for `client`, or for every client when `None`,
/// for `baseline_epochs` epochs on the client's training split. Baselines
/// start from the same initialization as the federation; the shuffling
/// stream is the client's federation training seed.
pub fn cmd_train_local(cfg: &ExperimentConfig, client: Option<&str>) -> Result<Vec<LocalOutput>> {
    let names = cfg.client_names();
    let chosen: Vec<String> = match client {
        Some(c) if names.iter().any(|n| n == c) => vec![c.to_string()],
        Some(c) => {
            return Err(CliError::Config(format!(
                "unknown client `{c}`; expected one of {names:?}"
            )))
        }
        None => names,
    };
    let gen = latest_gen(cfg)?;
    let init = init_params(&cfg.detector, &mut Rng::new(cfg.seed))?;
    let mut out = Vec::with_capacity(chosen.len());
    for name in chosen {
        let data = load_client(&gen, &name)?;
        if data.train.is_empty() {
            return Err(CliError::Dataset(format!("client {name} has an empty training split")));
        }
        let seed = client_seed(cfg.seed, &name);
        let (weights, stats) = train_local_with(
            &init,
            &data.train,
            &cfg.detector,
            cfg.baseline_epochs,
            &mut Rng::new(seed),
            Execution::default(),
        )?;
        let dir = layout::create_run_dir(&cfg.out, &layout::local_kind(&name))?;
        write_fdw(dir.join("model.fdw"), &weights)?;
        let sp = dir.join("train_stats.jsonl");
        let f = File::create(&sp).map_err(|e| CliError::io(&sp, e))?;
        stats.write_jsonl(BufWriter::new(f)).map_err(|e| CliError::io(&sp, e))?;
        layout::write_json(
            &dir.join("run.json"),
            &json!({
                "client": name,
                "seed": cfg.seed,
                "train_seed": seed,
                "epochs": cfg.baseline_epochs,
                "num_train": data.train.len(),
                "dataset": gen.join("data").join(&name),
                "first_epoch_loss": stats.epoch_losses.first(),
                "last_epoch_loss": stats.epoch_losses.last(),
            }),
        )?;
        info!(
            "trained {name} for {} epochs into {}",
            cfg.baseline_epochs,
            dir.display()
        );
        out.push(LocalOutput {
            dir,
            client: name,
            stats,
        });
    }
    Ok(out)
}
