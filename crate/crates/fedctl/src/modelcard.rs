use std::fs;
use std::path::PathBuf;

use fedod::params::read_fdw;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::eval::{EvalFile, FED_MODEL};
use crate::fed::History;
use crate::layout;

pub const CARD_SCHEMA: &str = "fedod-card/1";

/// JSON schema every card validates against.
pub const CARD_JSON_SCHEMA: &str = include_str!("../schema/modelcard.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub summary: String,
    pub input_size: usize,
    pub grid_size: usize,
    pub num_parameters: usize,
    pub schema_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientProvenance {
    pub id: String,
    pub num_samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Training {
    pub scenario: String,
    pub seed: u64,
    pub aggregation: String,
    pub rounds_used: u32,
    pub max_rounds: u32,
    pub local_epochs: usize,
    pub stop_threshold: f64,
    pub stop_reason: String,
    pub clients: Vec<ClientProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRef {
    pub dataset: String,
    /// Eval file relative to the experiment directory.
    pub report: String,
    pub map50: f64,
    pub ap_5095: f64,
}

/// Machine-readable self-description of a federated model. Holds counts and
/// metrics only, never images or per-sample data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub schema: String,
    pub name: String,
    pub version: String,
    pub task: String,
    pub classes: Vec<String>,
    pub architecture: Architecture,
    pub training: Training,
    pub evaluations: Vec<EvalRef>,
    pub intended_use: String,
    pub limitations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CardOutput {
    pub dir: PathBuf,
    pub card: ModelCard,
}

fn incomplete(m: String) -> CliError {
    CliError::Incomplete(m)
}

/// Describes the newest federated run, referencing the newest eval run's
/// scores of the federated model when there is one.
pub fn cmd_modelcard(cfg: &ExperimentConfig) -> Result<CardOutput> {
    let fed = layout::latest_run(&cfg.out, "fed")
        .ok_or_else(|| incomplete(format!("no federated run under {}", cfg.out.display())))?;
    let final_path = fed.join("final.fdw");
    let hist_path = fed.join("history.json");
    let run_path = fed.join("run.json");
    for p in [&final_path, &hist_path, &run_path] {
        if !p.is_file() {
            return Err(incomplete(format!("missing {}", p.display())));
        }
    }
    let history: History =
        serde_json::from_str(&fs::read_to_string(&hist_path).map_err(|e| CliError::io(&hist_path, e))?)
            .map_err(|e| incomplete(format!("unreadable {}: {e}", hist_path.display())))?;
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&run_path).map_err(|e| CliError::io(&run_path, e))?)
            .map_err(|e| incomplete(format!("unreadable {}: {e}", run_path.display())))?;
    let clients = run["num_samples"]
        .as_object()
        .ok_or_else(|| incomplete(format!("{} lacks num_samples", run_path.display())))?
        .iter()
        .map(|(id, n)| ClientProvenance {
            id: id.clone(),
            num_samples: n.as_u64().unwrap_or(0),
        })
        .collect();
    let weights = read_fdw(&final_path)?;
    cfg.detector.check_params(&weights)?;

    let mut evaluations = Vec::new();
    if let Some(eval_dir) = layout::latest_run(&cfg.out, "eval") {
        let mut names: Vec<String> = fs::read_dir(&eval_dir)
            .map_err(|e| CliError::io(&eval_dir, e))?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter(|n| n.starts_with(&format!("{FED_MODEL}__")) && n.ends_with(".json"))
            .collect();
        names.sort();
        for n in names {
            let path = eval_dir.join(&n);
            let Ok(text) = fs::read_to_string(&path) else { continue };
            let Ok(e) = serde_json::from_str::<EvalFile>(&text) else {
                continue;
            };
            let rel = path.strip_prefix(&cfg.out).unwrap_or(&path);
            evaluations.push(EvalRef {
                dataset: e.dataset,
                report: rel.display().to_string(),
                map50: e.report.map50,
                ap_5095: e.report.ap_5095,
            });
        }
    }

    let det = &cfg.detector;
    let card = ModelCard {
        schema: CARD_SCHEMA.into(),
        name: format!("fedod-{}", cfg.scenario.name()),
        version: env!("CARGO_PKG_VERSION").into(),
        task: "Single-shot detection of objects in top-down RGB images, classifying each by the presence of a distinguishing part.".into(),
        classes: cfg.scenario.class_names().iter().map(|s| s.to_string()).collect(),
        architecture: Architecture {
            summary: format!(
                "conv3x3({}) relu avgpool2, conv3x3({}) relu avgpool2, average pooling to the grid, 1x1 head; {}x{} grid, one box per cell",
                det.conv1_channels, det.conv2_channels, det.grid_s, det.grid_s
            ),
            input_size: det.image_size,
            grid_size: det.grid_s,
            num_parameters: weights.num_values(),
            schema_hash: format!("{:#018x}", weights.schema_hash()),
        },
        training: Training {
            scenario: cfg.scenario.name().into(),
            seed: cfg.seed,
            aggregation: "sample-weighted federated averaging".into(),
            rounds_used: history.rounds_used,
            max_rounds: history.max_rounds,
            local_epochs: history.local_epochs,
            stop_threshold: history.stop_threshold,
            stop_reason: serde_json::to_value(history.stop_reason).unwrap().as_str().unwrap().into(),
            clients,
        },
        evaluations,
        intended_use: "Research and teaching demonstrations of federated training for visual quality inspection on synthetic desk-scale data.".into(),
        limitations: vec![
            format!("Trained on synthetic {}x{} images only; not validated on photographs.", det.image_size, det.image_size),
            "One object per grid cell; crowded scenes lose detections.".into(),
            "Class names must be aligned across clients before training; no automatic label alignment.".into(),
        ],
    };
    let dir = layout::create_run_dir(&cfg.out, "modelcard")?;
    layout::write_json(&dir.join("modelcard.json"), &card)?;
    Ok(CardOutput { dir, card })
}
