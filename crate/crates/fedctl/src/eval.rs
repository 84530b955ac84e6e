use std::path::{Path, PathBuf};

use fedod::detmetrics::{evaluate_with, render_table, EvalReport, SizeBuckets, TableRow};
use fedod::params::read_fdw;
use fedod::synthdata::{read_yolo, Sample, Split};
use fedod::tinydet::{infer_batch, Detection};
use fedod::{Execution, ParamSet};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::{latest_gen, layout, load_set};

pub const EVAL_SCHEMA: &str = "fedod-eval/1";

/// Model name of the federated global in eval files.
pub const FED_MODEL: &str = "fed";

/// Contents of one `<model>__<set>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub schema: String,
    pub model: String,
    pub dataset: String,
    pub checkpoint: Option<String>,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub buckets: SizeBuckets,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub dir: PathBuf,
    pub files: Vec<EvalFile>,
    /// The rendered table, also written to `table.txt`.
    pub table: String,
}

/// What to score.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalTarget {
    /// Every available model of the experiment on every evaluation set.
    Experiment,
    /// One checkpoint on one dataset directory.
    Single {
        checkpoint: Option<PathBuf>,
        data: PathBuf,
        split: Option<Split>,
        model: Option<String>,
        /// Score the ground truth itself instead of a checkpoint's output.
        echo_truth: bool,
    },
}

enum Predictor {
    Weights(ParamSet),
    EchoTruth,
}

fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<ParamSet> {
    if !path.is_file() {
        return Err(CliError::Other(format!("checkpoint {} not found", path.display())));
    }
    let p = read_fdw(path)?;
    cfg.detector
        .check_params(&p)
        .map_err(|e| CliError::Schema(format!("{} does not match the detector config: {e}", path.display())))?;
    Ok(p)
}

fn score(cfg: &ExperimentConfig, predictor: &Predictor, samples: &[Sample]) -> Result<EvalReport> {
    let exec = Execution::default();
    let truths: Vec<_> = samples.iter().map(|s| s.boxes.clone()).collect();
    let dets: Vec<Vec<Detection>> = match predictor {
        Predictor::Weights(p) => {
            let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
            infer_batch(
                p,
                &images,
                &cfg.detector,
                cfg.eval.conf_threshold,
                cfg.eval.nms_iou,
                exec,
            )?
        }
        Predictor::EchoTruth => truths
            .iter()
            .map(|t| t.iter().map(|&bbox| Detection { bbox, confidence: 1.0 }).collect())
            .collect(),
    };
    Ok(evaluate_with(
        &dets,
        &truths,
        cfg.detector.num_classes,
        &cfg.eval.buckets(),
        exec,
    )?)
}

fn eval_file(
    cfg: &ExperimentConfig,
    model: &str,
    set: &str,
    checkpoint: Option<&Path>,
    report: EvalReport,
) -> EvalFile {
    EvalFile {
        schema: EVAL_SCHEMA.into(),
        model: model.into(),
        dataset: set.into(),
        checkpoint: checkpoint.map(|p| p.display().to_string()),
        conf_threshold: cfg.eval.conf_threshold,
        nms_iou: cfg.eval.nms_iou,
        buckets: cfg.eval.buckets(),
        report,
    }
}

/// Newest checkpoint of every model: each local baseline, then the
/// federated final global.
pub fn experiment_models(cfg: &ExperimentConfig) -> Vec<(String, PathBuf)> {
    let mut models = Vec::new();
    for c in cfg.client_names() {
        match layout::latest_run(&cfg.out, &layout::local_kind(&c)) {
            Some(d) => models.push((c, d.join("model.fdw"))),
            None => warn!("no local run for {c}; skipping"),
        }
    }
    match layout::latest_run(&cfg.out, "fed") {
        Some(d) => models.push((FED_MODEL.to_string(), d.join("final.fdw"))),
        None => warn!("no federated run; skipping"),
    }
    models
}

/// Evaluation sets in table order: cross_test, the swap sets, domain_shift,
/// then each client's own test split.
fn experiment_sets(cfg: &ExperimentConfig, gen: &Path) -> Result<Vec<(String, Vec<Sample>)>> {
    let clients = cfg.client_names();
    let mut names = vec!["cross_test".to_string()];
    names.extend(clients.iter().map(|c| layout::swap_set(c)));
    names.push("domain_shift".into());
    let mut sets = Vec::new();
    for name in names {
        if gen.join("data").join(&name).is_dir() {
            sets.push((name.clone(), load_set(gen, &name)?.samples()));
        }
    }
    for c in clients {
        sets.push((layout::test_set(&c), load_set(gen, &c)?.split(Split::Test)));
    }
    Ok(sets)
}

pub fn cmd_eval(cfg: &ExperimentConfig, target: &EvalTarget) -> Result<EvalOutput> {
    let mut files = Vec::new();
    match target {
        EvalTarget::Experiment => {
            let gen = latest_gen(cfg)?;
            let models = experiment_models(cfg);
            if models.is_empty() {
                return Err(CliError::Other("no trained models to evaluate".into()));
            }
            let sets = experiment_sets(cfg, &gen)?;
            for (model, path) in &models {
                let predictor = Predictor::Weights(load_checkpoint(cfg, path)?);
                for (set, samples) in &sets {
                    let report = score(cfg, &predictor, samples)?;
                    files.push(eval_file(cfg, model, set, Some(path), report));
                }
            }
        }
        EvalTarget::Single {
            checkpoint,
            data,
            split,
            model,
            echo_truth,
        } => {
            let ds = read_yolo(data)?;
            let samples = match split {
                Some(s) => ds.split(*s),
                None => ds.samples(),
            };
            let predictor = match (echo_truth, checkpoint) {
                (true, _) => Predictor::EchoTruth,
                (false, Some(p)) => Predictor::Weights(load_checkpoint(cfg, p)?),
                (false, None) => return Err(CliError::Config("--checkpoint is required with --data".into())),
            };
            let model = match (model, echo_truth) {
                (Some(m), _) => m.clone(),
                (None, true) => "oracle".into(),
                (None, false) => checkpoint
                    .as_ref()
                    .and_then(|p| p.file_stem())
                    .map_or("model".into(), |s| s.to_string_lossy().into_owned()),
            };
            let set = match split {
                Some(s) => format!("{}_{}", ds.name, serde_json::to_value(s).unwrap().as_str().unwrap()),
                None => ds.name.clone(),
            };
            let report = score(cfg, &predictor, &samples)?;
            let cp = if *echo_truth { None } else { checkpoint.as_deref() };
            files.push(eval_file(cfg, &model, &set, cp, report));
        }
    }
    let dir = layout::create_run_dir(&cfg.out, "eval")?;
    for f in &files {
        layout::write_json(&dir.join(layout::eval_file(&f.model, &f.dataset)), f)?;
    }
    let rows: Vec<TableRow> = files
        .iter()
        .map(|f| TableRow {
            model: &f.model,
            dataset: &f.dataset,
            report: &f.report,
        })
        .collect();
    let table = render_table(&rows);
    layout::write_text(&dir.join("table.txt"), &table)?;
    info!("wrote {} evaluations into {}", files.len(), dir.display());
    Ok(EvalOutput { dir, files, table })
}
