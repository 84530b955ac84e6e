use std::fs;
use std::path::{Path, PathBuf};

use fedod::detmetrics::format_metric;

use crate::config::{ExperimentConfig, Scenario};
use crate::error::{CliError, Result};
use crate::eval::{EvalFile, FED_MODEL};
use crate::fed::History;
use crate::layout;

pub const REPORT_HEADER: [&str; 9] = [
    "Model",
    "Test Dataset",
    "mAP",
    "AP@[.50:.05:.95]",
    "APm",
    "APl",
    "ARm",
    "ARl",
    "Published (mAP / AP)",
];

/// Published full-scale results (mAP@0.5, AP@[.50:.05:.95]) for the cabin
/// scenario, quoted next to the desk-scale numbers for context.
const CROSS_REFERENCE: [(&str, f64, f64); 3] =
    [("client1", 0.42, 0.35), ("client2", 0.49, 0.42), (FED_MODEL, 1.0, 0.93)];
type Published = (f64, f64);

/// Same, per swap set: (client, local result, federated result).
const SWAP_REFERENCE: [(&str, Published, Published); 2] = [
    ("client1", (0.83, 0.70), (1.0, 0.96)),
    ("client2", (0.97, 0.83), (1.0, 0.91)),
];

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub dir: PathBuf,
    pub markdown: String,
}

fn read_eval(dir: &Path, model: &str, set: &str) -> Result<EvalFile> {
    let path = dir.join(layout::eval_file(model, set));
    let text = fs::read_to_string(&path).map_err(|_| CliError::ReportInput(format!("missing {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::ReportInput(format!("unreadable {}: {e}", path.display())))
}

fn reference(r: Option<(f64, f64)>) -> String {
    match r {
        Some((m, a)) => format!("{m:.2} / {a:.2}"),
        None => "n/a".into(),
    }
}

fn row(e: &EvalFile, published: Option<(f64, f64)>) -> [String; 9] {
    let r = &e.report;
    [
        e.model.clone(),
        e.dataset.clone(),
        format_metric(Some(r.map50)),
        format_metric(Some(r.ap_5095)),
        format_metric(r.ap_medium),
        format_metric(r.ap_large),
        format_metric(r.ar_medium),
        format_metric(r.ar_large),
        reference(published),
    ]
}

/// GitHub-flavoured markdown table with [`REPORT_HEADER`] columns.
pub fn markdown_table(rows: &[[String; 9]]) -> String {
    let mut out = format!("| {} |\n", REPORT_HEADER.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(REPORT_HEADER.len())));
    for r in rows {
        out.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    out
}

fn model_label(model: &str) -> String {
    if model == FED_MODEL {
        "federated global".into()
    } else {
        format!("{model} (local)")
    }
}

/// Compares the local baselines with the federated global from the newest
/// eval run: all models on `cross_test`, then each local model against the
/// global on its swap set, then (when evaluated) the domain-shift set.
pub fn render_report(cfg: &ExperimentConfig, eval_dir: &Path, history: Option<&History>) -> Result<String> {
    let clients = cfg.client_names();
    let cabin = cfg.scenario == Scenario::Cabin2 && cfg.partition.is_none();
    let published = |table: &[(&str, f64, f64)], model: &str| {
        cabin
            .then(|| table.iter().find(|r| r.0 == model).map(|r| (r.1, r.2)))
            .flatten()
    };
    let mut models: Vec<String> = clients.clone();
    models.push(FED_MODEL.into());

    let mut cross = Vec::new();
    for m in &models {
        let e = read_eval(eval_dir, m, "cross_test")?;
        cross.push(row(&e, published(&CROSS_REFERENCE, m)));
    }
    let mut swap = Vec::new();
    for c in &clients {
        let set = layout::swap_set(c);
        let refs = cabin.then(|| SWAP_REFERENCE.iter().find(|r| r.0 == c)).flatten();
        swap.push(row(&read_eval(eval_dir, c, &set)?, refs.map(|r| r.1)));
        swap.push(row(&read_eval(eval_dir, FED_MODEL, &set)?, refs.map(|r| r.2)));
    }
    let shift: Vec<[String; 9]> = models
        .iter()
        .filter_map(|m| read_eval(eval_dir, m, "domain_shift").ok())
        .map(|e| row(&e, None))
        .collect();

    let mut md = format!("# Local baselines vs federated global ({})\n\n", cfg.scenario.name());
    md.push_str(&format!(
        "Seed {}. Models: {}. Scores from `{}`.\n\n",
        cfg.seed,
        models.iter().map(|m| model_label(m)).collect::<Vec<_>>().join(", "),
        eval_dir
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned())
    ));
    md.push_str("## Unseen combinations\n\nEvery model on the cross-combination test set.\n\n");
    md.push_str(&markdown_table(&cross));
    md.push_str("\n## Swapped combinations\n\nEach local model and the federated global on the client's swap set: its own body colors with windshield types it never saw.\n\n");
    md.push_str(&markdown_table(&swap));
    if !shift.is_empty() {
        md.push_str("\n## Domain shift\n\nAltered backgrounds and lighting.\n\n");
        md.push_str(&markdown_table(&shift));
    }
    let fed_budget = cfg.federation.max_rounds as usize * cfg.federation.local_epochs;
    md.push_str(&format!(
        "\n## Notes\n\n- `__` marks a size bucket with no ground truth.\n- Local baselines trained {} epochs; the federation allows up to {} rounds x {} local epochs = {} epochs per client",
        cfg.baseline_epochs, cfg.federation.max_rounds, cfg.federation.local_epochs, fed_budget
    ));
    match history {
        Some(h) => md.push_str(&format!(
            " and used {} rounds ({}).\n",
            h.rounds_used,
            serde_json::to_value(h.stop_reason).unwrap().as_str().unwrap()
        )),
        None => md.push_str(".\n"),
    }
    if cabin {
        md.push_str("- The published column holds full-scale results on photographic data, for context only; the desk-scale numbers are not expected to match them.\n");
    }
    Ok(md)
}

pub fn cmd_report(cfg: &ExperimentConfig) -> Result<ReportOutput> {
    let eval_dir = layout::latest_run(&cfg.out, "eval")
        .ok_or_else(|| CliError::ReportInput(format!("missing eval run under {}", cfg.out.display())))?;
    let history = layout::latest_run(&cfg.out, "fed")
        .and_then(|d| fs::read_to_string(d.join("history.json")).ok())
        .and_then(|t| serde_json::from_str::<History>(&t).ok());
    let markdown = render_report(cfg, &eval_dir, history.as_ref())?;
    let dir = layout::create_run_dir(&cfg.out, "report")?;
    layout::write_text(&dir.join("report.md"), &markdown)?;
    Ok(ReportOutput { dir, markdown })
}
