//! Run directories.
//!
//! Every command writes a fresh `<kind>-<UTC timestamp>` directory under the
//! experiment root and never touches earlier ones. Consumers read the newest
//! directory of the kind they need; names sort chronologically.
//!
//! ```text
//! <out>/gen-<ts>/config.json, data/<set>/
//! <out>/local-<client>-<ts>/model.fdw, train_stats.jsonl, run.json
//! <out>/fed-<ts>/round_NN.fdw, final.fdw, history.json, run.json, config.json
//! <out>/eval-<ts>/<model>__<set>.json, table.txt
//! <out>/report-<ts>/report.md
//! <out>/modelcard-<ts>/modelcard.json
//! ```

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string()
}

/// Creates `<out>/<kind>-<ts>`, appending `-NN` if that name is taken.
pub fn create_run_dir(out: &Path, kind: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let base = format!("{kind}-{}", timestamp());
    for n in 0..100 {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n:02}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    Err(CliError::Other(format!("no free run directory name for {base}")))
}

/// Newest `<kind>-<ts>` directory under `out`, if any.
pub fn latest_run(out: &Path, kind: &str) -> Option<PathBuf> {
    let prefix = format!("{kind}-");
    fs::read_dir(out)
        .ok()?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|name| {
            name.strip_prefix(&prefix)
                .is_some_and(|rest| rest.starts_with(|c: char| c.is_ascii_digit()))
        })
        .max()
        .map(|name| out.join(name))
}

pub fn local_kind(client: &str) -> String {
    format!("local-{client}")
}

pub fn round_file(round: usize) -> String {
    format!("round_{round:02}.fdw")
}

pub fn eval_file(model: &str, set: &str) -> String {
    format!("{model}__{set}.json")
}

pub fn swap_set(client: &str) -> String {
    format!("swap_{client}")
}

pub fn test_set(client: &str) -> String {
    format!("{client}_test")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}
