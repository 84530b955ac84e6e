use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use fedod::synthdata::{build_partitions, write_yolo, BodyColor, Dataset, DatasetRecord, Sample, Split};
use log::info;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::layout;

#[derive(Debug, Clone)]
pub struct GenOutput {
    pub dir: PathBuf,
    /// Samples per written set.
    pub counts: BTreeMap<String, usize>,
}

fn write_set(
    data: &Path,
    name: &str,
    cfg: &ExperimentConfig,
    echo: &serde_json::Value,
    records: Vec<DatasetRecord>,
) -> Result<usize> {
    let n = records.len();
    let ds = Dataset {
        name: name.to_string(),
        seed: cfg.seed,
        spec: echo.clone(),
        records,
    };
    write_yolo(&data.join(name), &ds)?;
    Ok(n)
}

fn as_test(samples: Vec<Sample>) -> Vec<DatasetRecord> {
    samples
        .into_iter()
        .map(|sample| DatasetRecord {
            split: Split::Test,
            sample,
        })
        .collect()
}

/// Generates every dataset of the experiment into a new `gen` run: one
/// directory per client (train/val/test), `cross_test`, `domain_shift`, and
/// `swap_<client>`, the cross-test images that share the client's body
/// colors but pair them with windshields it never saw.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<GenOutput> {
    let spec = cfg.partition_spec();
    let parts = build_partitions(&spec)?;
    let dir = layout::create_run_dir(&cfg.out, "gen")?;
    layout::write_text(&dir.join("config.json"), &cfg.to_json())?;
    let echo = serde_json::json!({ "config": cfg, "partition": spec });
    let data = dir.join("data");
    let mut counts = BTreeMap::new();

    for c in parts.clients {
        let records = [(Split::Train, c.train), (Split::Val, c.val), (Split::Test, c.test)]
            .into_iter()
            .flat_map(|(split, s)| s.into_iter().map(move |sample| DatasetRecord { split, sample }))
            .collect();
        counts.insert(c.name.clone(), write_set(&data, &c.name, cfg, &echo, records)?);
    }
    if !parts.cross_test.is_empty() {
        for client in &spec.clients {
            let bodies: BTreeSet<BodyColor> = client.combos.iter().map(|k| k.body).collect();
            let swap: Vec<Sample> = parts
                .cross_test
                .iter()
                .filter(|s| bodies.contains(&s.meta.body_color))
                .cloned()
                .collect();
            if !swap.is_empty() {
                let name = layout::swap_set(&client.name);
                counts.insert(name.clone(), write_set(&data, &name, cfg, &echo, as_test(swap))?);
            }
        }
        counts.insert(
            "cross_test".into(),
            write_set(&data, "cross_test", cfg, &echo, as_test(parts.cross_test))?,
        );
    }
    counts.insert(
        "domain_shift".into(),
        write_set(&data, "domain_shift", cfg, &echo, as_test(parts.domain_shift))?,
    );
    info!("generated {:?} into {}", counts, dir.display());
    Ok(GenOutput { dir, counts })
}
