use std::fs;
use std::path::{Path, PathBuf};

use fedod::detmetrics::SizeBuckets;
use fedod::fedcore::{FedConfig, Transport};
use fedod::synthdata::PartitionSpec;
use fedod::tinydet::{DetectorConfig, DEFAULT_NMS_IOU, EVAL_CONF_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_SCHEMA: &str = "fedod-config/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Two clients, cabin bodies with and without windshields.
    Cabin2,
    /// Three clients, one error glyph type each.
    Usb3,
}

impl Scenario {
    pub fn preset(self, seed: u64) -> PartitionSpec {
        match self {
            Scenario::Cabin2 => PartitionSpec::cabin2(seed),
            Scenario::Usb3 => PartitionSpec::usb3(seed),
        }
    }

    /// Class names by class id.
    pub fn class_names(self) -> [&'static str; 2] {
        match self {
            Scenario::Cabin2 => ["Cabin_without_windshield", "Cabin_with_windshield"],
            Scenario::Usb3 => ["Board_without_error", "Board_with_error"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Cabin2 => "cabin2",
            Scenario::Usb3 => "usb3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketPreset {
    Coco640,
    AreaNinths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub buckets: BucketPreset,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            conf_threshold: EVAL_CONF_THRESHOLD,
            nms_iou: DEFAULT_NMS_IOU,
            buckets: BucketPreset::Coco640,
        }
    }
}

impl EvalSettings {
    pub fn buckets(&self) -> SizeBuckets {
        match self.buckets {
            BucketPreset::Coco640 => SizeBuckets::coco_640(),
            BucketPreset::AreaNinths => SizeBuckets::area_ninths(),
        }
    }
}

/// One experiment, stored as a single JSON document.
///
/// `seed` is the master seed: after resolution it is copied into the
/// partition and federation seeds, and `federation.local_epochs` into
/// `detector.local_epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub scenario: Scenario,
    pub seed: u64,
    /// Replaces the scenario preset's partition when present.
    pub partition: Option<PartitionSpec>,
    pub detector: DetectorConfig,
    pub federation: FedConfig,
    pub baseline_epochs: usize,
    pub eval: EvalSettings,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            scenario: Scenario::Cabin2,
            seed: 1,
            partition: None,
            detector: DetectorConfig::default(),
            federation: FedConfig::default(),
            baseline_epochs: 150,
            eval: EvalSettings::default(),
            out: PathBuf::from("runs"),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub transport: Option<Transport>,
    pub bind: Option<String>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a config document. Missing fields take their defaults; unknown
    /// fields and type errors are reported with line and column.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.transport {
            self.federation.transport = t;
        }
        if let Some(b) = &o.bind {
            self.federation.bind = b.clone();
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self
    }

    /// Propagates the master seed and epoch count, then validates.
    pub fn resolve(mut self) -> Result<Self> {
        self.federation.seed = self.seed;
        self.detector.local_epochs = self.federation.local_epochs;
        if let Some(p) = &mut self.partition {
            p.seed = self.seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        match &self.partition {
            Some(p) => PartitionSpec {
                seed: self.seed,
                ..p.clone()
            },
            None => self.scenario.preset(self.seed),
        }
    }

    pub fn client_names(&self) -> Vec<String> {
        self.partition_spec().clients.into_iter().map(|c| c.name).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, m: String| Err(CliError::Config(format!("{name}: {m}")));
        if self.schema != CONFIG_SCHEMA {
            return field("schema", format!("expected `{CONFIG_SCHEMA}`, found `{}`", self.schema));
        }
        if let Err(e) = self.detector.validate() {
            return field("detector", e.to_string());
        }
        if let Err(e) = self.federation.validate() {
            return field("federation", e.to_string());
        }
        let spec = self.partition_spec();
        if let Err(e) = spec.validate() {
            return field("partition", e.to_string());
        }
        if spec.image_size != self.detector.image_size {
            return field(
                "detector.image_size",
                format!(
                    "{} differs from the dataset image size {}",
                    self.detector.image_size, spec.image_size
                ),
            );
        }
        if self.detector.num_classes != 2 {
            return field(
                "detector.num_classes",
                format!("{} but the scenarios label 2 classes", self.detector.num_classes),
            );
        }
        if !(0.0..=1.0).contains(&self.eval.conf_threshold) {
            return field(
                "eval.conf_threshold",
                format!("{} outside [0, 1]", self.eval.conf_threshold),
            );
        }
        if !(self.eval.nms_iou > 0.0 && self.eval.nms_iou <= 1.0) {
            return field("eval.nms_iou", format!("{} outside (0, 1]", self.eval.nms_iou));
        }
        if self.out.as_os_str().is_empty() {
            return field("out", "must not be empty".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let c = ExperimentConfig::from_json("{}", "t").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert!(c.resolve().is_ok());
    }

    #[test]
    fn unknown_field_names_line_and_field() {
        let err = ExperimentConfig::from_json("{\n  \"seed\": 3,\n  \"sede\": 4\n}", "cfg.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sede") && msg.contains("line 3"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let mut c = ExperimentConfig::default();
        c.federation.max_rounds = 0;
        let msg = c.resolve().unwrap_err().to_string();
        assert!(msg.contains("federation") && msg.contains("max_rounds"), "{msg}");

        let c = ExperimentConfig::from_json(r#"{"eval": {"nms_iou": 0}}"#, "t").unwrap();
        assert!(c.resolve().unwrap_err().to_string().contains("eval.nms_iou"));
    }

    #[test]
    fn master_seed_reaches_every_stream() {
        let mut c = ExperimentConfig {
            seed: 42,
            partition: Some(PartitionSpec::cabin2(7)),
            ..Default::default()
        };
        c.federation.seed = 9;
        c.federation.local_epochs = 4;
        let r = c.resolve().unwrap();
        assert_eq!(r.federation.seed, 42);
        assert_eq!(r.partition_spec().seed, 42);
        assert_eq!(r.detector.local_epochs, 4);
    }

    #[test]
    fn cli_beats_file_beats_defaults() {
        let file = ExperimentConfig::from_json(
            r#"{"seed": 5, "federation": {"transport": "tcp", "max_rounds": 4}}"#,
            "t",
        )
        .unwrap();
        assert_eq!(file.federation.local_epochs, 15);
        let o = Overrides {
            seed: Some(8),
            transport: Some(Transport::InProcess),
            ..Default::default()
        };
        let c = file.with_overrides(&o).resolve().unwrap();
        assert_eq!(c.seed, 8);
        assert_eq!(c.federation.transport, Transport::InProcess);
        assert_eq!(c.federation.max_rounds, 4);
        assert_eq!(c.out, PathBuf::from("runs"));
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig::default().resolve().unwrap();
        assert_eq!(ExperimentConfig::from_json(&c.to_json(), "t").unwrap(), c);
    }
}
