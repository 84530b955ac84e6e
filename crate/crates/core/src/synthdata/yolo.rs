//! Dataset directories on disk.
//!
//! ```text
//! <dir>/images/00000.ppm   P6, 8-bit
//! <dir>/labels/00000.txt   one "class_id cx cy w h" line per box
//! <dir>/manifest.json      split membership, meta fields, spec echo, seed
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BBox, BodyColor, DataError, Image, Result, Sample, SampleMeta, Windshield};

pub const MANIFEST_SCHEMA: &str = "fedod-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub split: Split,
    pub sample: Sample,
}

/// A named set of samples with split membership, as stored in one directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    /// Free-form echo of the generating configuration.
    pub spec: serde_json::Value,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.sample.clone())
            .collect()
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.records.iter().map(|r| r.sample.clone()).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub body_color: BodyColor,
    pub windshield: Windshield,
    pub background_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub name: String,
    pub seed: u64,
    pub image_size: usize,
    pub counts: SplitCounts,
    pub spec: serde_json::Value,
    pub entries: Vec<ManifestEntry>,
}

fn io_err(path: &Path, e: impl ToString) -> DataError {
    DataError::IoFailure {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn format_label_line(b: &BBox) -> String {
    format!("{} {:.6} {:.6} {:.6} {:.6}", b.class_id, b.cx, b.cy, b.w, b.h)
}

pub fn parse_label_line(text: &str, file: &str, line: usize) -> Result<BBox> {
    let fail = |reason: String| DataError::MalformedLabelLine {
        file: file.to_owned(),
        line,
        reason,
    };
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(fail(format!("expected 5 fields, found {}", fields.len())));
    }
    let class_id: u32 = fields[0]
        .parse()
        .map_err(|_| fail(format!("class id `{}` is not a non-negative integer", fields[0])))?;
    let mut v = [0.0f64; 4];
    for (slot, (name, raw)) in v.iter_mut().zip(["cx", "cy", "w", "h"].iter().zip(&fields[1..])) {
        *slot = raw
            .parse()
            .map_err(|_| fail(format!("{name} `{raw}` is not a number")))?;
        if !slot.is_finite() {
            return Err(fail(format!("{name} `{raw}` is not finite")));
        }
    }
    let [cx, cy, w, h] = v;
    if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
        return Err(fail(format!("center ({cx}, {cy}) outside [0,1]")));
    }
    if !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
        return Err(fail(format!("size ({w}, {h}) outside (0,1]")));
    }
    Ok(BBox::new(class_id, cx, cy, w, h))
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.size, img.size).into_bytes();
    bytes.extend(img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let bad = |reason: &str| DataError::MalformedImage {
        path: path.display().to_string(),
        reason: reason.to_owned(),
    };
    // header: magic, width, height, maxval, separated by whitespace or comments
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    pos += 1; // single whitespace byte before the raster
    if tokens[0] != "P6" {
        return Err(bad("not a P6 pixmap"));
    }
    let dims: Vec<usize> = tokens[1..]
        .iter()
        .map(|t| t.parse().map_err(|_| bad("non-numeric header field")))
        .collect::<Result<_>>()?;
    let (w, h, maxval) = (dims[0], dims[1], dims[2]);
    if w != h || w == 0 {
        return Err(bad("image must be square and non-empty"));
    }
    if maxval != 255 {
        return Err(bad("only 8-bit (maxval 255) pixmaps are supported"));
    }
    let raster = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
    if raster.len() != w * h * 3 {
        return Err(bad("raster length does not match dimensions"));
    }
    Ok(Image {
        size: w,
        data: raster.iter().map(|&b| b as f32 / 255.0).collect(),
    })
}

fn file_stem(i: usize) -> String {
    format!("{i:05}")
}

/// Writes images, labels and the manifest into `dir` (created if missing).
pub fn write_yolo(dir: &Path, ds: &Dataset) -> Result<()> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    fs::create_dir_all(&images).map_err(|e| io_err(&images, e))?;
    fs::create_dir_all(&labels).map_err(|e| io_err(&labels, e))?;
    let mut entries = Vec::with_capacity(ds.records.len());
    let mut image_size = 0;
    for (i, rec) in ds.records.iter().enumerate() {
        let stem = file_stem(i);
        write_ppm(&images.join(format!("{stem}.ppm")), &rec.sample.image)?;
        let mut text = String::new();
        for b in &rec.sample.boxes {
            text.push_str(&format_label_line(b));
            text.push('\n');
        }
        let lp = labels.join(format!("{stem}.txt"));
        fs::write(&lp, text).map_err(|e| io_err(&lp, e))?;
        image_size = rec.sample.image.size;
        entries.push(ManifestEntry {
            file: stem,
            split: rec.split,
            body_color: rec.sample.meta.body_color,
            windshield: rec.sample.meta.windshield,
            background_id: rec.sample.meta.background_id,
        });
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        name: ds.name.clone(),
        seed: ds.seed,
        image_size,
        counts: SplitCounts {
            train: ds.count(Split::Train),
            val: ds.count(Split::Val),
            test: ds.count(Split::Test),
        },
        spec: ds.spec.clone(),
        entries,
    };
    let mp = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&mp, json).map_err(|e| io_err(&mp, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mp = dir.join("manifest.json");
    let text = fs::read_to_string(&mp).map_err(|e| io_err(&mp, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::MalformedManifest {
        path: mp.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn read_yolo(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(DataError::MalformedManifest {
            path: dir.join("manifest.json").display().to_string(),
            reason: format!("unsupported schema `{}`", manifest.schema),
        });
    }
    let mut records = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let image = read_ppm(&dir.join("images").join(format!("{}.ppm", entry.file)))?;
        let lp: PathBuf = dir.join("labels").join(format!("{}.txt", entry.file));
        let text = fs::read_to_string(&lp).map_err(|e| io_err(&lp, e))?;
        let boxes = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| parse_label_line(l, &lp.display().to_string(), i + 1))
            .collect::<Result<Vec<_>>>()?;
        records.push(DatasetRecord {
            split: entry.split,
            sample: Sample {
                image,
                boxes,
                meta: SampleMeta {
                    body_color: entry.body_color,
                    windshield: entry.windshield,
                    background_id: entry.background_id,
                },
            },
        });
    }
    Ok(Dataset {
        name: manifest.name,
        seed: manifest.seed,
        spec: manifest.spec,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Rng;
    use crate::synthdata::{generate, SceneSpec};

    #[test]
    fn label_line_format() {
        assert_eq!(
            format_label_line(&BBox::new(1, 0.5, 0.5, 0.25, 0.25)),
            "1 0.500000 0.500000 0.250000 0.250000"
        );
    }

    #[test]
    fn label_line_errors() {
        let err = parse_label_line("1 0.5 0.5 0.25", "x.txt", 3).unwrap_err();
        assert!(matches!(err, DataError::MalformedLabelLine { line: 3, .. }));
        assert!(parse_label_line("1 1.5 0.5 0.2 0.2", "x", 1).is_err());
        assert!(parse_label_line("1 0.5 0.5 0.0 0.2", "x", 1).is_err());
        assert!(parse_label_line("-1 0.5 0.5 0.2 0.2", "x", 1).is_err());
        assert!(parse_label_line("a 0.5 0.5 0.2 0.2", "x", 1).is_err());
        assert!(parse_label_line("0 nan 0.5 0.2 0.2", "x", 1).is_err());
        assert_eq!(
            parse_label_line("0 0.1 0.2 0.3 0.4", "x", 1).unwrap(),
            BBox::new(0, 0.1, 0.2, 0.3, 0.4)
        );
    }

    fn small_dataset(n: usize) -> Dataset {
        let combos = [
            (BodyColor::Blue, Windshield::A),
            (BodyColor::Red, Windshield::None),
            (BodyColor::Red, Windshield::D),
        ];
        let records = (0..n)
            .map(|i| {
                let (b, w) = combos[i % 3];
                DatasetRecord {
                    split: [Split::Train, Split::Val, Split::Test][i % 3],
                    sample: generate(&SceneSpec::standard(32, b, w), &mut Rng::new(i as u64)),
                }
            })
            .collect();
        Dataset {
            name: "toy".into(),
            seed: 9,
            spec: serde_json::json!({"note": "unit test"}),
            records,
        }
    }

    #[test]
    fn round_trip_thirty_samples() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(30);
        write_yolo(dir.path(), &ds).unwrap();
        let back = read_yolo(dir.path()).unwrap();
        assert_eq!(back.records.len(), 30);
        for (a, b) in ds.records.iter().zip(&back.records) {
            assert_eq!(a.split, b.split);
            assert_eq!(a.sample.meta, b.sample.meta);
            assert_eq!(a.sample.boxes.len(), b.sample.boxes.len());
            for (x, y) in a.sample.boxes.iter().zip(&b.sample.boxes) {
                assert_eq!(x.class_id, y.class_id);
                for (u, v) in [(x.cx, y.cx), (x.cy, y.cy), (x.w, y.w), (x.h, y.h)] {
                    assert!((u - v).abs() <= 1e-6);
                }
            }
            for (u, v) in a.sample.image.data.iter().zip(&b.sample.image.data) {
                assert!((u - v).abs() <= 1.0 / 255.0);
            }
        }
        assert_eq!(back.seed, 9);
        assert_eq!(back.count(Split::Train), 10);
    }

    #[test]
    fn malformed_label_surfaces_on_read() {
        let dir = tempfile::tempdir().unwrap();
        write_yolo(dir.path(), &small_dataset(3)).unwrap();
        fs::write(dir.path().join("labels/00001.txt"), "1 0.5 0.5\n").unwrap();
        assert!(matches!(
            read_yolo(dir.path()),
            Err(DataError::MalformedLabelLine { .. })
        ));
    }

    #[test]
    fn missing_directory_is_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_yolo(&dir.path().join("absent")),
            Err(DataError::IoFailure { .. })
        ));
    }

    #[test]
    fn ppm_header_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        let mut bytes = b"P6\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend([255u8, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30]);
        fs::write(&p, bytes).unwrap();
        let img = read_ppm(&p).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(1, 1), [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    }
}
