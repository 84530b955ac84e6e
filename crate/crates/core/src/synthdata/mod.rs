//! Synthetic "cabin / windshield" detection corpus.
//!
//! Every image holds one cabin body (a filled blue or red rectangle) on a
//! noisy background, optionally carrying a windshield (an inner rectangle in
//! the top third of the body, colored by type). Class 1 means a windshield is
//! present, class 0 means none. Clients see disjoint body-color × windshield
//! combinations, which is what makes their data non-IID.

mod partition;
mod render;
mod yolo;

pub use partition::{
    build_partitions, build_partitions_with, split_counts, ClientDataset, ClientSpec, PartitionSpec, Partitions,
    SplitFractions,
};
pub use render::{generate, Background, SceneSpec};
pub use yolo::{
    format_label_line, parse_label_line, read_manifest, read_ppm, read_yolo, write_ppm, write_yolo, Dataset,
    DatasetRecord, Manifest, ManifestEntry, Split, SplitCounts, MANIFEST_SCHEMA,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid partition spec: {0}")]
    SpecInvalid(String),
    #[error("io failure on {path}: {message}")]
    IoFailure { path: String, message: String },
    #[error("{file}:{line}: malformed label line: {reason}")]
    MalformedLabelLine { file: String, line: usize, reason: String },
    #[error("malformed image {path}: {reason}")]
    MalformedImage { path: String, reason: String },
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// YOLO-normalized box: center and size as fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { class_id, cx, cy, w, h }
    }

    /// Corners `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn from_corners(class_id: u32, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(class_id, (x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Positive size and fully inside the unit square (with rounding slack).
    pub fn is_valid(&self) -> bool {
        const EPS: f64 = 1e-9;
        let (x0, y0, x1, y1) = self.corners();
        self.w > 0.0
            && self.h > 0.0
            && self.w <= 1.0
            && self.h <= 1.0
            && x0 >= -EPS
            && y0 >= -EPS
            && x1 <= 1.0 + EPS
            && y1 <= 1.0 + EPS
    }

    /// Grid cell `(row, col)` holding the center on an `s × s` grid.
    pub fn cell(&self, s: usize) -> (usize, usize) {
        let idx = |v: f64| ((v * s as f64).floor().max(0.0) as usize).min(s - 1);
        (idx(self.cy), idx(self.cx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyColor {
    Blue,
    Red,
}

impl BodyColor {
    pub const ALL: [BodyColor; 2] = [BodyColor::Blue, BodyColor::Red];

    pub fn rgb(self) -> [f64; 3] {
        match self {
            BodyColor::Blue => [0.1, 0.2, 0.8],
            BodyColor::Red => [0.8, 0.15, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Windshield {
    #[serde(rename = "none")]
    None,
    A,
    B,
    C,
    D,
}

impl Windshield {
    pub const TYPES: [Windshield; 4] = [Windshield::A, Windshield::B, Windshield::C, Windshield::D];

    pub fn rgb(self) -> Option<[f64; 3]> {
        match self {
            Windshield::None => None,
            Windshield::A => Some([0.9, 0.9, 0.3]),
            Windshield::B => Some([0.3, 0.9, 0.9]),
            Windshield::C => Some([0.9, 0.5, 0.9]),
            Windshield::D => Some([0.5, 0.9, 0.5]),
        }
    }

    /// Labeling rule: class 1 iff a windshield is rendered.
    pub fn class_id(self) -> u32 {
        match self {
            Windshield::None => 0,
            _ => 1,
        }
    }
}

/// A (body color, windshield type) pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Combo {
    pub body: BodyColor,
    pub windshield: Windshield,
}

impl Combo {
    pub const fn new(body: BodyColor, windshield: Windshield) -> Self {
        Self { body, windshield }
    }
}

impl std::fmt::Display for Combo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}x{:?}", self.body, self.windshield)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub body_color: BodyColor,
    pub windshield: Windshield,
    pub background_id: u32,
}

impl SampleMeta {
    pub fn combo(&self) -> Combo {
        Combo::new(self.body_color, self.windshield)
    }
}

/// Square RGB image, interleaved row-major (`(y * size + x) * 3 + channel`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(size: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(size * size * 3);
        for _ in 0..size * size {
            data.extend_from_slice(&rgb);
        }
        Self { size, data }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.size + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub boxes: Vec<BBox>,
    pub meta: SampleMeta,
}
