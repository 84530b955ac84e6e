//! A miniature single-shot grid detector.
//!
//! Each cell of a `G×G` grid predicts one box (objectness, sigmoid center
//! offsets, sigmoid width/height) and `K` class logits. There are no anchors;
//! the cell containing a truth box's center is responsible for it.

mod infer;
pub mod layers;
pub mod net;
mod train;

pub use infer::{decode, infer, infer_batch, nms, Detection};
pub use net::{box_targets, Layout};
pub use train::{batch_gradient, train_local, train_local_with, TrainStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{ParamSet, ParamsError, Rng, Tensor};
use crate::synthdata::BBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetError {
    #[error("invalid detector config: {0}")]
    ConfigInvalid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("truth boxes {first} and {second} both have their center in cell ({row}, {col})")]
    MultipleObjectsInCell {
        row: usize,
        col: usize,
        first: usize,
        second: usize,
    },
    #[error("class id {class_id} outside 0..{num_classes}")]
    ClassOutOfRange { class_id: u32, num_classes: usize },
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Params(#[from] ParamsError),
}

pub type Result<T> = std::result::Result<T, DetError>;

/// Confidence cutoff for deployed inference.
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;
/// Confidence cutoff when scoring mAP, low enough to keep the whole ranking.
pub const EVAL_CONF_THRESHOLD: f64 = 0.001;
pub const DEFAULT_NMS_IOU: f64 = 0.45;

pub const CONV1_WEIGHT: &str = "conv1.weight";
pub const CONV1_BIAS: &str = "conv1.bias";
pub const CONV2_WEIGHT: &str = "conv2.weight";
pub const CONV2_BIAS: &str = "conv2.bias";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub image_size: usize,
    pub grid_s: usize,
    pub num_classes: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub lambda_coord: f64,
    pub lambda_noobj: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub momentum: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            grid_s: 4,
            num_classes: 2,
            conv1_channels: 8,
            conv2_channels: 16,
            lambda_coord: 5.0,
            lambda_noobj: 0.5,
            learning_rate: 0.01,
            batch_size: 8,
            local_epochs: 15,
            momentum: 0.9,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DetError::ConfigInvalid(m));
        let counts = [
            ("image_size", self.image_size),
            ("grid_s", self.grid_s),
            ("num_classes", self.num_classes),
            ("conv1_channels", self.conv1_channels),
            ("conv2_channels", self.conv2_channels),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !self.image_size.is_multiple_of(4 * self.grid_s) {
            return bad(format!(
                "image_size {} must be divisible by 4 * grid_s = {}",
                self.image_size,
                4 * self.grid_s
            ));
        }
        if !(self.lambda_coord > 0.0 && self.lambda_noobj > 0.0) {
            return bad("lambda_coord and lambda_noobj must be > 0".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)".into());
        }
        Ok(())
    }

    pub fn head_channels(&self) -> usize {
        5 + self.num_classes
    }

    /// Window of the last pooling stage, mapping `S/4` onto the grid.
    pub fn final_pool(&self) -> usize {
        self.image_size / (4 * self.grid_s)
    }

    /// Parameter schema in order: conv1, conv2, head (weight then bias each).
    pub fn schema(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (c1, c2, k) = (self.conv1_channels, self.conv2_channels, self.head_channels());
        vec![
            (CONV1_WEIGHT, vec![c1, 3, 3, 3]),
            (CONV1_BIAS, vec![c1]),
            (CONV2_WEIGHT, vec![c2, c1, 3, 3]),
            (CONV2_BIAS, vec![c2]),
            (HEAD_WEIGHT, vec![k, c2, 1, 1]),
            (HEAD_BIAS, vec![k]),
        ]
    }

    /// Rejects weights whose schema differs from this configuration's.
    pub fn check_params(&self, p: &ParamSet) -> Result<()> {
        let zero = self.zero_params()?;
        p.check_compatible(&zero).map_err(DetError::from)
    }

    pub fn zero_params(&self) -> Result<ParamSet> {
        let tensors = self
            .schema()
            .into_iter()
            .map(|(name, dims)| Tensor::zeros(name, dims))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(ParamSet::new(tensors)?)
    }
}

/// Glorot-uniform kernels, zero biases. Kernels are drawn in schema order,
/// each value `r * (2u - 1)` with `r = sqrt(6 / (fan_in + fan_out))` and
/// fans counting the receptive field.
pub fn init_params(cfg: &DetectorConfig, rng: &mut Rng) -> Result<ParamSet> {
    cfg.validate()?;
    let mut tensors = Vec::with_capacity(6);
    for (name, dims) in cfg.schema() {
        let n: usize = dims.iter().product();
        let values = if dims.len() == 4 {
            let receptive = dims[2] * dims[3];
            let fan_in = dims[1] * receptive;
            let fan_out = dims[0] * receptive;
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.uniform(-r, r) as f32).collect()
        } else {
            vec![0.0; n]
        };
        tensors.push(Tensor::new(name, dims, values)?);
    }
    Ok(ParamSet::new(tensors)?)
}

/// Raw outputs of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPrediction {
    pub objectness_logit: f64,
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
    pub class_logits: Vec<f64>,
}

/// `grid_s × grid_s` cell predictions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredGrid {
    pub grid_s: usize,
    pub cells: Vec<CellPrediction>,
}

impl PredGrid {
    pub fn cell(&self, row: usize, col: usize) -> &CellPrediction {
        &self.cells[row * self.grid_s + col]
    }

    fn from_planar(cfg: &DetectorConfig, head: &[f32]) -> Self {
        let g = cfg.grid_s;
        let cells = g * g;
        let at = |ch: usize, c: usize| head[ch * cells + c] as f64;
        PredGrid {
            grid_s: g,
            cells: (0..cells)
                .map(|c| CellPrediction {
                    objectness_logit: at(net::OBJ, c),
                    tx: at(net::TX, c),
                    ty: at(net::TY, c),
                    tw: at(net::TW, c),
                    th: at(net::TH, c),
                    class_logits: (0..cfg.num_classes).map(|k| at(net::CLS + k, c)).collect(),
                })
                .collect(),
        }
    }

    fn to_planar(&self, k: usize) -> Vec<f64> {
        let cells = self.cells.len();
        let mut out = vec![0.0; (5 + k) * cells];
        for (c, p) in self.cells.iter().enumerate() {
            out[net::OBJ * cells + c] = p.objectness_logit;
            out[net::TX * cells + c] = p.tx;
            out[net::TY * cells + c] = p.ty;
            out[net::TW * cells + c] = p.tw;
            out[net::TH * cells + c] = p.th;
            for (j, &l) in p.class_logits.iter().enumerate() {
                out[(net::CLS + j) * cells + c] = l;
            }
        }
        out
    }
}

pub fn forward(p: &ParamSet, pixels: &[f32], cfg: &DetectorConfig) -> Result<PredGrid> {
    cfg.validate()?;
    cfg.check_params(p)?;
    net::check_image(cfg, pixels)?;
    let head = net::forward_raw(cfg, &p.to_flat(), pixels);
    Ok(PredGrid::from_planar(cfg, &head))
}

/// Cell of each grid position responsible for a truth box, or `None`.
pub type Responsibility = Vec<Option<usize>>;

/// Composite loss of a prediction grid against truth boxes.
pub fn loss(pred: &PredGrid, truth: &[BBox], cfg: &DetectorConfig) -> Result<(f64, Responsibility)> {
    if pred.grid_s != cfg.grid_s || pred.cells.iter().any(|c| c.class_logits.len() != cfg.num_classes) {
        return Err(DetError::ShapeMismatch("prediction grid does not match config".into()));
    }
    let owner = net::assign_cells(cfg, truth)?;
    let planar = pred.to_planar(cfg.num_classes);
    let value = net::loss_planar(cfg, &planar, &owner, truth, None);
    Ok((value, owner))
}

/// Gradient of the loss on one image with respect to every parameter,
/// computed in f64 and rounded once.
pub fn backward(p: &ParamSet, pixels: &[f32], truth: &[BBox], cfg: &DetectorConfig) -> Result<ParamSet> {
    cfg.validate()?;
    cfg.check_params(p)?;
    let w: Vec<f64> = p.to_flat().iter().map(|&v| v as f64).collect();
    let (_, grad) = net::loss_and_grad::<f64>(cfg, &w, pixels, truth)?;
    let grad: Vec<f32> = grad.iter().map(|&g| g as f32).collect();
    Ok(p.with_flat(&grad)?)
}
