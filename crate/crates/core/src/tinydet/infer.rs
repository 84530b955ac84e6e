use serde::{Deserialize, Serialize};

use super::net::sigmoid;
use super::{forward, CellPrediction, DetectorConfig, Result};
use crate::detmetrics::iou;
use crate::exec::Execution;
use crate::params::ParamSet;
use crate::synthdata::{BBox, Image};

/// A predicted box; the class lives in `bbox.class_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    /// `sigmoid(objectness) * max softmax(class_logits)`.
    pub confidence: f64,
}

impl Detection {
    pub fn class_id(&self) -> u32 {
        self.bbox.class_id
    }
}

pub fn decode(cell: &CellPrediction, row: usize, col: usize, cfg: &DetectorConfig) -> Detection {
    let g = cfg.grid_s as f64;
    let logits = &cell.class_logits;
    // first maximum wins ties
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    let denom: f64 = logits.iter().map(|&l| (l - logits[best]).exp()).sum();
    let p_class = 1.0 / denom;
    Detection {
        bbox: BBox::new(
            best as u32,
            (col as f64 + sigmoid(cell.tx)) / g,
            (row as f64 + sigmoid(cell.ty)) / g,
            sigmoid(cell.tw),
            sigmoid(cell.th),
        ),
        confidence: (sigmoid(cell.objectness_logit) * p_class).clamp(0.0, 1.0),
    }
}

/// Greedy per-class suppression: keep the most confident box, drop same-class
/// boxes overlapping it by more than `iou_threshold`, repeat. Output is in
/// descending confidence, ties in input order.
pub fn nms(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id() == d.class_id() && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

pub fn infer(
    p: &ParamSet,
    pixels: &[f32],
    cfg: &DetectorConfig,
    conf_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    let grid = forward(p, pixels, cfg)?;
    let g = cfg.grid_s;
    let candidates = grid
        .cells
        .iter()
        .enumerate()
        .map(|(i, cell)| decode(cell, i / g, i % g, cfg))
        .filter(|d| d.confidence >= conf_threshold)
        .collect();
    Ok(nms(candidates, nms_iou))
}

/// [`infer`] over many images, output in image order.
pub fn infer_batch(
    p: &ParamSet,
    images: &[&Image],
    cfg: &DetectorConfig,
    conf_threshold: f64,
    nms_iou: f64,
    exec: Execution,
) -> Result<Vec<Vec<Detection>>> {
    exec.map(images, |img| infer(p, &img.data, cfg, conf_threshold, nms_iou))
        .into_iter()
        .collect()
}
