//! COCO-style detection metrics: greedy matching, 101-point interpolated AP,
//! size-bucketed AP/AR and a fixed-width table rendering.

mod table;

pub use table::{format_metric, render_table, TableRow, TABLE_HEADER};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::synthdata::BBox;
use crate::tinydet::Detection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("class id {class_id} outside the class universe 0..{num_classes}")]
    ClassUniverseMismatch { class_id: u32, num_classes: usize },
    #[error("{detections} detection lists for {truths} ground-truth lists")]
    ImageCountMismatch { detections: usize, truths: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Detections kept per image and class.
pub const MAX_DETS: usize = 100;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Outcome of one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetMatch {
    pub confidence: f64,
    pub matched: bool,
    /// IoU with the matched truth, 0 when unmatched.
    pub iou: f64,
    pub truth: Option<usize>,
    /// Matched an ignored truth, or unmatched and outside the evaluated
    /// size range; excluded from precision and recall.
    pub ignored: bool,
}

/// Matching of one image and one class at one IoU threshold. Detections are
/// in descending confidence (ties in input order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub detections: Vec<DetMatch>,
    pub truth_matched: Vec<bool>,
    /// Truths that count toward recall.
    pub num_truths: usize,
}

/// Greedy matching: each detection, most confident first, takes the unmatched
/// truth with the highest IoU if that IoU reaches `iou_threshold`.
pub fn match_detections(dets: &[Detection], truths: &[BBox], iou_threshold: f64) -> MatchResult {
    match_with_ignore(dets, truths, &vec![false; truths.len()], None, iou_threshold)
}

fn sorted_by_confidence(dets: &[Detection]) -> Vec<&Detection> {
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    sorted
}

/// Matching where some truths are ignored: a detection prefers the best
/// non-ignored truth and only falls back to an ignored one, and unmatched
/// detections whose area lies outside `area_range` are ignored too.
fn match_with_ignore(
    dets: &[Detection],
    truths: &[BBox],
    ignore: &[bool],
    area_range: Option<(f64, f64)>,
    iou_threshold: f64,
) -> MatchResult {
    let mut truth_matched = vec![false; truths.len()];
    let mut out = Vec::with_capacity(dets.len());
    for d in sorted_by_confidence(dets) {
        let mut best: Option<(usize, f64)> = None;
        for pass_ignored in [false, true] {
            for (ti, t) in truths.iter().enumerate() {
                if truth_matched[ti] || ignore[ti] != pass_ignored {
                    continue;
                }
                let v = iou(&d.bbox, t);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((ti, v));
                }
            }
            if best.is_some() {
                break;
            }
        }
        let m = match best {
            Some((ti, v)) => {
                truth_matched[ti] = true;
                DetMatch {
                    confidence: d.confidence,
                    matched: true,
                    iou: v,
                    truth: Some(ti),
                    ignored: ignore[ti],
                }
            }
            None => DetMatch {
                confidence: d.confidence,
                matched: false,
                iou: 0.0,
                truth: None,
                ignored: area_range.is_some_and(|(lo, hi)| {
                    let a = d.bbox.area();
                    a < lo || a >= hi
                }),
            },
        };
        out.push(m);
    }
    MatchResult {
        detections: out,
        truth_matched,
        num_truths: ignore.iter().filter(|&&i| !i).count(),
    }
}

/// Ranked (confidence, is-true-positive) list over all images, ignored
/// detections dropped, and the number of counted truths.
fn ranked(results: &[MatchResult]) -> (Vec<(f64, bool)>, usize) {
    let mut ranked: Vec<(f64, bool)> = results
        .iter()
        .flat_map(|r| r.detections.iter())
        .filter(|d| !d.ignored)
        .map(|d| (d.confidence, d.matched))
        .collect();
    // stable: ties keep image order, then in-image order
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n = results.iter().map(|r| r.num_truths).sum();
    (ranked, n)
}

/// 101-point interpolated average precision over a dataset's match results
/// for one class at one threshold; 0 without ground truth.
pub fn average_precision(results: &[MatchResult]) -> f64 {
    let (ranked, n_gt) = ranked(results);
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    for (k, &(_, is_tp)) in ranked.iter().enumerate() {
        tp += is_tp as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let first = recall.partition_point(|&x| x < r);
        if first < precision.len() {
            sum += precision[first];
        }
    }
    sum / 101.0
}

/// Fraction of counted truths matched.
pub fn recall(results: &[MatchResult]) -> f64 {
    let n_gt: usize = results.iter().map(|r| r.num_truths).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let tp: usize = results
        .iter()
        .flat_map(|r| r.detections.iter())
        .filter(|d| d.matched && !d.ignored)
        .count();
    tp as f64 / n_gt as f64
}

/// Size ranges as fractions of the image area: small `< medium_min`,
/// medium `[medium_min, large_min)`, large `>= large_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeBuckets {
    pub medium_min: f64,
    pub large_min: f64,
}

impl SizeBuckets {
    /// COCO's 32² / 96² pixel thresholds relative to a 640×640 frame.
    pub fn coco_640() -> Self {
        Self {
            medium_min: (32.0f64 / 640.0).powi(2),
            large_min: (96.0f64 / 640.0).powi(2),
        }
    }

    /// Boundaries at 1/9 and 4/9 of the image area (one and two thirds of
    /// the side length).
    pub fn area_ninths() -> Self {
        Self {
            medium_min: 1.0 / 9.0,
            large_min: 4.0 / 9.0,
        }
    }

    fn medium(&self) -> (f64, f64) {
        (self.medium_min, self.large_min)
    }

    fn large(&self) -> (f64, f64) {
        (self.large_min, f64::INFINITY)
    }
}

impl Default for SizeBuckets {
    fn default() -> Self {
        Self::coco_640()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub map50: f64,
    pub ap_5095: f64,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar_medium: Option<f64>,
    pub ar_large: Option<f64>,
    pub num_truths: usize,
    pub num_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map50: f64,
    pub ap_5095: f64,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar_medium: Option<f64>,
    pub ar_large: Option<f64>,
    pub num_images: usize,
    pub num_truths: usize,
    pub num_detections: usize,
    pub per_class: Vec<ClassMetrics>,
}

pub fn evaluate(
    dets: &[Vec<Detection>],
    truths: &[Vec<BBox>],
    num_classes: usize,
    buckets: &SizeBuckets,
) -> Result<EvalReport> {
    evaluate_with(dets, truths, num_classes, buckets, Execution::default())
}

struct BucketEval {
    ap: [f64; 10],
    recall: [f64; 10],
    num_truths: usize,
}

fn eval_bucket(per_image: &[(Vec<Detection>, Vec<BBox>)], range: Option<(f64, f64)>, exec: Execution) -> BucketEval {
    let thresholds = iou_thresholds();
    let ignore: Vec<Vec<bool>> = per_image
        .iter()
        .map(|(_, t)| {
            t.iter()
                .map(|b| range.is_some_and(|(lo, hi)| b.area() < lo || b.area() >= hi))
                .collect()
        })
        .collect();
    let num_truths = ignore.iter().flatten().filter(|&&i| !i).count();
    let mut ap = [0.0; 10];
    let mut rec = [0.0; 10];
    for (ti, &thr) in thresholds.iter().enumerate() {
        let results = exec.map_range(per_image.len(), |i| {
            let (d, t) = &per_image[i];
            match_with_ignore(d, t, &ignore[i], range, thr)
        });
        ap[ti] = average_precision(&results);
        rec[ti] = recall(&results);
    }
    BucketEval {
        ap,
        recall: rec,
        num_truths,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_present(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

/// Evaluates per-image detections against per-image truths. Detections
/// beyond the [`MAX_DETS`] most confident per image and class are dropped.
pub fn evaluate_with(
    dets: &[Vec<Detection>],
    truths: &[Vec<BBox>],
    num_classes: usize,
    buckets: &SizeBuckets,
    exec: Execution,
) -> Result<EvalReport> {
    if dets.len() != truths.len() {
        return Err(MetricsError::ImageCountMismatch {
            detections: dets.len(),
            truths: truths.len(),
        });
    }
    let classes = dets
        .iter()
        .flat_map(|d| d.iter().map(|x| x.class_id()))
        .chain(truths.iter().flat_map(|t| t.iter().map(|b| b.class_id)));
    for class_id in classes {
        if class_id as usize >= num_classes {
            return Err(MetricsError::ClassUniverseMismatch { class_id, num_classes });
        }
    }

    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes as u32 {
        let per_image: Vec<(Vec<Detection>, Vec<BBox>)> = dets
            .iter()
            .zip(truths)
            .map(|(d, t)| {
                let mut d: Vec<Detection> = sorted_by_confidence(d)
                    .into_iter()
                    .filter(|x| x.class_id() == c)
                    .copied()
                    .collect();
                d.truncate(MAX_DETS);
                (d, t.iter().filter(|b| b.class_id == c).copied().collect())
            })
            .collect();
        let all = eval_bucket(&per_image, None, exec);
        let medium = eval_bucket(&per_image, Some(buckets.medium()), exec);
        let large = eval_bucket(&per_image, Some(buckets.large()), exec);
        let present = |b: &BucketEval, v: &[f64; 10]| (b.num_truths > 0).then(|| mean(v));
        per_class.push(ClassMetrics {
            class_id: c,
            map50: all.ap[0],
            ap_5095: mean(&all.ap),
            ap_medium: present(&medium, &medium.ap),
            ap_large: present(&large, &large.ap),
            ar_medium: present(&medium, &medium.recall),
            ar_large: present(&large, &large.recall),
            num_truths: all.num_truths,
            num_detections: per_image.iter().map(|(d, _)| d.len()).sum(),
        });
    }

    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.num_truths > 0).collect();
    let agg = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64
        }
    };
    Ok(EvalReport {
        map50: agg(|m| m.map50),
        ap_5095: agg(|m| m.ap_5095),
        ap_medium: mean_present(present.iter().map(|m| m.ap_medium)),
        ap_large: mean_present(present.iter().map(|m| m.ap_large)),
        ar_medium: mean_present(present.iter().map(|m| m.ar_medium)),
        ar_large: mean_present(present.iter().map(|m| m.ar_large)),
        num_images: dets.len(),
        num_truths: truths.iter().map(Vec::len).sum(),
        num_detections: dets.iter().map(Vec::len).sum(),
        per_class,
    })
}
