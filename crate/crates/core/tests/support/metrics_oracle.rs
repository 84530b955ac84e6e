//! Brute-force detection metrics: every confidence cut-off is re-matched
//! from scratch and interpolated precision is a plain maximum over cut-offs.

#![allow(dead_code)]

use fedod::synthdata::BBox;
use fedod::tinydet::Detection;
use fedod::Rng;

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.cx + a.w / 2.0).min(b.cx + b.w / 2.0) - (a.cx - a.w / 2.0).max(b.cx - b.w / 2.0)).max(0.0);
    let iy = ((a.cy + a.h / 2.0).min(b.cy + b.h / 2.0) - (a.cy - a.h / 2.0).max(b.cy - b.h / 2.0)).max(0.0);
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// True positives among the `k` most confident detections of one image.
fn true_positives(dets: &[&Detection], truths: &[&BBox], k: usize, thr: f64) -> usize {
    let mut used = vec![false; truths.len()];
    let mut tp = 0;
    for d in &dets[..k] {
        let mut best = None;
        let mut best_iou = thr;
        for (i, t) in truths.iter().enumerate() {
            let v = overlap(&d.bbox, t);
            if !used[i] && v >= best_iou && (best.is_none() || v > best_iou) {
                best = Some(i);
                best_iou = v;
            }
        }
        if let Some(i) = best {
            used[i] = true;
            tp += 1;
        }
    }
    tp
}

/// AP of one class at one IoU threshold over several images.
pub fn class_ap(images: &[(Vec<Detection>, Vec<BBox>)], class: u32, thr: f64) -> Option<f64> {
    let per: Vec<(Vec<&Detection>, Vec<&BBox>)> = images
        .iter()
        .map(|(d, t)| {
            let mut d: Vec<&Detection> = d.iter().filter(|x| x.bbox.class_id == class).collect();
            d.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
            (d, t.iter().filter(|x| x.class_id == class).collect())
        })
        .collect();
    let n_gt: usize = per.iter().map(|(_, t)| t.len()).sum();
    if n_gt == 0 {
        return None;
    }
    let mut confs: Vec<f64> = per.iter().flat_map(|(d, _)| d.iter().map(|x| x.confidence)).collect();
    confs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // one operating point per cut-off: keep detections with confidence >= c
    let points: Vec<(f64, f64)> = confs
        .iter()
        .map(|&c| {
            let mut tp = 0;
            let mut kept = 0;
            for (d, t) in &per {
                let k = d.iter().filter(|x| x.confidence >= c).count();
                kept += k;
                tp += true_positives(d, t, k, thr);
            }
            (tp as f64 / n_gt as f64, tp as f64 / kept as f64)
        })
        .collect();
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        sum += points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|p| p.1)
            .fold(0.0, f64::max);
    }
    Some(sum / 101.0)
}

/// (mAP@0.5, AP@[.50:.05:.95]) averaged over classes with ground truth.
pub fn map(images: &[(Vec<Detection>, Vec<BBox>)], num_classes: u32) -> (f64, f64) {
    let mut at50 = Vec::new();
    let mut avg = Vec::new();
    for c in 0..num_classes {
        let Some(a50) = class_ap(images, c, 0.5) else { continue };
        at50.push(a50);
        let all: f64 = (0..10)
            .map(|i| class_ap(images, c, 0.5 + 0.05 * i as f64).unwrap())
            .sum();
        avg.push(all / 10.0);
    }
    if at50.is_empty() {
        return (0.0, 0.0);
    }
    let n = at50.len() as f64;
    (at50.iter().sum::<f64>() / n, avg.iter().sum::<f64>() / n)
}

/// A scene with up to 3 truths and up to 5 detections, most of them
/// jittered copies of truths so every IoU range is exercised. Confidences
/// are distinct.
pub fn random_scene(rng: &mut Rng) -> (Vec<Detection>, Vec<BBox>) {
    let truths: Vec<BBox> = (0..rng.below(4))
        .map(|_| {
            BBox::new(
                rng.below(2) as u32,
                rng.uniform(0.2, 0.8),
                rng.uniform(0.2, 0.8),
                rng.uniform(0.1, 0.4),
                rng.uniform(0.1, 0.4),
            )
        })
        .collect();
    let n = rng.below(6) as usize;
    let mut confs: Vec<f64> = Vec::new();
    while confs.len() < n {
        let c = rng.uniform(0.01, 1.0);
        if confs.iter().all(|&x| (x - c).abs() > 1e-9) {
            confs.push(c);
        }
    }
    let dets = confs
        .into_iter()
        .map(|confidence| {
            let bbox = if !truths.is_empty() && rng.bernoulli(0.75) {
                let t = truths[rng.below(truths.len() as u64) as usize];
                let j = rng.uniform(0.0, 0.12);
                let class = if rng.bernoulli(0.85) {
                    t.class_id
                } else {
                    1 - t.class_id
                };
                BBox::new(
                    class,
                    t.cx + rng.uniform(-j, j),
                    t.cy + rng.uniform(-j, j),
                    t.w * rng.uniform(1.0 - 2.0 * j, 1.0 + 2.0 * j),
                    t.h * rng.uniform(1.0 - 2.0 * j, 1.0 + 2.0 * j),
                )
            } else {
                BBox::new(
                    rng.below(2) as u32,
                    rng.uniform(0.2, 0.8),
                    rng.uniform(0.2, 0.8),
                    rng.uniform(0.1, 0.4),
                    rng.uniform(0.1, 0.4),
                )
            };
            Detection { bbox, confidence }
        })
        .collect();
    (dets, truths)
}
