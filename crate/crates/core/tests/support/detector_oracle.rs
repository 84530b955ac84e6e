//! Straight-loop f64 re-implementation of the detector forward pass and
//! loss, used as an oracle for the optimized code.

#![allow(dead_code, clippy::needless_range_loop)]

use fedod::synthdata::BBox;
use fedod::tinydet::DetectorConfig;
use fedod::Rng;

pub struct Forward {
    /// `head[cell][channel]`, channels objectness, tx, ty, tw, th, classes.
    pub head: Vec<Vec<f64>>,
    /// Sign of every ReLU input, conv1 then conv2.
    pub pattern: Vec<bool>,
}

fn conv3x3(input: &[Vec<Vec<f64>>], w: &[f64], b: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let cin = input.len();
    let n = input[0].len();
    let mut out = vec![vec![vec![0.0; n]; n]; b.len()];
    for (o, plane) in out.iter_mut().enumerate() {
        for y in 0..n {
            for x in 0..n {
                let mut acc = b[o];
                for (i, inp) in input.iter().enumerate() {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                            if sy < 0 || sx < 0 || sy >= n as isize || sx >= n as isize {
                                continue;
                            }
                            acc += w[((o * cin + i) * 3 + ky) * 3 + kx] * inp[sy as usize][sx as usize];
                        }
                    }
                }
                plane[y][x] = acc;
            }
        }
    }
    out
}

fn relu(z: &mut [Vec<Vec<f64>>], pattern: &mut Vec<bool>) {
    for v in z.iter_mut().flatten().flatten() {
        pattern.push(*v > 0.0);
        *v = v.max(0.0);
    }
}

fn pool(x: &[Vec<Vec<f64>>], f: usize) -> Vec<Vec<Vec<f64>>> {
    let n = x[0].len() / f;
    x.iter()
        .map(|plane| {
            (0..n)
                .map(|y| {
                    (0..n)
                        .map(|xx| {
                            let mut s = 0.0;
                            for dy in 0..f {
                                for dx in 0..f {
                                    s += plane[y * f + dy][xx * f + dx];
                                }
                            }
                            s / (f * f) as f64
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn forward(cfg: &DetectorConfig, w: &[f64], pixels: &[f32]) -> Forward {
    let s = cfg.image_size;
    let (c1, c2, k) = (cfg.conv1_channels, cfg.conv2_channels, 5 + cfg.num_classes);
    let mut off = 0;
    let mut take = |n: usize| {
        let t = &w[off..off + n];
        off += n;
        t
    };
    let (w1, b1) = (take(c1 * 27), take(c1));
    let (w2, b2) = (take(c2 * c1 * 9), take(c2));
    let (wh, bh) = (take(k * c2), take(k));

    let input: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|c| {
            (0..s)
                .map(|y| (0..s).map(|x| pixels[(y * s + x) * 3 + c] as f64).collect())
                .collect()
        })
        .collect();
    let mut pattern = Vec::new();
    let mut z1 = conv3x3(&input, w1, b1);
    relu(&mut z1, &mut pattern);
    let p1 = pool(&z1, 2);
    let mut z2 = conv3x3(&p1, w2, b2);
    relu(&mut z2, &mut pattern);
    let g = cfg.grid_s;
    let feat = pool(&pool(&z2, 2), s / 4 / g);

    let head = (0..g * g)
        .map(|cell| {
            (0..k)
                .map(|ch| {
                    bh[ch]
                        + (0..c2)
                            .map(|c| wh[ch * c2 + c] * feat[c][cell / g][cell % g])
                            .sum::<f64>()
                })
                .collect()
        })
        .collect();
    Forward { head, pattern }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

/// The composite single-shot loss written directly from its definition.
pub fn loss(cfg: &DetectorConfig, head: &[Vec<f64>], truth: &[BBox]) -> f64 {
    let g = cfg.grid_s;
    let gf = g as f64;
    let mut total = 0.0;
    for (cell, h) in head.iter().enumerate() {
        let (row, col) = (cell / g, cell % g);
        let owner = truth.iter().find(|b| {
            let r = ((b.cy * gf) as usize).min(g - 1);
            let c = ((b.cx * gf) as usize).min(g - 1);
            (r, c) == (row, col)
        });
        match owner {
            None => total += cfg.lambda_noobj * softplus(h[0]),
            Some(b) => {
                total += -sig(h[0]).ln();
                let targets = [b.cx * gf - col as f64, b.cy * gf - row as f64, b.w, b.h];
                for j in 0..4 {
                    total += cfg.lambda_coord * (sig(h[1 + j]) - targets[j]).powi(2);
                }
                let z: f64 = h[5..].iter().map(|v| v.exp()).sum();
                total += -(h[5 + b.class_id as usize].exp() / z).ln();
            }
        }
    }
    total
}

pub fn loss_at(cfg: &DetectorConfig, w: &[f64], pixels: &[f32], truth: &[BBox]) -> (f64, Vec<bool>) {
    let f = forward(cfg, w, pixels);
    (loss(cfg, &f.head, truth), f.pattern)
}

/// Uniform-noise image plus one to three boxes with centers in distinct
/// cells.
pub fn random_instance(cfg: &DetectorConfig, rng: &mut Rng) -> (Vec<f32>, Vec<BBox>) {
    let s = cfg.image_size;
    let pixels = (0..s * s * 3).map(|_| rng.next_f64() as f32).collect();
    let g = cfg.grid_s;
    let mut cells: Vec<usize> = (0..g * g).collect();
    rng.shuffle(&mut cells);
    let n = 1 + rng.below(3) as usize;
    let boxes = cells[..n]
        .iter()
        .map(|&cell| {
            let (row, col) = (cell / g, cell % g);
            let cx = (col as f64 + rng.uniform(0.05, 0.95)) / g as f64;
            let cy = (row as f64 + rng.uniform(0.05, 0.95)) / g as f64;
            let class = rng.below(cfg.num_classes as u64) as u32;
            BBox::new(class, cx, cy, rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6))
        })
        .collect();
    (pixels, boxes)
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    /// Coordinates whose ±1e-3 stencil crossed a ReLU kink.
    pub kinked: usize,
    /// Coordinates with no kink-free step down to the smallest one tried.
    pub unresolved: usize,
    /// Max relative error over every coordinate at ε = 1e-3, kinks included.
    pub naive_max_rel_err: f64,
}

pub const FD_EPS: f64 = 1e-3;
/// Relative error denominators are floored here so exact zeros compare
/// absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Central differences of the oracle loss against `analytic`. A central
/// difference whose two evaluations see different ReLU activation patterns
/// straddles a kink and is not a derivative estimate, so such coordinates
/// are re-measured with the step halved until the stencil is kink-free.
pub fn check_gradient(cfg: &DetectorConfig, w: &[f64], pixels: &[f32], truth: &[BBox], analytic: &[f64]) -> GradCheck {
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        kinked: 0,
        unresolved: 0,
        naive_max_rel_err: 0.0,
    };
    let mut wp = w.to_vec();
    for i in 0..w.len() {
        let mut eps = FD_EPS;
        let mut first = true;
        loop {
            wp[i] = w[i] + eps;
            let (lp, pp) = loss_at(cfg, &wp, pixels, truth);
            wp[i] = w[i] - eps;
            let (lm, pm) = loss_at(cfg, &wp, pixels, truth);
            wp[i] = w[i];
            let fd = (lp - lm) / (2.0 * eps);
            let err = rel_err(analytic[i], fd);
            if first {
                out.naive_max_rel_err = out.naive_max_rel_err.max(err);
                if pp != pm {
                    out.kinked += 1;
                }
                first = false;
            }
            if pp == pm || eps < FD_EPS / 1024.0 {
                if pp != pm {
                    out.unresolved += 1;
                } else if err > out.max_rel_err {
                    out.max_rel_err = err;
                    out.worst_index = i;
                }
                break;
            }
            eps /= 2.0;
        }
    }
    out
}
