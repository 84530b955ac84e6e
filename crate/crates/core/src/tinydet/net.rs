//! Forward pass, composite detection loss and manual backpropagation.
//!
//! Layer arithmetic for an `S×S` input and a `G×G` grid (`S` divisible by `4G`):
//!
//! ```text
//! input        3 × S × S
//! conv1 3×3    C1 × S × S      + ReLU
//! pool 2×2     C1 × S/2 × S/2
//! conv2 3×3    C2 × S/2 × S/2  + ReLU
//! pool 2×2     C2 × S/4 × S/4
//! pool F×F     C2 × G × G      F = S / (4G); F = 2 for S = 32, G = 4
//! head 1×1     (5 + K) × G × G
//! ```
//!
//! Head channel order per cell: objectness, tx, ty, tw, th, then K class logits.

use std::ops::Range;

use super::layers::{self, Scalar};
use super::{DetError, DetectorConfig, Result};
use crate::synthdata::BBox;

pub(crate) const OBJ: usize = 0;
pub(crate) const TX: usize = 1;
pub(crate) const TY: usize = 2;
pub(crate) const TW: usize = 3;
pub(crate) const TH: usize = 4;
pub(crate) const CLS: usize = 5;

/// Offsets of each tensor inside the flat parameter vector, in schema order.
#[derive(Debug, Clone)]
pub struct Layout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
}

impl Layout {
    pub fn new(cfg: &DetectorConfig) -> Self {
        let (c1, c2, k) = (cfg.conv1_channels, cfg.conv2_channels, cfg.head_channels());
        let sizes = [c1 * 3 * 9, c1, c2 * c1 * 9, c2, k * c2, k];
        let mut start = 0;
        let mut r = sizes.map(|n| {
            let range = start..start + n;
            start += n;
            range
        });
        let take = |r: &mut [Range<usize>; 6], i: usize| std::mem::replace(&mut r[i], 0..0);
        Self {
            conv1_w: take(&mut r, 0),
            conv1_b: take(&mut r, 1),
            conv2_w: take(&mut r, 2),
            conv2_b: take(&mut r, 3),
            head_w: take(&mut r, 4),
            head_b: take(&mut r, 5),
        }
    }

    pub fn total(&self) -> usize {
        self.head_b.end
    }
}

/// Activations kept for the backward pass.
struct Cache<T> {
    input: Vec<T>,
    z1: Vec<T>,
    p1: Vec<T>,
    z2: Vec<T>,
    p3: Vec<T>,
}

/// Interleaved HWC pixels to planar CHW in the working precision.
fn to_planar<T: Scalar>(pixels: &[f32], s: usize) -> Vec<T> {
    let plane = s * s;
    let mut out = vec![T::zero(); 3 * plane];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = T::of(px[c] as f64);
        }
    }
    out
}

pub(crate) fn check_image(cfg: &DetectorConfig, pixels: &[f32]) -> Result<()> {
    let expected = cfg.image_size * cfg.image_size * 3;
    if pixels.len() != expected {
        return Err(DetError::ShapeMismatch(format!(
            "image has {} values, expected {expected} ({}²×3)",
            pixels.len(),
            cfg.image_size
        )));
    }
    Ok(())
}

fn forward_cached<T: Scalar>(cfg: &DetectorConfig, layout: &Layout, w: &[T], pixels: &[f32]) -> (Vec<T>, Cache<T>) {
    let s = cfg.image_size;
    let (c1, c2) = (cfg.conv1_channels, cfg.conv2_channels);
    let input = to_planar::<T>(pixels, s);

    let mut z1 = vec![T::zero(); c1 * s * s];
    layers::conv3x3_forward(
        &input,
        3,
        s,
        s,
        &w[layout.conv1_w.clone()],
        &w[layout.conv1_b.clone()],
        &mut z1,
    );
    let mut r1 = z1.clone();
    layers::relu_in_place(&mut r1);
    let p1 = layers::avg_pool_forward(&r1, c1, s, s, 2);

    let s2 = s / 2;
    let mut z2 = vec![T::zero(); c2 * s2 * s2];
    layers::conv3x3_forward(
        &p1,
        c1,
        s2,
        s2,
        &w[layout.conv2_w.clone()],
        &w[layout.conv2_b.clone()],
        &mut z2,
    );
    let mut r2 = z2.clone();
    layers::relu_in_place(&mut r2);
    let p2 = layers::avg_pool_forward(&r2, c2, s2, s2, 2);
    let p3 = layers::avg_pool_forward(&p2, c2, s / 4, s / 4, cfg.final_pool());

    let g = cfg.grid_s;
    let out = layers::pointwise_forward(&p3, c2, g * g, &w[layout.head_w.clone()], &w[layout.head_b.clone()]);
    (out, Cache { input, z1, p1, z2, p3 })
}

/// Head output, planar `[(5 + K), G, G]`.
pub fn forward_raw<T: Scalar>(cfg: &DetectorConfig, w: &[T], pixels: &[f32]) -> Vec<T> {
    forward_cached(cfg, &Layout::new(cfg), w, pixels).0
}

fn backward_from_head<T: Scalar>(
    cfg: &DetectorConfig,
    layout: &Layout,
    w: &[T],
    cache: &Cache<T>,
    d_head: &[T],
    grad: &mut [T],
) {
    let s = cfg.image_size;
    let (s2, s4) = (s / 2, s / 4);
    let (c1, c2) = (cfg.conv1_channels, cfg.conv2_channels);
    let g = cfg.grid_s;

    let (before_head, head) = grad.split_at_mut(layout.head_w.start);
    let (d_hw, d_hb) = head.split_at_mut(layout.head_w.len());
    let d_p3 = layers::pointwise_backward(&cache.p3, c2, g * g, &w[layout.head_w.clone()], d_head, d_hw, d_hb);

    let d_p2 = layers::avg_pool_backward(&d_p3, c2, s4, s4, cfg.final_pool());
    let mut d_z2 = layers::avg_pool_backward(&d_p2, c2, s2, s2, 2);
    layers::relu_backward(&cache.z2, &mut d_z2);

    let (conv1, conv2) = before_head.split_at_mut(layout.conv2_w.start);
    let (d_c2w, d_c2b) = conv2.split_at_mut(layout.conv2_w.len());
    let mut d_p1 = vec![T::zero(); c1 * s2 * s2];
    layers::conv3x3_backward(
        &cache.p1,
        c1,
        s2,
        s2,
        &w[layout.conv2_w.clone()],
        &d_z2,
        d_c2w,
        d_c2b,
        Some(&mut d_p1),
    );

    let mut d_z1 = layers::avg_pool_backward(&d_p1, c1, s, s, 2);
    layers::relu_backward(&cache.z1, &mut d_z1);
    let (d_c1w, d_c1b) = conv1.split_at_mut(layout.conv1_w.len());
    layers::conv3x3_backward(
        &cache.input,
        3,
        s,
        s,
        &w[layout.conv1_w.clone()],
        &d_z1,
        d_c1w,
        d_c1b,
        None,
    );
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Cell index of each truth box, rejecting two centers in one cell.
pub(crate) fn assign_cells(cfg: &DetectorConfig, truth: &[BBox]) -> Result<Vec<Option<usize>>> {
    let g = cfg.grid_s;
    let mut owner = vec![None; g * g];
    for (ti, b) in truth.iter().enumerate() {
        if b.class_id as usize >= cfg.num_classes {
            return Err(DetError::ClassOutOfRange {
                class_id: b.class_id,
                num_classes: cfg.num_classes,
            });
        }
        let (row, col) = b.cell(g);
        let cell = row * g + col;
        if let Some(prev) = owner[cell] {
            return Err(DetError::MultipleObjectsInCell {
                row,
                col,
                first: prev,
                second: ti,
            });
        }
        owner[cell] = Some(ti);
    }
    Ok(owner)
}

/// Regression targets `(gx, gy, gw, gh)` for a box owned by cell `(row, col)`.
pub fn box_targets(b: &BBox, row: usize, col: usize, grid_s: usize) -> [f64; 4] {
    let s = grid_s as f64;
    [b.cx * s - col as f64, b.cy * s - row as f64, b.w, b.h]
}

/// Composite loss over a planar head output; writes `d loss / d head` into
/// `d_head` when given.
pub(crate) fn loss_planar<T: Scalar>(
    cfg: &DetectorConfig,
    head: &[T],
    owner: &[Option<usize>],
    truth: &[BBox],
    mut d_head: Option<&mut [T]>,
) -> T {
    let g = cfg.grid_s;
    let cells = g * g;
    let k = cfg.num_classes;
    let at = |ch: usize, cell: usize| head[ch * cells + cell];
    let lc = T::of(cfg.lambda_coord);
    let ln = T::of(cfg.lambda_noobj);
    let two = T::of(2.0);
    let mut total = T::zero();

    for cell in 0..cells {
        let obj = at(OBJ, cell);
        match owner[cell] {
            None => {
                total += ln * softplus(obj);
                if let Some(d) = d_head.as_deref_mut() {
                    d[OBJ * cells + cell] = ln * sigmoid(obj);
                }
            }
            Some(ti) => {
                let b = &truth[ti];
                let (row, col) = (cell / g, cell % g);
                let targets = box_targets(b, row, col, g).map(T::of);
                // BCE(objectness, 1)
                total += softplus(-obj);
                let mut coord = T::zero();
                let mut d_coord = [T::zero(); 4];
                for (j, ch) in [TX, TY, TW, TH].into_iter().enumerate() {
                    let s = sigmoid(at(ch, cell));
                    let diff = s - targets[j];
                    coord += diff * diff;
                    d_coord[j] = lc * two * diff * s * (T::one() - s);
                }
                total += lc * coord;

                // cross-entropy over class logits
                let mut m = at(CLS, cell);
                for c in 1..k {
                    m = m.max(at(CLS + c, cell));
                }
                let mut z = T::zero();
                for c in 0..k {
                    z += (at(CLS + c, cell) - m).exp();
                }
                let lse = m + z.ln();
                total += lse - at(CLS + b.class_id as usize, cell);

                if let Some(d) = d_head.as_deref_mut() {
                    d[OBJ * cells + cell] = sigmoid(obj) - T::one();
                    for (j, ch) in [TX, TY, TW, TH].into_iter().enumerate() {
                        d[ch * cells + cell] = d_coord[j];
                    }
                    for c in 0..k {
                        let p = (at(CLS + c, cell) - lse).exp();
                        let onehot = if c == b.class_id as usize { T::one() } else { T::zero() };
                        d[(CLS + c) * cells + cell] = p - onehot;
                    }
                }
            }
        }
    }
    total
}

/// Loss of one image at flat weights `w`.
pub fn loss_at<T: Scalar>(cfg: &DetectorConfig, w: &[T], pixels: &[f32], truth: &[BBox]) -> Result<T> {
    check_image(cfg, pixels)?;
    let owner = assign_cells(cfg, truth)?;
    let head = forward_raw(cfg, w, pixels);
    Ok(loss_planar(cfg, &head, &owner, truth, None))
}

/// Loss and its gradient with respect to the flat weights `w`.
pub fn loss_and_grad<T: Scalar>(cfg: &DetectorConfig, w: &[T], pixels: &[f32], truth: &[BBox]) -> Result<(T, Vec<T>)> {
    check_image(cfg, pixels)?;
    let owner = assign_cells(cfg, truth)?;
    let layout = Layout::new(cfg);
    let (head, cache) = forward_cached(cfg, &layout, w, pixels);
    let mut d_head = vec![T::zero(); head.len()];
    let loss = loss_planar(cfg, &head, &owner, truth, Some(&mut d_head));
    let mut grad = vec![T::zero(); layout.total()];
    backward_from_head(cfg, &layout, w, &cache, &d_head, &mut grad);
    Ok((loss, grad))
}
