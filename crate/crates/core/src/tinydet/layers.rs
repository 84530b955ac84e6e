//! Planar (channel, row, column) kernels, generic over the float type so the
//! same code runs in `f32` for training and `f64` for gradient checking.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a·b + beta·c` with strided `a` (`m×k`), `b` (`k×n`) and
    /// row-major `c` with row stride `rsc`.
    ///
    /// # Safety
    /// All strided indices must lie inside the pointed-to buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: usize,
        csa: usize,
        b: *const Self,
        rsb: usize,
        csb: usize,
        beta: Self,
        c: *mut Self,
        rsc: usize,
    );
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: usize,
        csa: usize,
        b: *const Self,
        rsb: usize,
        csb: usize,
        beta: Self,
        c: *mut Self,
        rsc: usize,
    ) {
        let i = |v: usize| v as isize;
        matrixmultiply::sgemm(m, k, n, 1.0, a, i(rsa), i(csa), b, i(rsb), i(csb), beta, c, i(rsc), 1);
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: usize,
        csa: usize,
        b: *const Self,
        rsb: usize,
        csb: usize,
        beta: Self,
        c: *mut Self,
        rsc: usize,
    ) {
        let i = |v: usize| v as isize;
        matrixmultiply::dgemm(m, k, n, 1.0, a, i(rsa), i(csa), b, i(rsb), i(csb), beta, c, i(rsc), 1);
    }
}

/// Row-major `c = a·b + beta·c` where `a` is `m×k` and `b` is `k×n`, each
/// addressed through (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len());
        assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    }
    // SAFETY: every index the kernel touches is bounded by the asserts above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n,
        )
    }
}

/// Patch matrix `[cin·9, h·w]` of a zero-padded 3×3 neighborhood.
fn im2col<T: Scalar>(input: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut col = vec![T::zero(); cin * 9 * plane];
    for i in 0..cin {
        let in_c = &input[i * plane..(i + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((i * 3 + ky) * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &in_c[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im_add<T: Scalar>(col: &[T], cin: usize, h: usize, w: usize, d_input: &mut [T]) {
    let plane = h * w;
    for i in 0..cin {
        let di = &mut d_input[i * plane..(i + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((i * 3 + ky) * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut di[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], src),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// 3×3 convolution, stride 1, zero padding 1. `weight` is `[cout, cin, 3, 3]`.
pub fn conv3x3_forward<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let cout = bias.len();
    let plane = h * w;
    assert_eq!(input.len(), cin * plane);
    assert_eq!(out.len(), cout * plane);
    for (o, &b) in bias.iter().enumerate() {
        out[o * plane..(o + 1) * plane].fill(b);
    }
    let col = im2col(input, cin, h, w);
    gemm(
        cout,
        cin * 9,
        plane,
        weight,
        (cin * 9, 1),
        &col,
        (plane, 1),
        T::one(),
        out,
    );
}

/// Accumulates weight/bias gradients and, when `d_input` is given, the input
/// gradient of [`conv3x3_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    d_out: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
    d_input: Option<&mut [T]>,
) {
    let cout = d_bias.len();
    let plane = h * w;
    let k = cin * 9;
    assert_eq!(d_out.len(), cout * plane);
    for (o, db) in d_bias.iter_mut().enumerate() {
        for &g in &d_out[o * plane..(o + 1) * plane] {
            *db += g;
        }
    }
    let col = im2col(input, cin, h, w);
    // d_weight += d_out · colᵀ
    gemm(cout, plane, k, d_out, (plane, 1), &col, (1, plane), T::one(), d_weight);
    if let Some(di) = d_input {
        // d_col = weightᵀ · d_out
        let mut d_col = vec![T::zero(); k * plane];
        gemm(k, cout, plane, weight, (1, k), d_out, (plane, 1), T::zero(), &mut d_col);
        col2im_add(&d_col, cin, h, w, di);
    }
}

pub fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward<T: Scalar>(pre: &[T], grad: &mut [T]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Non-overlapping `f×f` mean pooling; `h` and `w` divisible by `f`.
pub fn avg_pool_forward<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h / f, w / f);
    let scale = T::of(1.0 / (f * f) as f64);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            let src = &input[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst = &mut out[(ch * oh + y / f) * ow..(ch * oh + y / f + 1) * ow];
            for (x, &v) in src.iter().enumerate() {
                dst[x / f] += v;
            }
        }
    }
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

pub fn avg_pool_backward<T: Scalar>(d_out: &[T], c: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h / f, w / f);
    let scale = T::of(1.0 / (f * f) as f64);
    let mut d_in = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let g = &d_out[(ch * oh + y / f) * ow..(ch * oh + y / f + 1) * ow];
            let dst = &mut d_in[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = g[x / f] * scale;
            }
        }
    }
    d_in
}

/// 1×1 convolution over `cells` positions. `weight` is `[cout, cin]`.
pub fn pointwise_forward<T: Scalar>(input: &[T], cin: usize, cells: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let cout = bias.len();
    let mut out = vec![T::zero(); cout * cells];
    for o in 0..cout {
        let dst = &mut out[o * cells..(o + 1) * cells];
        dst.fill(bias[o]);
        for i in 0..cin {
            let wv = weight[o * cin + i];
            let src = &input[i * cells..(i + 1) * cells];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
    out
}

/// Returns the input gradient; accumulates into `d_weight` / `d_bias`.
pub fn pointwise_backward<T: Scalar>(
    input: &[T],
    cin: usize,
    cells: usize,
    weight: &[T],
    d_out: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
) -> Vec<T> {
    let cout = d_bias.len();
    let mut d_in = vec![T::zero(); cin * cells];
    for o in 0..cout {
        let g = &d_out[o * cells..(o + 1) * cells];
        for &v in g {
            d_bias[o] += v;
        }
        for i in 0..cin {
            let src = &input[i * cells..(i + 1) * cells];
            let mut acc = T::zero();
            for (&gv, &s) in g.iter().zip(src) {
                acc += gv * s;
            }
            d_weight[o * cin + i] += acc;
            let wv = weight[o * cin + i];
            let di = &mut d_in[i * cells..(i + 1) * cells];
            for (d, &gv) in di.iter_mut().zip(g) {
                *d += wv * gv;
            }
        }
    }
    d_in
}
