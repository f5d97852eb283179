//! Layer primitives with hand-derived backward passes.
//!
//! All convolutions are stride 1 with "same" zero padding except the fixed
//! depthwise Laplacian, which uses replicate padding so spatially constant
//! maps are exact fixed points of the enhancement, and the 2x2 stride-2
//! transposed convolution used for upsampling.
//!
//! Parallelism is restricted to disjoint output planes (rayon over
//! `(batch, channel)` chunks); every accumulation runs in a fixed serial
//! order inside one task, so results are bit-reproducible regardless of
//! thread count.

use rayon::prelude::*;

use super::tensor::{Scalar, Tensor};

/// The fixed 3x3 Laplacian stencil; entries sum to zero.
pub const LAPLACIAN_KERNEL: [[f32; 3]; 3] =
    [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]];

// ---------------------------------------------------------------------------
// Dense convolution, stride 1, square kernel, zero padding
// ---------------------------------------------------------------------------

/// Planes narrower than this go through the im2col/GEMM path; wide planes
/// use shifted row AXPYs, which stream better at large spatial sizes.
const GEMM_WIDTH_CUTOFF: usize = 32;

/// `weight` is `[c_out, c_in, k, k]`, `bias` is `[c_out]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    k: usize,
    pad: usize,
) -> Tensor<T> {
    let (b, c_in, h, w) = input.shape();
    debug_assert_eq!(weight.len(), c_out * c_in * k * k);
    debug_assert_eq!(bias.len(), c_out);
    let mut out = Tensor::zeros(b, c_out, h, w);
    let plane = h * w;
    if w < GEMM_WIDTH_CUTOFF && k > 1 {
        // Narrow planes: one im2col per batch item, then a row-accumulating
        // GEMM. Summation order over (ci, ky, kx) matches the wide path.
        out.data
            .par_chunks_mut(c_out * plane)
            .enumerate()
            .for_each(|(bi, out_item)| {
                let col = im2col(input, bi, k, pad);
                for (co, out_plane) in out_item.chunks_mut(plane).enumerate() {
                    out_plane.fill(bias[co]);
                    let a_row = &weight[co * c_in * k * k..(co + 1) * c_in * k * k];
                    for (kk, &av) in a_row.iter().enumerate() {
                        let b_row = &col[kk * plane..(kk + 1) * plane];
                        for (o, &bv) in out_plane.iter_mut().zip(b_row) {
                            *o += av * bv;
                        }
                    }
                }
            });
        return out;
    }
    out.data
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(pi, out_plane)| {
            let bi = pi / c_out;
            let co = pi % c_out;
            out_plane.fill(bias[co]);
            for ci in 0..c_in {
                let in_plane = input.plane(bi, ci);
                let wbase = (co * c_in + ci) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[wbase + ky * k + kx];
                        shifted_axpy(out_plane, in_plane, wv, h, w, ky, kx, pad);
                    }
                }
            }
        });
    out
}

/// Unfold one batch item into a `[c_in*k*k, h*w]` matrix, rows ordered
/// `(ci, ky, kx)`, zero padding.
fn im2col<T: Scalar>(input: &Tensor<T>, bi: usize, k: usize, pad: usize) -> Vec<T> {
    let (_, c_in, h, w) = input.shape();
    let plane = h * w;
    let mut col = vec![T::ZERO; c_in * k * k * plane];
    for ci in 0..c_in {
        let in_plane = input.plane(bi, ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col
                    [((ci * k + ky) * k + kx) * plane..((ci * k + ky) * k + kx + 1) * plane];
                let (x_lo, x_hi) = x_range(w, kx, pad);
                if x_lo >= x_hi {
                    continue;
                }
                let dx = kx as isize - pad as isize;
                for y in y_range(h, ky, pad) {
                    let yi = (y as isize + ky as isize - pad as isize) as usize;
                    let si = (x_lo as isize + dx) as usize;
                    row[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&in_plane[yi * w + si..yi * w + si + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

/// `out[y][x_lo..x_hi] += wv * src[y + ky - pad][x + kx - pad]` over the
/// in-bounds range.
#[inline]
#[allow(clippy::too_many_arguments)]
fn shifted_axpy<T: Scalar>(
    out: &mut [T],
    src: &[T],
    wv: T,
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    pad: usize,
) {
    let (x_lo, x_hi) = x_range(w, kx, pad);
    if x_lo >= x_hi {
        return;
    }
    let dx = kx as isize - pad as isize;
    for y in y_range(h, ky, pad) {
        let yi = (y as isize + ky as isize - pad as isize) as usize;
        let orow = &mut out[y * w + x_lo..y * w + x_hi];
        let si = (x_lo as isize + dx) as usize;
        let irow = &src[yi * w + si..yi * w + si + (x_hi - x_lo)];
        for (o, &i) in orow.iter_mut().zip(irow) {
            *o += wv * i;
        }
    }
}

#[inline]
fn x_range(w: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = (w + pad - kx).min(w);
    (lo, hi.max(lo))
}

#[inline]
fn y_range(h: usize, ky: usize, pad: usize) -> std::ops::Range<usize> {
    let (lo, hi) = x_range(h, ky, pad);
    lo..hi
}

/// Gradient w.r.t. the convolution input.
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &[T],
    c_in: usize,
    k: usize,
    pad: usize,
) -> Tensor<T> {
    let (b, c_out, h, w) = grad_out.shape();
    let mut grad_in = Tensor::zeros(b, c_in, h, w);
    let plane = h * w;
    if w < GEMM_WIDTH_CUTOFF && k > 1 {
        // colgrad[K, N] = W^T x g, then fold back with the im2col adjoint.
        grad_in
            .data
            .par_chunks_mut(c_in * plane)
            .enumerate()
            .for_each(|(bi, gin_item)| {
                let kk_total = c_in * k * k;
                let mut colgrad = vec![T::ZERO; kk_total * plane];
                for (kk, cg_row) in colgrad.chunks_mut(plane).enumerate() {
                    for co in 0..c_out {
                        let av = weight[co * kk_total + kk];
                        let g_row = grad_out.plane(bi, co);
                        for (o, &gv) in cg_row.iter_mut().zip(g_row) {
                            *o += av * gv;
                        }
                    }
                }
                col2im_add(&colgrad, gin_item, c_in, h, w, k, pad);
            });
        return grad_in;
    }
    grad_in
        .data
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(pi, gin_plane)| {
            let bi = pi / c_in;
            let ci = pi % c_in;
            for co in 0..c_out {
                let gout_plane = grad_out.plane(bi, co);
                let wbase = (co * c_in + ci) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[wbase + ky * k + kx];
                        // grad_in[y + ky - pad][x + kx - pad] += wv * g[y][x]
                        shifted_axpy_scatter(gin_plane, gout_plane, wv, h, w, ky, kx, pad);
                    }
                }
            }
        });
    grad_in
}

/// Adjoint of [`im2col`]: scatter-add column-matrix rows back onto the
/// input planes of one batch item.
fn col2im_add<T: Scalar>(
    colgrad: &[T],
    gin_item: &mut [T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) {
    let plane = h * w;
    for ci in 0..c_in {
        let gin_plane = &mut gin_item[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let kk = (ci * k + ky) * k + kx;
                let cg_row = &colgrad[kk * plane..(kk + 1) * plane];
                let (x_lo, x_hi) = x_range(w, kx, pad);
                if x_lo >= x_hi {
                    continue;
                }
                let dx = kx as isize - pad as isize;
                for y in y_range(h, ky, pad) {
                    let yi = (y as isize + ky as isize - pad as isize) as usize;
                    let di = (x_lo as isize + dx) as usize;
                    let dst = &mut gin_plane[yi * w + di..yi * w + di + (x_hi - x_lo)];
                    let src = &cg_row[y * w + x_lo..y * w + x_hi];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`shifted_axpy`]: accumulate into the shifted destination.
#[inline]
#[allow(clippy::too_many_arguments)]
fn shifted_axpy_scatter<T: Scalar>(
    dst: &mut [T],
    g: &[T],
    wv: T,
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    pad: usize,
) {
    let (x_lo, x_hi) = x_range(w, kx, pad);
    if x_lo >= x_hi {
        return;
    }
    let dx = kx as isize - pad as isize;
    for y in y_range(h, ky, pad) {
        let yi = (y as isize + ky as isize - pad as isize) as usize;
        let grow = &g[y * w + x_lo..y * w + x_hi];
        let di = (x_lo as isize + dx) as usize;
        let drow = &mut dst[yi * w + di..yi * w + di + (x_hi - x_lo)];
        for (d, &gv) in drow.iter_mut().zip(grow) {
            *d += wv * gv;
        }
    }
}

/// Dot product with eight independent accumulator lanes combined in a fixed
/// order: vectorizes without giving up run-to-run determinism.
#[inline]
fn dot_lanes<T: Scalar>(a: &[T], b: &[T]) -> T {
    const L: usize = 8;
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; L];
    let mut ca = a.chunks_exact(L);
    let mut cb = b.chunks_exact(L);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for j in 0..L {
            acc[j] += xa[j] * xb[j];
        }
    }
    let mut tail = T::ZERO;
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Sum with eight lanes, fixed combine order.
#[inline]
fn sum_lanes<T: Scalar>(a: &[T]) -> T {
    const L: usize = 8;
    let mut acc = [T::ZERO; L];
    let mut ca = a.chunks_exact(L);
    for xa in &mut ca {
        for j in 0..L {
            acc[j] += xa[j];
        }
    }
    let mut tail = T::ZERO;
    for &x in ca.remainder() {
        tail += x;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Gradients w.r.t. weight and bias, accumulated into the provided slices.
/// Runs as `gw[co, kk] += dot(g[co, :], col[kk, :])` per batch item; items
/// accumulate serially so the sum order is fixed.
pub fn conv2d_backward_params<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    grad_w: &mut [T],
    grad_b: &mut [T],
    k: usize,
    pad: usize,
) {
    let (b, c_out, h, w) = grad_out.shape();
    let c_in = input.channels;
    let plane = h * w;
    debug_assert_eq!(grad_w.len(), c_out * c_in * k * k);
    for bi in 0..b {
        let col = im2col(input, bi, k, pad);
        grad_w
            .par_chunks_mut(c_in * k * k)
            .enumerate()
            .for_each(|(co, gw_slice)| {
                let g_row = grad_out.plane(bi, co);
                for (kk, gw) in gw_slice.iter_mut().enumerate() {
                    *gw += dot_lanes(g_row, &col[kk * plane..(kk + 1) * plane]);
                }
            });
    }
    grad_b.par_iter_mut().enumerate().for_each(|(co, gb)| {
        let mut acc = T::ZERO;
        for bi in 0..b {
            acc += sum_lanes(grad_out.plane(bi, co));
        }
        *gb += acc;
    });
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Backward through ReLU given the cached *output* (positive iff the
/// pre-activation was positive; subgradient 0 at the kink).
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, out: &Tensor<T>) -> Tensor<T> {
    let data = grad_out
        .data
        .iter()
        .zip(&out.data)
        .map(|(&g, &o)| if o > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(
        grad_out.batch,
        grad_out.channels,
        grad_out.height,
        grad_out.width,
        data,
    )
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

pub struct PoolCache {
    /// Per output element, which of the 4 window positions won (dy*2 + dx).
    pub argmax: Vec<u8>,
    pub in_height: usize,
    pub in_width: usize,
}

pub fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, PoolCache) {
    let (b, c, h, w) = x.shape();
    assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even dims");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(b, c, oh, ow);
    let mut argmax = vec![0u8; b * c * oh * ow];
    let oplane = oh * ow;
    out.data
        .par_chunks_mut(oplane)
        .zip(argmax.par_chunks_mut(oplane))
        .enumerate()
        .for_each(|(pi, (out_plane, am_plane))| {
            let bi = pi / c;
            let ci = pi % c;
            let in_plane = x.plane(bi, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = in_plane[(2 * oy) * w + 2 * ox];
                    let mut which = 0u8;
                    for (t, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                        let v = in_plane[(2 * oy + dy) * w + 2 * ox + dx];
                        if v > best {
                            best = v;
                            which = t as u8;
                        }
                    }
                    out_plane[oy * ow + ox] = best;
                    am_plane[oy * ow + ox] = which;
                }
            }
        });
    (
        out,
        PoolCache {
            argmax,
            in_height: h,
            in_width: w,
        },
    )
}

pub fn maxpool2_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &PoolCache) -> Tensor<T> {
    let (b, c, oh, ow) = grad_out.shape();
    let (h, w) = (cache.in_height, cache.in_width);
    let mut grad_in = Tensor::zeros(b, c, h, w);
    let oplane = oh * ow;
    grad_in
        .data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(pi, gin_plane)| {
            let gout_plane = grad_out.plane(pi / c, pi % c);
            let am_plane = &cache.argmax[pi * oplane..(pi + 1) * oplane];
            for oy in 0..oh {
                for ox in 0..ow {
                    let which = am_plane[oy * ow + ox] as usize;
                    let (dy, dx) = (which / 2, which % 2);
                    gin_plane[(2 * oy + dy) * w + 2 * ox + dx] = gout_plane[oy * ow + ox];
                }
            }
        });
    grad_in
}

// ---------------------------------------------------------------------------
// 2x2 stride-2 transposed convolution
// ---------------------------------------------------------------------------

/// A 2x2 stride-2 transposed convolution touches each output pixel through
/// exactly one kernel tap, so the op factors into four independent 1x1
/// projections onto the even/odd pixel lattices. The lattice views keep
/// every inner loop contiguous.
///
/// `subs[t][b, c, y, x] = full[b, c, 2y + t/2, 2x + t%2]`
fn lattice_split<T: Scalar>(full: &Tensor<T>) -> [Tensor<T>; 4] {
    let (b, c, oh, ow) = full.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut subs = [
        Tensor::zeros(b, c, h, w),
        Tensor::zeros(b, c, h, w),
        Tensor::zeros(b, c, h, w),
        Tensor::zeros(b, c, h, w),
    ];
    for bi in 0..b {
        for ci in 0..c {
            let src = full.plane(bi, ci);
            for (t, sub) in subs.iter_mut().enumerate() {
                let (dy, dx) = (t / 2, t % 2);
                let dst = sub.plane_mut(bi, ci);
                for y in 0..h {
                    let srow = &src[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                    let drow = &mut dst[y * w..(y + 1) * w];
                    for (x, d) in drow.iter_mut().enumerate() {
                        *d = srow[2 * x + dx];
                    }
                }
            }
        }
    }
    subs
}

/// Inverse of [`lattice_split`].
fn lattice_merge<T: Scalar>(subs: &[Tensor<T>; 4]) -> Tensor<T> {
    let (b, c, h, w) = subs[0].shape();
    let ow = 2 * w;
    let mut full = Tensor::zeros(b, c, 2 * h, ow);
    for bi in 0..b {
        for ci in 0..c {
            let dst = full.plane_mut(bi, ci);
            for (t, sub) in subs.iter().enumerate() {
                let (dy, dx) = (t / 2, t % 2);
                let src = sub.plane(bi, ci);
                for y in 0..h {
                    let srow = &src[y * w..(y + 1) * w];
                    let drow = &mut dst[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                    for (x, &s) in srow.iter().enumerate() {
                        drow[2 * x + dx] = s;
                    }
                }
            }
        }
    }
    full
}

/// `weight` is `[c_in, c_out, 2, 2]`, `bias` is `[c_out]`; output doubles the
/// spatial dims.
pub fn convt2_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
) -> Tensor<T> {
    let (b, c_in, h, w) = input.shape();
    debug_assert_eq!(weight.len(), c_in * c_out * 4);
    let plane = h * w;
    let mut subs = [
        Tensor::zeros(b, c_out, h, w),
        Tensor::zeros(b, c_out, h, w),
        Tensor::zeros(b, c_out, h, w),
        Tensor::zeros(b, c_out, h, w),
    ];
    for (t, sub) in subs.iter_mut().enumerate() {
        sub.data
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(pi, out_plane)| {
                let bi = pi / c_out;
                let co = pi % c_out;
                out_plane.fill(bias[co]);
                for ci in 0..c_in {
                    let wv = weight[(ci * c_out + co) * 4 + t];
                    let in_plane = input.plane(bi, ci);
                    for (o, &iv) in out_plane.iter_mut().zip(in_plane) {
                        *o += wv * iv;
                    }
                }
            });
    }
    lattice_merge(&subs)
}

pub fn convt2_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &[T],
    c_in: usize,
) -> Tensor<T> {
    let (b, c_out, oh, ow) = grad_out.shape();
    let (h, w) = (oh / 2, ow / 2);
    let subs = lattice_split(grad_out);
    let mut grad_in = Tensor::zeros(b, c_in, h, w);
    grad_in
        .data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(pi, gin_plane)| {
            let bi = pi / c_in;
            let ci = pi % c_in;
            for co in 0..c_out {
                for (t, sub) in subs.iter().enumerate() {
                    let wv = weight[(ci * c_out + co) * 4 + t];
                    let g_plane = sub.plane(bi, co);
                    for (gi, &gv) in gin_plane.iter_mut().zip(g_plane) {
                        *gi += wv * gv;
                    }
                }
            }
        });
    grad_in
}

pub fn convt2_backward_params<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let (b, c_out, _, _) = grad_out.shape();
    debug_assert_eq!(grad_w.len(), input.channels * c_out * 4);
    let subs = lattice_split(grad_out);
    grad_w
        .par_chunks_mut(c_out * 4)
        .enumerate()
        .for_each(|(ci, gw_slice)| {
            for bi in 0..b {
                let in_plane = input.plane(bi, ci);
                for co in 0..c_out {
                    for (t, sub) in subs.iter().enumerate() {
                        gw_slice[co * 4 + t] += dot_lanes(in_plane, sub.plane(bi, co));
                    }
                }
            }
        });
    grad_b.par_iter_mut().enumerate().for_each(|(co, gb)| {
        let mut acc = T::ZERO;
        for bi in 0..b {
            acc += sum_lanes(grad_out.plane(bi, co));
        }
        *gb += acc;
    });
}

// ---------------------------------------------------------------------------
// Fixed depthwise Laplacian with replicate padding
// ---------------------------------------------------------------------------

/// Depthwise Laplacian response, computed in difference form
/// `sum over the 8 neighbors of (f[p] - f[neighbor])`, which is the stencil
/// above algebraically but cancels exactly in floating point on constant
/// maps. Out-of-bounds neighbors replicate the edge value, so the response
/// is an exact zero on constants everywhere, borders included.
pub fn laplacian_depthwise<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.shape();
    let mut out = Tensor::zeros(b, c, h, w);
    out.data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(pi, out_plane)| {
            let in_plane = x.plane(pi / c, pi % c);
            for y in 0..h {
                for x_ in 0..w {
                    let center = in_plane[y * w + x_];
                    let mut acc = T::ZERO;
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            if ky == 1 && kx == 1 {
                                continue;
                            }
                            let yy = (y + ky).saturating_sub(1).min(h - 1);
                            let xx = (x_ + kx).saturating_sub(1).min(w - 1);
                            acc += center - in_plane[yy * w + xx];
                        }
                    }
                    out_plane[y * w + x_] = acc;
                }
            }
        });
    out
}

/// Exact adjoint of [`laplacian_depthwise`] (replicate padding folds border
/// contributions back onto the edge pixels).
pub fn laplacian_depthwise_adjoint<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = g.shape();
    let mut out = Tensor::zeros(b, c, h, w);
    out.data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(pi, out_plane)| {
            let g_plane = g.plane(pi / c, pi % c);
            for y in 0..h {
                for x_ in 0..w {
                    let gv = g_plane[y * w + x_];
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            if ky == 1 && kx == 1 {
                                continue;
                            }
                            let yy = (y + ky).saturating_sub(1).min(h - 1);
                            let xx = (x_ + kx).saturating_sub(1).min(w - 1);
                            out_plane[y * w + x_] += gv;
                            out_plane[yy * w + xx] -= gv;
                        }
                    }
                }
            }
        });
    out
}

/// Skip enhancement `f + L(f)`.
pub fn laplacian_enhance<T: Scalar>(f: &Tensor<T>) -> Tensor<T> {
    let lap = laplacian_depthwise(f);
    let data = f.data.iter().zip(&lap.data).map(|(&a, &b)| a + b).collect();
    Tensor::from_vec(f.batch, f.channels, f.height, f.width, data)
}

/// Backward through the enhancement: `g + L^T(g)`.
pub fn laplacian_enhance_backward<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let adj = laplacian_depthwise_adjoint(g);
    let data = g.data.iter().zip(&adj.data).map(|(&a, &b)| a + b).collect();
    Tensor::from_vec(g.batch, g.channels, g.height, g.width, data)
}

// ---------------------------------------------------------------------------
// Per-pixel 2-way softmax
// ---------------------------------------------------------------------------

/// Softmax over the channel axis of a `[B,2,H,W]` logit map.
pub fn softmax2_forward<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    assert_eq!(logits.channels, 2);
    let (b, _, h, w) = logits.shape();
    let mut out = Tensor::zeros(b, 2, h, w);
    let n = h * w;
    for bi in 0..b {
        for i in 0..n {
            let l1 = logits.plane(bi, 0)[i];
            let l2 = logits.plane(bi, 1)[i];
            let m = if l1 > l2 { l1 } else { l2 };
            let e1 = (l1 - m).exp();
            let e2 = (l2 - m).exp();
            let denom = e1 + e2;
            out.plane_mut(bi, 0)[i] = e1 / denom;
            out.plane_mut(bi, 1)[i] = e2 / denom;
        }
    }
    out
}

/// Backward through the 2-way softmax given cached probabilities.
pub fn softmax2_backward<T: Scalar>(grad_alpha: &Tensor<T>, alpha: &Tensor<T>) -> Tensor<T> {
    let (b, _, h, w) = alpha.shape();
    let mut grad_logits = Tensor::zeros(b, 2, h, w);
    let n = h * w;
    for bi in 0..b {
        for i in 0..n {
            let a1 = alpha.plane(bi, 0)[i];
            let a2 = alpha.plane(bi, 1)[i];
            let g1 = grad_alpha.plane(bi, 0)[i];
            let g2 = grad_alpha.plane(bi, 1)[i];
            let dot = g1 * a1 + g2 * a2;
            grad_logits.plane_mut(bi, 0)[i] = a1 * (g1 - dot);
            grad_logits.plane_mut(bi, 1)[i] = a2 * (g2 - dot);
        }
    }
    grad_logits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(b: usize, c: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let data = (0..b * c * h * w).map(f).collect();
        Tensor::from_vec(b, c, h, w, data)
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let x = filled(1, 1, 4, 4, |i| i as f64 * 0.1);
        let mut weight = vec![0.0f64; 9];
        weight[4] = 1.0; // center tap
        let y = conv2d_forward(&x, &weight, &[0.0], 1, 3, 1);
        assert_eq!(x.data, y.data);
    }

    #[test]
    fn conv_bias_only_fills_bias() {
        let x = Tensor::<f64>::zeros(2, 3, 4, 4);
        let weight = vec![0.0f64; 2 * 3 * 9];
        let y = conv2d_forward(&x, &weight, &[1.5, -0.5], 2, 3, 1);
        assert!(y.plane(0, 0).iter().all(|&v| v == 1.5));
        assert!(y.plane(1, 1).iter().all(|&v| v == -0.5));
    }

    #[test]
    fn conv_zero_padding_shrinks_border_sums() {
        // all-ones image, all-ones 3x3 kernel: interior 9, edge 6, corner 4
        let x = filled(1, 1, 4, 4, |_| 1.0);
        let weight = vec![1.0f64; 9];
        let y = conv2d_forward(&x, &weight, &[0.0], 1, 3, 1);
        assert_eq!(y.plane(0, 0)[0], 4.0);
        assert_eq!(y.plane(0, 0)[1], 6.0);
        assert_eq!(y.plane(0, 0)[5], 9.0);
    }

    /// Adjoint identity <conv(x), y> == <x, conv_backward_input(y)> verifies
    /// the backward-input path against the forward definition.
    #[test]
    fn conv_backward_input_is_the_adjoint() {
        let x = filled(1, 2, 5, 5, |i| ((i * 37) % 11) as f64 - 5.0);
        let weight: Vec<f64> = (0..3 * 2 * 9)
            .map(|i| ((i * 13) % 7) as f64 - 3.0)
            .collect();
        let y = filled(1, 3, 5, 5, |i| ((i * 29) % 13) as f64 - 6.0);
        let fx = conv2d_forward(&x, &weight, &[0.0; 3], 3, 3, 1);
        let bty = conv2d_backward_input(&y, &weight, 2, 3, 1);
        let lhs: f64 = fx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&bty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn convt_doubles_dims_and_matches_hand_example() {
        // one input pixel value v: output 2x2 block = v * w[.., dy, dx]
        let x = filled(1, 1, 1, 1, |_| 3.0);
        let weight = vec![1.0, 2.0, 4.0, 8.0]; // [1,1,2,2]
        let y = convt2_forward(&x, &weight, &[0.5], 1);
        assert_eq!(y.shape(), (1, 1, 2, 2));
        assert_eq!(y.data, vec![3.5, 6.5, 12.5, 24.5]);
    }

    #[test]
    fn convt_backward_input_is_the_adjoint() {
        let x = filled(1, 3, 4, 4, |i| ((i * 7) % 5) as f64 - 2.0);
        let weight: Vec<f64> = (0..3 * 2 * 4)
            .map(|i| ((i * 11) % 9) as f64 - 4.0)
            .collect();
        let y = filled(1, 2, 8, 8, |i| ((i * 3) % 17) as f64 - 8.0);
        let fx = convt2_forward(&x, &weight, &[0.0; 2], 2);
        let bty = convt2_backward_input(&y, &weight, 3);
        let lhs: f64 = fx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&bty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn maxpool_selects_max_and_routes_gradient() {
        let x = Tensor::from_vec(1, 1, 2, 4, vec![1.0f64, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 9.0]);
        let (y, cache) = maxpool2_forward(&x);
        assert_eq!(y.data, vec![5.0, 9.0]);
        let g = Tensor::from_vec(1, 1, 1, 2, vec![10.0f64, 20.0]);
        let gx = maxpool2_backward(&g, &cache);
        assert_eq!(gx.data, vec![0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0]);
    }

    #[test]
    fn laplacian_constant_map_is_exact_zero_everywhere() {
        let x = filled(1, 2, 6, 6, |_| 0.73);
        let lap = laplacian_depthwise(&x);
        assert!(lap.data.iter().all(|&v| v == 0.0), "{:?}", lap.data);
        let enh = laplacian_enhance(&x);
        assert_eq!(enh.data, x.data);
    }

    #[test]
    fn laplacian_impulse_response_is_the_stencil() {
        let mut x = Tensor::<f64>::zeros(1, 1, 5, 5);
        x.plane_mut(0, 0)[2 * 5 + 2] = 1.0;
        let enh = laplacian_enhance(&x);
        for y in 0..5 {
            for xx in 0..5 {
                let v = enh.plane(0, 0)[y * 5 + xx];
                let want = match (y as i64 - 2, xx as i64 - 2) {
                    (0, 0) => 9.0,
                    (dy, dx) if dy.abs() <= 1 && dx.abs() <= 1 => -1.0,
                    _ => 0.0,
                };
                assert_eq!(v, want, "at ({y},{xx})");
            }
        }
    }

    #[test]
    fn laplacian_is_depthwise_no_channel_mixing() {
        let mut x = Tensor::<f64>::zeros(1, 2, 5, 5);
        x.plane_mut(0, 0)[2 * 5 + 2] = 1.0;
        for v in x.plane_mut(0, 1) {
            *v = 0.4;
        }
        let enh = laplacian_enhance(&x);
        assert!(enh.plane(0, 1).iter().all(|&v| v == 0.4));
        assert_eq!(enh.plane(0, 0)[2 * 5 + 2], 9.0);
    }

    #[test]
    fn laplacian_adjoint_identity() {
        let x = filled(1, 1, 6, 7, |i| ((i * 31) % 19) as f64 - 9.0);
        let y = filled(1, 1, 6, 7, |i| ((i * 17) % 23) as f64 - 11.0);
        let lx = laplacian_depthwise(&x);
        let lty = laplacian_depthwise_adjoint(&y);
        let lhs: f64 = lx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&lty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn softmax2_sums_to_one_and_equal_logits_give_half() {
        let logits = Tensor::from_vec(1, 2, 1, 2, vec![0.3f64, -4.0, 0.3, 2.0]);
        let a = softmax2_forward(&logits);
        for i in 0..2 {
            let s = a.plane(0, 0)[i] + a.plane(0, 1)[i];
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.plane(0, 0)[0], 0.5);
        assert_eq!(a.plane(0, 1)[0], 0.5);
    }

    #[test]
    fn relu_masks_gradient_by_output_sign() {
        let x = Tensor::from_vec(1, 1, 1, 4, vec![-1.0f64, 0.0, 2.0, -3.0]);
        let y = relu_forward(&x);
        assert_eq!(y.data, vec![0.0, 0.0, 2.0, 0.0]);
        let g = Tensor::from_vec(1, 1, 1, 4, vec![5.0f64, 5.0, 5.0, 5.0]);
        let gx = relu_backward(&g, &y);
        assert_eq!(gx.data, vec![0.0, 0.0, 5.0, 0.0]);
    }
}
