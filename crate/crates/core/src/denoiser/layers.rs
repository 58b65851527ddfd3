//! Forward and reverse-mode kernels for the fixed operator set.
//!
//! Every kernel is generic over the scalar type so the identical code path
//! can run in `f32` for training and in `f64` when a test recomputes values
//! for finite-difference comparison. Feature maps use a planar layout:
//! channel-major `[C][H][W]`, row-major within a channel. Statistical
//! reductions (normalization moments, their backward means) accumulate in
//! `f64` regardless of the scalar type.

// Kernels take flat slices plus their dimensions by design; bundling the
// arguments into structs would add packing code at every call site.
#![allow(clippy::too_many_arguments)]

use num_traits::Float;

/// Epsilon added to the variance inside group normalization.
pub const NORM_EPS: f64 = 1e-5;

#[inline]
fn f<F: Float>(x: f64) -> F {
    F::from(x).unwrap()
}

#[inline]
fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Dot product with eight partial accumulators so the reduction vectorizes.
#[inline]
fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [F::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let rest_a = chunks_a.remainder();
    let rest_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            lanes[i] = lanes[i] + ca[i] * cb[i];
        }
    }
    let mut acc = F::zero();
    for (x, y) in rest_a.iter().zip(rest_b) {
        acc = acc + *x * *y;
    }
    for l in lanes {
        acc = acc + l;
    }
    acc
}

// ============================================================================
// Convolution
// ============================================================================

/// 2-D convolution, kernel size 1 or 3, stride 1. Size 3 pads by one pixel
/// of zeros so spatial extents are preserved.
///
/// `weight` is `[cout][cin][k][k]`, `bias` is `[cout]`; `out` must hold
/// `cout * h * w` elements.
pub fn conv_forward<F: Float>(
    input: &[F],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[F],
    bias: &[F],
    cout: usize,
    k: usize,
    out: &mut [F],
) {
    debug_assert!(k == 1 || k == 3, "unsupported kernel size {k}");
    debug_assert_eq!(input.len(), cin * h * w);
    debug_assert_eq!(weight.len(), cout * cin * k * k);
    debug_assert_eq!(out.len(), cout * h * w);

    if k == 1 {
        for (co, &b) in bias.iter().enumerate() {
            let dst = &mut out[co * h * w..(co + 1) * h * w];
            dst.fill(b);
            for ci in 0..cin {
                let wv = weight[co * cin + ci];
                let src = &input[ci * h * w..(ci + 1) * h * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *d + wv * *s;
                }
            }
        }
        return;
    }

    let padded = pad_one(input, cin, h, w);
    let (ph, pw) = (h + 2, w + 2);
    for (co, &b) in bias.iter().enumerate() {
        let dst_base = co * h * w;
        out[dst_base..dst_base + h * w].fill(b);
        for ci in 0..cin {
            let src_base = ci * ph * pw;
            let w_base = (co * cin + ci) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[w_base + ky * 3 + kx];
                    for y in 0..h {
                        let src = src_base + (y + ky) * pw + kx;
                        let dst = dst_base + y * w;
                        let (srow, drow) = (&padded[src..src + w], &mut out[dst..dst + w]);
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d = *d + wv * *s;
                        }
                    }
                }
            }
        }
    }
}

/// Reverse-mode pass for [`conv_forward`]. Accumulates into `d_weight`,
/// `d_bias`, and `d_input` (callers zero them beforehand as appropriate).
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<F: Float>(
    input: &[F],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[F],
    cout: usize,
    k: usize,
    d_out: &[F],
    d_input: &mut [F],
    d_weight: &mut [F],
    d_bias: &mut [F],
) {
    debug_assert!(k == 1 || k == 3);
    debug_assert_eq!(d_out.len(), cout * h * w);
    debug_assert_eq!(d_input.len(), cin * h * w);

    for co in 0..cout {
        let g = &d_out[co * h * w..(co + 1) * h * w];
        let mut acc = 0.0f64;
        for v in g {
            acc += v.to_f64().unwrap();
        }
        d_bias[co] = d_bias[co] + f(acc);
    }

    if k == 1 {
        for co in 0..cout {
            let g = &d_out[co * h * w..(co + 1) * h * w];
            for ci in 0..cin {
                let src = &input[ci * h * w..(ci + 1) * h * w];
                d_weight[co * cin + ci] = d_weight[co * cin + ci] + dot(g, src);

                let wv = weight[co * cin + ci];
                let din = &mut d_input[ci * h * w..(ci + 1) * h * w];
                for (d, gv) in din.iter_mut().zip(g) {
                    *d = *d + wv * *gv;
                }
            }
        }
        return;
    }

    let padded = pad_one(input, cin, h, w);
    let (ph, pw) = (h + 2, w + 2);
    let mut d_padded = vec![F::zero(); cin * ph * pw];

    for co in 0..cout {
        let g_base = co * h * w;
        for ci in 0..cin {
            let src_base = ci * ph * pw;
            let w_base = (co * cin + ci) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = F::zero();
                    for y in 0..h {
                        let src = src_base + (y + ky) * pw + kx;
                        let gi = g_base + y * w;
                        acc = acc + dot(&padded[src..src + w], &d_out[gi..gi + w]);
                    }
                    d_weight[w_base + ky * 3 + kx] = d_weight[w_base + ky * 3 + kx] + acc;
                }
                for kx in 0..3 {
                    let wv = weight[w_base + ky * 3 + kx];
                    for y in 0..h {
                        let src = src_base + (y + ky) * pw + kx;
                        let gi = g_base + y * w;
                        let grow = &d_out[gi..gi + w];
                        let drow = &mut d_padded[src..src + w];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d = *d + wv * *gv;
                        }
                    }
                }
            }
        }
    }

    for ci in 0..cin {
        for y in 0..h {
            let src = ci * ph * pw + (y + 1) * pw + 1;
            let dst = ci * h * w + y * w;
            let (srow, drow) = (&d_padded[src..src + w], &mut d_input[dst..dst + w]);
            for (d, s) in drow.iter_mut().zip(srow) {
                *d = *d + *s;
            }
        }
    }
}

fn pad_one<F: Float>(input: &[F], c: usize, h: usize, w: usize) -> Vec<F> {
    let (ph, pw) = (h + 2, w + 2);
    let mut padded = vec![F::zero(); c * ph * pw];
    for ci in 0..c {
        for y in 0..h {
            let src = ci * h * w + y * w;
            let dst = ci * ph * pw + (y + 1) * pw + 1;
            padded[dst..dst + w].copy_from_slice(&input[src..src + w]);
        }
    }
    padded
}

// ============================================================================
// Group normalization
// ============================================================================

/// Normalizes channel groups to zero mean and unit variance, then applies a
/// per-channel affine. Writes the normalized values into `xhat` and the
/// per-group `(mean, inv_std)` into `stats` for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_forward<F: Float>(
    input: &[F],
    c: usize,
    groups: usize,
    h: usize,
    w: usize,
    gamma: &[F],
    beta: &[F],
    out: &mut [F],
    xhat: &mut [F],
    stats: &mut Vec<(F, F)>,
) {
    debug_assert_eq!(c % groups, 0);
    let cg = c / groups;
    let n = (cg * h * w) as f64;
    stats.clear();

    for g in 0..groups {
        let span = g * cg * h * w..(g + 1) * cg * h * w;
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for v in &input[span.clone()] {
            let x = v.to_f64().unwrap();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n;
        let var = (sumsq / n - mean * mean).max(0.0);
        let inv_std = 1.0 / (var + NORM_EPS).sqrt();
        stats.push((f(mean), f(inv_std)));

        let (mean_f, inv_f): (F, F) = (f(mean), f(inv_std));
        for i in span {
            xhat[i] = (input[i] - mean_f) * inv_f;
        }
    }

    for ch in 0..c {
        let span = ch * h * w..(ch + 1) * h * w;
        let (gm, bt) = (gamma[ch], beta[ch]);
        for i in span {
            out[i] = gm * xhat[i] + bt;
        }
    }
}

/// Reverse-mode pass for [`group_norm_forward`]. `d_input` is overwritten;
/// `d_gamma` / `d_beta` are accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<F: Float>(
    xhat: &[F],
    stats: &[(F, F)],
    c: usize,
    groups: usize,
    h: usize,
    w: usize,
    gamma: &[F],
    d_out: &[F],
    d_input: &mut [F],
    d_gamma: &mut [F],
    d_beta: &mut [F],
) {
    let cg = c / groups;
    let n = (cg * h * w) as f64;

    for ch in 0..c {
        let span = ch * h * w..(ch + 1) * h * w;
        let mut dg = 0.0f64;
        let mut db = 0.0f64;
        for i in span {
            dg += (d_out[i] * xhat[i]).to_f64().unwrap();
            db += d_out[i].to_f64().unwrap();
        }
        d_gamma[ch] = d_gamma[ch] + f(dg);
        d_beta[ch] = d_beta[ch] + f(db);
    }

    for (g, &(_, inv_std)) in stats.iter().enumerate().take(groups) {
        let span = g * cg * h * w..(g + 1) * cg * h * w;

        // Means of d_xhat and d_xhat * xhat over the group.
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for i in span.clone() {
            let ch = i / (h * w);
            let dxh = d_out[i] * gamma[ch];
            s1 += dxh.to_f64().unwrap();
            s2 += (dxh * xhat[i]).to_f64().unwrap();
        }
        let (m1, m2): (F, F) = (f(s1 / n), f(s2 / n));

        for i in span {
            let ch = i / (h * w);
            let dxh = d_out[i] * gamma[ch];
            d_input[i] = inv_std * (dxh - m1 - xhat[i] * m2);
        }
    }
}

// ============================================================================
// Pointwise activations
// ============================================================================

/// SiLU activation `x * sigmoid(x)`.
pub fn silu_forward<F: Float>(input: &[F], out: &mut [F]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = x * sigmoid(x);
    }
}

/// Reverse-mode pass for [`silu_forward`]; `d_input` is overwritten.
pub fn silu_backward<F: Float>(input: &[F], d_out: &[F], d_input: &mut [F]) {
    for ((d, &x), &g) in d_input.iter_mut().zip(input).zip(d_out) {
        let s = sigmoid(x);
        *d = g * (s + x * s * (F::one() - s));
    }
}

/// Logistic sigmoid applied elementwise.
pub fn sigmoid_forward<F: Float>(input: &[F], out: &mut [F]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = sigmoid(x);
    }
}

/// Reverse-mode pass for [`sigmoid_forward`] given the forward *output*.
pub fn sigmoid_backward<F: Float>(output: &[F], d_out: &[F], d_input: &mut [F]) {
    for ((d, &y), &g) in d_input.iter_mut().zip(output).zip(d_out) {
        *d = g * y * (F::one() - y);
    }
}

// ============================================================================
// Time-conditioned feature modulation
// ============================================================================

/// Projects an embedding vector to per-channel `(scale, shift)` and applies
/// `out = feat * (1 + scale) + shift`. `weight` is `[2c][e]`, `bias` `[2c]`;
/// the computed scales and shifts are written out for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn film_forward<F: Float>(
    feat: &[F],
    c: usize,
    h: usize,
    w: usize,
    emb: &[F],
    weight: &[F],
    bias: &[F],
    out: &mut [F],
    scale: &mut [F],
    shift: &mut [F],
) {
    let e = emb.len();
    for ch in 0..c {
        let mut s = bias[ch];
        let mut sh = bias[c + ch];
        for (i, &ev) in emb.iter().enumerate() {
            s = s + weight[ch * e + i] * ev;
            sh = sh + weight[(c + ch) * e + i] * ev;
        }
        scale[ch] = s;
        shift[ch] = sh;
        let span = ch * h * w..(ch + 1) * h * w;
        for i in span {
            out[i] = feat[i] * (F::one() + s) + sh;
        }
    }
}

/// Reverse-mode pass for [`film_forward`]. The embedding is a function of
/// the step index only, so no gradient flows into it. `d_feat` is
/// overwritten; `d_weight` / `d_bias` are accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn film_backward<F: Float>(
    feat: &[F],
    c: usize,
    h: usize,
    w: usize,
    emb: &[F],
    scale: &[F],
    d_out: &[F],
    d_feat: &mut [F],
    d_weight: &mut [F],
    d_bias: &mut [F],
) {
    let e = emb.len();
    for ch in 0..c {
        let span = ch * h * w..(ch + 1) * h * w;
        let mut d_scale = 0.0f64;
        let mut d_shift = 0.0f64;
        let one_plus = F::one() + scale[ch];
        for i in span {
            let g = d_out[i];
            d_scale += (g * feat[i]).to_f64().unwrap();
            d_shift += g.to_f64().unwrap();
            d_feat[i] = g * one_plus;
        }
        let (ds, dsh): (F, F) = (f(d_scale), f(d_shift));
        for (i, &ev) in emb.iter().enumerate() {
            d_weight[ch * e + i] = d_weight[ch * e + i] + ds * ev;
            d_weight[(c + ch) * e + i] = d_weight[(c + ch) * e + i] + dsh * ev;
        }
        d_bias[ch] = d_bias[ch] + ds;
        d_bias[c + ch] = d_bias[c + ch] + dsh;
    }
}

// ============================================================================
// Time embedding
// ============================================================================

/// Sinusoidal embedding of the normalized step `t / t_total`, `dim / 2`
/// sine features and `dim / 2` cosine features at geometrically spaced
/// frequencies from 1 to 1000. Distinct steps of a bridge up to a few
/// thousand steps map to distinct vectors.
pub fn time_embedding<F: Float>(t: usize, t_total: usize, dim: usize) -> Vec<F> {
    debug_assert!(dim >= 2 && dim.is_multiple_of(2));
    let half = dim / 2;
    let tau = t as f64 / t_total as f64;
    let mut emb = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 1000f64.powf(i as f64 / (half - 1) as f64);
        emb.push(f::<F>((freq * tau).sin()));
    }
    for i in 0..half {
        let freq = 1000f64.powf(i as f64 / (half - 1) as f64);
        emb.push(f::<F>((freq * tau).cos()));
    }
    emb
}

// ============================================================================
