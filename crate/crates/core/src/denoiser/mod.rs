//! Small convolutional noise predictor with hand-rolled reverse-mode
//! gradients.
//!
//! The network is a fixed stack: a 3x3 stem convolution, four residual
//! blocks (group norm, SiLU, 3x3 convolution, time-conditioned scale/shift,
//! plus a 1x1 projection skip where the width changes), and a zero-initialized
//! 1x1 head, so a freshly initialized predictor outputs exactly zero. The
//! step index enters through a sinusoidal embedding projected per block.
//! Parameters live in one flat vector whose layout is derived from
//! [`NetSpec`]; checkpoints store that vector in a CPDT file next to a JSON
//! sidecar describing the layout.
//!
//! [`forward`] / [`backward`] are generic over the scalar so tests can rerun
//! the exact computation in `f64` against finite differences.

pub mod layers;
pub mod optim;

use std::ops::Range;
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::prng::Prng;
use crate::tensor::Tensor;
use layers::{
    conv_backward, conv_forward, film_backward, film_forward, group_norm_backward,
    group_norm_forward, sigmoid_backward, sigmoid_forward, silu_backward, silu_forward,
    time_embedding,
};

/// Architecture description; fully determines the parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Input channels (the noise predictor sees image + two guidance maps).
    pub in_channels: usize,
    /// Output width of each residual block.
    pub widths: Vec<usize>,
    /// Group count for group normalization.
    pub groups: usize,
    /// Sinusoidal time-embedding dimension.
    pub emb_dim: usize,
    /// Apply a logistic sigmoid to the head output.
    pub sigmoid_head: bool,
    /// Bridge length used to normalize the step index.
    pub time_steps: usize,
}

impl NetSpec {
    /// Standard noise-predictor configuration for a bridge of `time_steps`.
    pub fn noise_predictor(time_steps: usize) -> Self {
        NetSpec {
            in_channels: 3,
            widths: vec![16, 32, 32, 16],
            groups: 4,
            emb_dim: 32,
            sigmoid_head: false,
            time_steps,
        }
    }

    /// Single-channel segmenter: same backbone, sigmoid head, constant step.
    pub fn segmenter() -> Self {
        NetSpec {
            in_channels: 1,
            widths: vec![16, 32, 32, 16],
            groups: 4,
            emb_dim: 32,
            sigmoid_head: true,
            time_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if self.widths.is_empty() {
            return Err(Error::Config("widths must be non-empty".into()));
        }
        if self.groups == 0 || self.widths.iter().any(|w| !w.is_multiple_of(self.groups)) {
            return Err(Error::Config(format!(
                "groups ({}) must divide every width ({:?})",
                self.groups, self.widths
            )));
        }
        if self.emb_dim < 2 || !self.emb_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("emb_dim must be even and >= 2, got {}", self.emb_dim)));
        }
        if self.time_steps == 0 {
            return Err(Error::Config("time_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Total number of parameters.
    pub fn param_count(&self) -> usize {
        Layout::from_spec(self).count
    }
}

// ============================================================================
// Parameter layout
// ============================================================================

#[derive(Debug, Clone)]
struct ConvShape {
    cin: usize,
    cout: usize,
    k: usize,
    w: Range<usize>,
    b: Range<usize>,
}

#[derive(Debug, Clone)]
struct NormShape {
    c: usize,
    gamma: Range<usize>,
    beta: Range<usize>,
}

#[derive(Debug, Clone)]
struct FilmShape {
    w: Range<usize>,
    b: Range<usize>,
}

#[derive(Debug, Clone)]
struct BlockShape {
    norm: NormShape,
    conv: ConvShape,
    film: FilmShape,
    skip: Option<ConvShape>,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: ConvShape,
    blocks: Vec<BlockShape>,
    head_norm: NormShape,
    head_conv: ConvShape,
    count: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl Layout {
    fn conv(cur: &mut Cursor, cin: usize, cout: usize, k: usize) -> ConvShape {
        ConvShape {
            cin,
            cout,
            k,
            w: cur.take(cout * cin * k * k),
            b: cur.take(cout),
        }
    }

    fn from_spec(spec: &NetSpec) -> Layout {
        let mut cur = Cursor(0);
        let stem = Self::conv(&mut cur, spec.in_channels, spec.widths[0], 3);
        let mut blocks = Vec::with_capacity(spec.widths.len());
        let mut cin = spec.widths[0];
        for &cout in &spec.widths {
            let norm = NormShape {
                c: cin,
                gamma: cur.take(cin),
                beta: cur.take(cin),
            };
            let conv = Self::conv(&mut cur, cin, cout, 3);
            let film = FilmShape {
                w: cur.take(2 * cout * spec.emb_dim),
                b: cur.take(2 * cout),
            };
            let skip = (cin != cout).then(|| Self::conv(&mut cur, cin, cout, 1));
            blocks.push(BlockShape {
                norm,
                conv,
                film,
                skip,
            });
            cin = cout;
        }
        let head_norm = NormShape {
            c: cin,
            gamma: cur.take(cin),
            beta: cur.take(cin),
        };
        let head_conv = Self::conv(&mut cur, cin, 1, 1);
        Layout {
            stem,
            blocks,
            head_norm,
            head_conv,
            count: cur.0,
        }
    }
}

// ============================================================================
// Forward / backward
// ============================================================================

/// Saved activations from one forward pass, consumed by [`backward`].
pub struct Trace<F> {
    h: usize,
    w: usize,
    emb: Vec<F>,
    input: Vec<F>,
    stem_out: Vec<F>,
    blocks: Vec<BlockTrace<F>>,
    head_xhat: Vec<F>,
    head_stats: Vec<(F, F)>,
    head_norm_out: Vec<F>,
    head_act: Vec<F>,
    out: Vec<F>,
}

struct BlockTrace<F> {
    xhat: Vec<F>,
    stats: Vec<(F, F)>,
    norm_out: Vec<F>,
    act: Vec<F>,
    conv_out: Vec<F>,
    scale: Vec<F>,
    out: Vec<F>,
}

/// Runs the network on a planar `[C][H][W]` input at step `t`, returning the
/// `[H][W]` output and the trace needed for the backward pass.
pub fn forward<F: Float>(
    spec: &NetSpec,
    params: &[F],
    input: &[F],
    h: usize,
    w: usize,
    t: usize,
) -> (Vec<F>, Trace<F>) {
    let layout = Layout::from_spec(spec);
    debug_assert_eq!(params.len(), layout.count);
    debug_assert_eq!(input.len(), spec.in_channels * h * w);

    let emb: Vec<F> = time_embedding(t, spec.time_steps, spec.emb_dim);
    let hw = h * w;

    let mut stem_out = vec![F::zero(); layout.stem.cout * hw];
    conv_forward(
        input,
        layout.stem.cin,
        h,
        w,
        &params[layout.stem.w.clone()],
        &params[layout.stem.b.clone()],
        layout.stem.cout,
        3,
        &mut stem_out,
    );

    let mut blocks: Vec<BlockTrace<F>> = Vec::with_capacity(layout.blocks.len());
    for (bi, bs) in layout.blocks.iter().enumerate() {
        let cur: &[F] = if bi == 0 {
            &stem_out
        } else {
            &blocks[bi - 1].out
        };
        let (cin, cout) = (bs.conv.cin, bs.conv.cout);
        let mut xhat = vec![F::zero(); cin * hw];
        let mut norm_out = vec![F::zero(); cin * hw];
        let mut stats = Vec::new();
        group_norm_forward(
            cur,
            cin,
            spec.groups,
            h,
            w,
            &params[bs.norm.gamma.clone()],
            &params[bs.norm.beta.clone()],
            &mut norm_out,
            &mut xhat,
            &mut stats,
        );

        let mut act = vec![F::zero(); cin * hw];
        silu_forward(&norm_out, &mut act);

        let mut conv_out = vec![F::zero(); cout * hw];
        conv_forward(
            &act,
            cin,
            h,
            w,
            &params[bs.conv.w.clone()],
            &params[bs.conv.b.clone()],
            cout,
            3,
            &mut conv_out,
        );

        let mut film_out = vec![F::zero(); cout * hw];
        let mut scale = vec![F::zero(); cout];
        let mut shift = vec![F::zero(); cout];
        film_forward(
            &conv_out,
            cout,
            h,
            w,
            &emb,
            &params[bs.film.w.clone()],
            &params[bs.film.b.clone()],
            &mut film_out,
            &mut scale,
            &mut shift,
        );

        let mut out = film_out;
        match &bs.skip {
            Some(sk) => {
                let mut skip_out = vec![F::zero(); cout * hw];
                conv_forward(
                    cur,
                    cin,
                    h,
                    w,
                    &params[sk.w.clone()],
                    &params[sk.b.clone()],
                    cout,
                    1,
                    &mut skip_out,
                );
                for (o, s) in out.iter_mut().zip(&skip_out) {
                    *o = *o + *s;
                }
            }
            None => {
                for (o, s) in out.iter_mut().zip(cur) {
                    *o = *o + *s;
                }
            }
        }

        blocks.push(BlockTrace {
            xhat,
            stats,
            norm_out,
            act,
            conv_out,
            scale,
            out,
        });
    }

    let last = blocks.last().map(|b| b.out.as_slice()).unwrap_or(&stem_out);
    let cin = layout.head_norm.c;
    let mut head_xhat = vec![F::zero(); cin * hw];
    let mut head_norm_out = vec![F::zero(); cin * hw];
    let mut head_stats = Vec::new();
    group_norm_forward(
        last,
        cin,
        spec.groups,
        h,
        w,
        &params[layout.head_norm.gamma.clone()],
        &params[layout.head_norm.beta.clone()],
        &mut head_norm_out,
        &mut head_xhat,
        &mut head_stats,
    );
    let mut head_act = vec![F::zero(); cin * hw];
    silu_forward(&head_norm_out, &mut head_act);

    let mut lin = vec![F::zero(); hw];
    conv_forward(
        &head_act,
        cin,
        h,
        w,
        &params[layout.head_conv.w.clone()],
        &params[layout.head_conv.b.clone()],
        1,
        1,
        &mut lin,
    );

    let out = if spec.sigmoid_head {
        let mut o = vec![F::zero(); hw];
        sigmoid_forward(&lin, &mut o);
        o
    } else {
        lin
    };

    let trace = Trace {
        h,
        w,
        emb,
        input: input.to_vec(),
        stem_out,
        blocks,
        head_xhat,
        head_stats,
        head_norm_out,
        head_act,
        out: out.clone(),
    };
    (out, trace)
}

/// Reverse-mode pass: gradient of a scalar loss with respect to every
/// parameter, given the loss gradient `d_out` at the network output.
pub fn backward<F: Float>(spec: &NetSpec, params: &[F], trace: &Trace<F>, d_out: &[F]) -> Vec<F> {
    let layout = Layout::from_spec(spec);
    let (h, w) = (trace.h, trace.w);
    let hw = h * w;
    let mut grads = vec![F::zero(); layout.count];

    let mut d_lin = vec![F::zero(); hw];
    if spec.sigmoid_head {
        sigmoid_backward(&trace.out, d_out, &mut d_lin);
    } else {
        d_lin.copy_from_slice(d_out);
    }

    let cin = layout.head_norm.c;
    let mut d_head_act = vec![F::zero(); cin * hw];
    {
        let (wr, br) = (layout.head_conv.w.clone(), layout.head_conv.b.clone());
        let (dw, db) = ranges_mut(&mut grads, wr.clone(), br);
        conv_backward(
            &trace.head_act,
            cin,
            h,
            w,
            &params[wr],
            1,
            1,
            &d_lin,
            &mut d_head_act,
            dw,
            db,
        );
    }

    let mut d_head_norm = vec![F::zero(); cin * hw];
    silu_backward(&trace.head_norm_out, &d_head_act, &mut d_head_norm);

    let mut d_cur = vec![F::zero(); cin * hw];
    {
        let (gr, br) = (layout.head_norm.gamma.clone(), layout.head_norm.beta.clone());
        let (dg, db) = ranges_mut(&mut grads, gr.clone(), br);
        group_norm_backward(
            &trace.head_xhat,
            &trace.head_stats,
            cin,
            spec.groups,
            h,
            w,
            &params[gr],
            &d_head_norm,
            &mut d_cur,
            dg,
            db,
        );
    }

    for (i, bs) in layout.blocks.iter().enumerate().rev() {
        let bt = &trace.blocks[i];
        let (cin, cout) = (bs.conv.cin, bs.conv.cout);
        let block_in: &[F] = if i == 0 {
            &trace.stem_out
        } else {
            &trace.blocks[i - 1].out
        };

        let mut d_conv_out = vec![F::zero(); cout * hw];
        {
            let (wr, br) = (bs.film.w.clone(), bs.film.b.clone());
            let (dw, db) = ranges_mut(&mut grads, wr, br);
            film_backward(
                &bt.conv_out,
                cout,
                h,
                w,
                &trace.emb,
                &bt.scale,
                &d_cur,
                &mut d_conv_out,
                dw,
                db,
            );
        }

        let mut d_act = vec![F::zero(); cin * hw];
        {
            let (wr, br) = (bs.conv.w.clone(), bs.conv.b.clone());
            let (dw, db) = ranges_mut(&mut grads, wr.clone(), br);
            conv_backward(
                &bt.act, cin, h, w, &params[wr], cout, 3, &d_conv_out, &mut d_act, dw, db,
            );
        }

        let mut d_norm_out = vec![F::zero(); cin * hw];
        silu_backward(&bt.norm_out, &d_act, &mut d_norm_out);

        let mut d_in_main = vec![F::zero(); cin * hw];
        {
            let (gr, br) = (bs.norm.gamma.clone(), bs.norm.beta.clone());
            let (dg, db) = ranges_mut(&mut grads, gr.clone(), br);
            group_norm_backward(
                &bt.xhat,
                &bt.stats,
                cin,
                spec.groups,
                h,
                w,
                &params[gr],
                &d_norm_out,
                &mut d_in_main,
                dg,
                db,
            );
        }

        // Skip path: d_cur flows through the projection (or identity).
        match &bs.skip {
            Some(sk) => {
                let (wr, br) = (sk.w.clone(), sk.b.clone());
                let (dw, db) = ranges_mut(&mut grads, wr.clone(), br);
                conv_backward(
                    block_in, cin, h, w, &params[wr], cout, 1, &d_cur, &mut d_in_main, dw, db,
                );
            }
            None => {
                for (d, g) in d_in_main.iter_mut().zip(&d_cur) {
                    *d = *d + *g;
                }
            }
        }
        d_cur = d_in_main;
    }

    {
        let (wr, br) = (layout.stem.w.clone(), layout.stem.b.clone());
        let (dw, db) = ranges_mut(&mut grads, wr.clone(), br);
        let mut d_input = vec![F::zero(); spec.in_channels * hw];
        conv_backward(
            &trace.input,
            spec.in_channels,
            h,
            w,
            &params[wr],
            layout.stem.cout,
            3,
            &d_cur,
            &mut d_input,
            dw,
            db,
        );
    }

    grads
}

/// Two disjoint mutable range views into one slice.
fn ranges_mut<F>(buf: &mut [F], a: Range<usize>, b: Range<usize>) -> (&mut [F], &mut [F]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = buf.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}

// ============================================================================
// Parameter container and public inference API
// ============================================================================

/// A noise predictor (or segmenter): spec plus flat `f32` parameters.
#[derive(Debug, Clone)]
pub struct Denoiser {
    spec: NetSpec,
    params: Vec<f32>,
}

impl Denoiser {
    /// Randomly initializes a network: He-scaled normals for convolution
    /// weights, identity normalization, zeroed time projections, and a
    /// zeroed head so the initial output is exactly zero.
    pub fn init(spec: NetSpec, prng: &mut Prng) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::from_spec(&spec);
        let mut params = vec![0.0f32; layout.count];

        let init_conv = |shape: &ConvShape, params: &mut [f32], prng: &mut Prng| {
            let fan_in = (shape.cin * shape.k * shape.k) as f64;
            let std = (2.0 / fan_in).sqrt();
            for i in shape.w.clone() {
                params[i] = (prng.normal() * std) as f32;
            }
        };

        init_conv(&layout.stem, &mut params, prng);
        for bs in &layout.blocks {
            params[bs.norm.gamma.clone()].fill(1.0);
            init_conv(&bs.conv, &mut params, prng);
            if let Some(sk) = &bs.skip {
                init_conv(sk, &mut params, prng);
            }
        }
        params[layout.head_norm.gamma.clone()].fill(1.0);
        // Head convolution stays zero.

        Ok(Denoiser { spec, params })
    }

    /// Wraps an existing parameter vector (checkpoint loading).
    pub fn from_params(spec: NetSpec, params: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_count();
        if params.len() != expected {
            return Err(Error::Format {
                offset: 0,
                reason: format!(
                    "parameter count {} does not match layout ({} expected)",
                    params.len(),
                    expected
                ),
            });
        }
        Ok(Denoiser { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Predicts the noise component from an `[H, W, C]` input at step `t`
    /// (`1 <= t <= time_steps`), returning an `[H, W, 1]` tensor.
    pub fn denoise(&self, x_cat: &Tensor, t: usize) -> Result<Tensor> {
        self.denoise_with(&self.params, x_cat, t)
    }

    /// Same as [`Self::denoise`] but with substituted weights of identical
    /// layout (used to run the EMA shadow).
    pub fn denoise_with(&self, params: &[f32], x_cat: &Tensor, t: usize) -> Result<Tensor> {
        if params.len() != self.params.len() {
            return Err(Error::Config("substituted weights have wrong length".into()));
        }
        if t == 0 || t > self.spec.time_steps {
            return Err(Error::Index(format!(
                "step {t} outside 1..={}",
                self.spec.time_steps
            )));
        }
        let shape = x_cat.shape();
        if shape.len() != 3 || shape[2] != self.spec.in_channels {
            return Err(Error::Shape {
                op: "denoise",
                expected: vec![0, 0, self.spec.in_channels],
                got: shape.to_vec(),
            });
        }
        let (h, w) = (shape[0], shape[1]);
        let planar = hwc_to_planar(x_cat.data(), h, w, self.spec.in_channels);
        let (out, _) = forward(&self.spec, params, &planar, h, w, t);
        Tensor::new(vec![h, w, 1], out)
    }
}

/// Interleaved `[H, W, C]` to planar `[C][H][W]`.
pub fn hwc_to_planar(src: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; c * h * w];
    for pix in 0..h * w {
        for ch in 0..c {
            out[ch * h * w + pix] = src[pix * c + ch];
        }
    }
    out
}

// ============================================================================
// Checkpoints
// ============================================================================

/// Training metadata stored in the checkpoint sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step_count: u64,
    pub lr: f64,
    pub ema: bool,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    layout: NetSpec,
    step_count: u64,
    lr: f64,
    ema: bool,
}

/// Writes `<stem>.cpdt` (parameters), `<stem>.json` (layout + metadata),
/// and `<stem>_ema.cpdt` when an EMA shadow is provided.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    net: &Denoiser,
    ema: Option<&[f32]>,
    meta: &CheckpointMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let n = net.params.len();
    container::save_tensor(
        dir.join(format!("{stem}.cpdt")),
        &Tensor::new(vec![n], net.params.clone())?,
    )?;
    if let Some(shadow) = ema {
        container::save_tensor(
            dir.join(format!("{stem}_ema.cpdt")),
            &Tensor::new(vec![n], shadow.to_vec())?,
        )?;
    }
    let sidecar = Sidecar {
        layout: net.spec.clone(),
        step_count: meta.step_count,
        lr: meta.lr,
        ema: ema.is_some(),
    };
    let json_path = dir.join(format!("{stem}.json"));
    let body = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Config(format!("sidecar serialization: {e}")))?;
    std::fs::write(&json_path, body).map_err(Error::io(json_path))
}

/// Loads a checkpoint saved by [`save_checkpoint`]. The parameter vector is
/// validated against the layout described in the sidecar.
pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(Denoiser, Option<Vec<f32>>, CheckpointMeta)> {
    let json_path = dir.join(format!("{stem}.json"));
    let body = std::fs::read_to_string(&json_path).map_err(Error::io(&json_path))?;
    let sidecar: Sidecar = serde_json::from_str(&body).map_err(|e| Error::Format {
        offset: 0,
        reason: format!("{}: {e}", json_path.display()),
    })?;

    let params = container::load_tensor(dir.join(format!("{stem}.cpdt")))?;
    let net = Denoiser::from_params(sidecar.layout.clone(), params.into_data())?;

    let ema = if sidecar.ema {
        let shadow = container::load_tensor(dir.join(format!("{stem}_ema.cpdt")))?;
        if shadow.len() != net.param_count() {
            return Err(Error::Format {
                offset: 0,
                reason: "EMA shadow length does not match layout".into(),
            });
        }
        Some(shadow.into_data())
    } else {
        None
    };

    let meta = CheckpointMeta {
        step_count: sidecar.step_count,
        lr: sidecar.lr,
        ema: ema.is_some(),
    };
    Ok((net, ema, meta))
}

// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetSpec {
        NetSpec {
            in_channels: 2,
            widths: vec![4, 4],
            groups: 2,
            emb_dim: 4,
            sigmoid_head: false,
            time_steps: 10,
        }
    }

    #[test]
    fn default_spec_is_under_the_parameter_budget() {
        let spec = NetSpec::noise_predictor(1000);
        let n = spec.param_count();
        assert!(n > 10_000 && n < 200_000, "param count {n}");
    }

    #[test]
    fn tiny_spec_is_small_enough_for_finite_differences() {
        assert!(tiny_spec().param_count() <= 500, "count {}", tiny_spec().param_count());
    }

    #[test]
    fn fresh_network_outputs_exactly_zero() {
        let mut p = Prng::new(1, "init");
        let net = Denoiser::init(NetSpec::noise_predictor(100), &mut p).unwrap();
        let x = Tensor::filled(vec![16, 16, 3], 0.37);
        let out = net.denoise(&x, 55).unwrap();
        assert_eq!(out.shape(), &[16, 16, 1]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn denoise_is_deterministic() {
        let mut p = Prng::new(2, "det");
        let mut net = Denoiser::init(NetSpec::noise_predictor(50), &mut p).unwrap();
        // Perturb the head so outputs are non-trivial.
        let n = net.param_count();
        for v in &mut net.params_mut()[n - 17..] {
            *v = 0.05;
        }
        let x = p.normal_tensor(vec![16, 16, 3]);
        let a = net.denoise(&x, 25).unwrap();
        let b = net.denoise(&x, 25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn denoise_validates_step_and_shape() {
        let mut p = Prng::new(3, "val");
        let net = Denoiser::init(NetSpec::noise_predictor(10), &mut p).unwrap();
        let ok = Tensor::zeros(vec![16, 16, 3]);
        assert!(net.denoise(&ok, 0).is_err());
        assert!(net.denoise(&ok, 11).is_err());
        let bad = Tensor::zeros(vec![16, 16, 2]);
        assert!(matches!(net.denoise(&bad, 5), Err(Error::Shape { .. })));
    }

    #[test]
    fn segmenter_output_is_in_unit_interval() {
        let mut p = Prng::new(4, "seg");
        let net = Denoiser::init(NetSpec::segmenter(), &mut p).unwrap();
        let x = p.normal_tensor(vec![16, 16, 1]);
        let out = net.denoise(&x, 1).unwrap();
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let spec = tiny_spec();
        let n = spec.param_count();
        let mut p = Prng::new(5, "e2e-fd");
        let params: Vec<f64> = (0..n).map(|_| p.normal() * 0.3).collect();
        let (h, w) = (5usize, 4usize);
        let input: Vec<f64> = (0..spec.in_channels * h * w).map(|_| p.normal()).collect();
        let proj: Vec<f64> = (0..h * w).map(|_| p.normal()).collect();
        let t = 7usize;

        let loss = |ps: &[f64]| -> f64 {
            let (out, _) = forward(&spec, ps, &input, h, w, t);
            out.iter().zip(&proj).map(|(o, r)| o * r).sum()
        };

        let (_, trace) = forward(&spec, &params, &input, h, w, t);
        let grads = backward(&spec, &params, &trace, &proj);

        let hstep = 1e-3;
        let mut worst = 0.0f64;
        let mut pt = params.clone();
        for i in 0..n {
            pt[i] = params[i] + hstep;
            let up = loss(&pt);
            pt[i] = params[i] - hstep;
            let dn = loss(&pt);
            pt[i] = params[i];
            let fd = (up - dn) / (2.0 * hstep);
            let rel = (grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn f32_and_f64_paths_agree() {
        let spec = tiny_spec();
        let n = spec.param_count();
        let mut p = Prng::new(6, "precision");
        let params32: Vec<f32> = (0..n).map(|_| (p.normal() * 0.3) as f32).collect();
        let params64: Vec<f64> = params32.iter().map(|&v| v as f64).collect();
        let (h, w) = (6usize, 6usize);
        let input32: Vec<f32> = (0..spec.in_channels * h * w)
            .map(|_| p.normal() as f32)
            .collect();
        let input64: Vec<f64> = input32.iter().map(|&v| v as f64).collect();

        let (o32, _) = forward(&spec, &params32, &input32, h, w, 3);
        let (o64, _) = forward(&spec, &params64, &input64, h, w, 3);
        for (a, b) in o32.iter().zip(&o64) {
            assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_everything() {
        let dir = std::env::temp_dir().join("cpdm-ckpt-test");
        std::fs::remove_dir_all(&dir).ok();
        let mut p = Prng::new(7, "ckpt");
        let net = Denoiser::init(NetSpec::noise_predictor(200), &mut p).unwrap();
        let ema: Vec<f32> = net.params().iter().map(|v| v * 0.5).collect();
        let meta = CheckpointMeta {
            step_count: 123,
            lr: 5e-4,
            ema: true,
        };
        save_checkpoint(&dir, "net", &net, Some(&ema), &meta).unwrap();
        let (back, ema_back, meta_back) = load_checkpoint(&dir, "net").unwrap();
        assert_eq!(back.spec(), net.spec());
        assert_eq!(back.params(), net.params());
        assert_eq!(ema_back.as_deref(), Some(ema.as_slice()));
        assert_eq!(meta_back, meta);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn loader_rejects_mismatched_parameter_count() {
        let dir = std::env::temp_dir().join("cpdm-ckpt-mismatch");
        std::fs::remove_dir_all(&dir).ok();
        let mut p = Prng::new(8, "ckpt2");
        let net = Denoiser::init(NetSpec::noise_predictor(200), &mut p).unwrap();
        let meta = CheckpointMeta {
            step_count: 1,
            lr: 1e-4,
            ema: false,
        };
        save_checkpoint(&dir, "net", &net, None, &meta).unwrap();
        // Overwrite the tensor with one of the wrong length.
        container::save_tensor(dir.join("net.cpdt"), &Tensor::zeros(vec![10])).unwrap();
        assert!(matches!(
            load_checkpoint(&dir, "net"),
            Err(Error::Format { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
