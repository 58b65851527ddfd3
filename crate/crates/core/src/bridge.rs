//! Guided bridge diffusion between paired images.
//!
//! The forward process interpolates a target image toward its paired source
//! while injecting noise that vanishes at both endpoints; the reverse
//! process starts from the source and walks back along a (possibly
//! subsampled) step grid, each step combining the current state, the
//! source, and a predicted noise component. The predictor always sees the
//! current state concatenated with two guidance channels in the fixed order
//! `[state, attention, attenuation]`.
//!
//! Per-element arithmetic runs in `f64`; tensors store `f32`.

use crate::denoiser::{self, Denoiser};
use crate::error::{Error, Result};
use crate::prng::Prng;
use crate::schedule::BridgeSchedule;
use crate::tensor::Tensor;

/// Anything that can predict the noise component of a bridge state.
///
/// `x_cat` is `[H, W, 3]` in the channel order `[state, attention,
/// attenuation]`; the result is `[H, W, 1]`.
pub trait NoisePredictor {
    fn predict(&self, x_cat: &Tensor, t: usize) -> Result<Tensor>;
}

impl NoisePredictor for Denoiser {
    fn predict(&self, x_cat: &Tensor, t: usize) -> Result<Tensor> {
        self.denoise(x_cat, t)
    }
}

/// Runs a network with substituted (EMA shadow) weights.
pub struct EmaPredictor<'a> {
    net: &'a Denoiser,
    shadow: &'a [f32],
}

impl<'a> EmaPredictor<'a> {
    pub fn new(net: &'a Denoiser, shadow: &'a [f32]) -> Result<Self> {
        if shadow.len() != net.param_count() {
            return Err(Error::Config(
                "EMA shadow length does not match the network".into(),
            ));
        }
        Ok(EmaPredictor { net, shadow })
    }
}

impl NoisePredictor for EmaPredictor<'_> {
    fn predict(&self, x_cat: &Tensor, t: usize) -> Result<Tensor> {
        self.net.denoise_with(self.shadow, x_cat, t)
    }
}

/// Optional latent-space seam: translation can run on encoded images.
pub trait LatentCodec {
    fn encode(&self, image: &Tensor) -> Result<Tensor>;
    fn decode(&self, latent: &Tensor) -> Result<Tensor>;
}

/// Pixel-space "codec": both directions are the identity.
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn encode(&self, image: &Tensor) -> Result<Tensor> {
        Ok(image.clone())
    }

    fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        Ok(latent.clone())
    }
}

/// The two conditioning planes fed to the predictor alongside the state.
#[derive(Debug, Clone)]
pub struct GuidancePair {
    attention: Tensor,
    attenuation: Tensor,
}

impl GuidancePair {
    pub fn new(attention: Tensor, attenuation: Tensor) -> Result<Self> {
        for (name, map) in [("attention", &attention), ("attenuation", &attenuation)] {
            if map.shape().len() != 2 {
                return Err(Error::Shape {
                    op: "guidance",
                    expected: vec![0, 0],
                    got: map.shape().to_vec(),
                });
            }
            if map.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Range(format!("{name} map contains non-finite values")));
            }
        }
        if attention.shape() != attenuation.shape() {
            return Err(Error::Shape {
                op: "guidance",
                expected: attention.shape().to_vec(),
                got: attenuation.shape().to_vec(),
            });
        }
        Ok(GuidancePair {
            attention,
            attenuation,
        })
    }

    pub fn attention(&self) -> &Tensor {
        &self.attention
    }

    pub fn attenuation(&self) -> &Tensor {
        &self.attenuation
    }

    /// Concatenates a state plane with the guidance planes in the order the
    /// predictor expects.
    pub fn stack_input(&self, state: &Tensor) -> Result<Tensor> {
        Tensor::stack_channels(&[state, &self.attention, &self.attenuation])
    }
}

fn check_image_pair(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape().len() != 2 {
        return Err(Error::Shape {
            op,
            expected: vec![0, 0],
            got: a.shape().to_vec(),
        });
    }
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

// ============================================================================
// Forward process
// ============================================================================

/// State at step `t` for a given noise draw:
/// `(1 - m_t) x0 + m_t y + sqrt(delta_t) eps`.
pub fn forward_with_noise(
    sched: &BridgeSchedule,
    t: usize,
    x0: &Tensor,
    y: &Tensor,
    eps: &Tensor,
) -> Result<Tensor> {
    check_image_pair("forward", x0, y)?;
    check_image_pair("forward", x0, eps)?;
    if t > sched.steps() {
        return Err(Error::Index(format!("step {t} beyond T={}", sched.steps())));
    }
    let m = sched.m(t);
    let sd = sched.delta(t).sqrt();
    let data = x0
        .data()
        .iter()
        .zip(y.data())
        .zip(eps.data())
        .map(|((&a, &b), &e)| ((1.0 - m) * a as f64 + m * b as f64 + sd * e as f64) as f32)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Draws the noise and corrupts; returns `(x_t, eps)`.
pub fn forward_sample(
    sched: &BridgeSchedule,
    t: usize,
    x0: &Tensor,
    y: &Tensor,
    prng: &mut Prng,
) -> Result<(Tensor, Tensor)> {
    let eps = prng.normal_tensor(x0.shape().to_vec());
    let x_t = forward_with_noise(sched, t, x0, y, &eps)?;
    Ok((x_t, eps))
}

/// Regression target for the predictor: the total deviation `x_t - x0`.
pub fn noise_target(x_t: &Tensor, x0: &Tensor) -> Result<Tensor> {
    x_t.sub(x0)
}

// ============================================================================
// Reverse process
// ============================================================================

/// One reverse transition from step `t` down to step `s`.
///
/// The mean combines the current state, the source, and the predicted
/// deviation; `eta` scales the stochastic part, with `eta = 0` giving the
/// deterministic sampler. `z` must be provided exactly when `eta > 0`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    sched: &BridgeSchedule,
    s: usize,
    t: usize,
    x_t: &Tensor,
    y: &Tensor,
    eps_hat: &Tensor,
    z: Option<&Tensor>,
    eta: f64,
) -> Result<Tensor> {
    check_image_pair("reverse", x_t, y)?;
    check_image_pair("reverse", x_t, eps_hat)?;
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::Range(format!("eta must be finite and >= 0, got {eta}")));
    }
    let pair = sched.pair(s, t)?;
    let (cx, cy, ce) = (pair.coef_noisy(), pair.coef_source(), pair.coef_eps());
    let noise_scale = eta * pair.post_var.sqrt();

    let mut data: Vec<f32> = x_t
        .data()
        .iter()
        .zip(y.data())
        .zip(eps_hat.data())
        .map(|((&xv, &yv), &ev)| (cx * xv as f64 + cy * yv as f64 - ce * ev as f64) as f32)
        .collect();

    if eta > 0.0 && pair.post_var > 0.0 {
        let z = z.ok_or_else(|| {
            Error::Config("stochastic transition (eta > 0) requires a noise tensor".into())
        })?;
        check_image_pair("reverse", x_t, z)?;
        for (d, &zv) in data.iter_mut().zip(z.data()) {
            *d = (*d as f64 + noise_scale * zv as f64) as f32;
        }
    }
    Tensor::new(x_t.shape().to_vec(), data)
}

// ============================================================================
// Sampling
// ============================================================================

/// Reverse-walk settings: how many of the `T` steps to visit and how much
/// noise to reinject.
#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub steps: usize,
    pub eta: f64,
}

impl SamplerConfig {
    pub fn validate(&self, total: usize) -> Result<()> {
        if self.steps == 0 || self.steps > total {
            return Err(Error::Config(format!(
                "sampler steps must be in 1..={total}, got {}",
                self.steps
            )));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::Config(format!(
                "eta must be finite and >= 0, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Descending step grid: `k` evenly spaced values from `total` down to 1,
/// rounded and deduplicated.
pub fn evenly_spaced(total: usize, k: usize) -> Result<Vec<usize>> {
    if total == 0 || k == 0 || k > total {
        return Err(Error::Config(format!(
            "cannot place {k} sampling steps on a bridge of length {total}"
        )));
    }
    if k == 1 {
        return Ok(vec![total]);
    }
    let mut grid = Vec::with_capacity(k);
    for i in 0..k {
        let frac = i as f64 / (k - 1) as f64;
        let v = (total as f64 + frac * (1.0 - total as f64)).round() as usize;
        if grid.last() != Some(&v) {
            grid.push(v);
        }
    }
    Ok(grid)
}

/// Full reverse walk: starts at the source image and returns the translated
/// image at step 0. Noise is drawn from `prng` only for steps where the
/// transition is stochastic.
pub fn sample(
    sched: &BridgeSchedule,
    predictor: &dyn NoisePredictor,
    y: &Tensor,
    guidance: &GuidancePair,
    cfg: &SamplerConfig,
    prng: &mut Prng,
) -> Result<Tensor> {
    cfg.validate(sched.steps())?;
    check_image_pair("sample", y, guidance.attention())?;
    let grid = evenly_spaced(sched.steps(), cfg.steps)?;

    let mut x = y.clone();
    for (i, &t) in grid.iter().enumerate() {
        let s = grid.get(i + 1).copied().unwrap_or(0);
        let x_cat = guidance.stack_input(&x)?;
        let eps_hat = predictor.predict(&x_cat, t)?.reshape(y.shape().to_vec())?;
        let z = if cfg.eta > 0.0 && s > 0 {
            Some(prng.normal_tensor(y.shape().to_vec()))
        } else {
            None
        };
        x = reverse_step(sched, s, t, &x, y, &eps_hat, z.as_ref(), cfg.eta)?;
    }
    Ok(x)
}

/// [`sample`] through a latent codec: encodes the source, walks the bridge
/// in code space, and decodes the result. Guidance maps must already live
/// in code space.
pub fn translate(
    codec: &dyn LatentCodec,
    sched: &BridgeSchedule,
    predictor: &dyn NoisePredictor,
    y: &Tensor,
    guidance: &GuidancePair,
    cfg: &SamplerConfig,
    prng: &mut Prng,
) -> Result<Tensor> {
    let latent = codec.encode(y)?;
    let out = sample(sched, predictor, &latent, guidance, cfg, prng)?;
    codec.decode(&out)
}

// ============================================================================
// Training objective
// ============================================================================

/// Pointwise penalty on the prediction residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
}

/// Optional per-step weight on each batch item's loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossWeighting {
    /// Every step weighs the same.
    None,
    /// Weight by the single-step noise coefficient at the drawn step.
    NoiseCoef,
}

/// One training example: a clean target, its paired source, and the
/// guidance planes computed from the source.
pub struct TrainItem<'a> {
    pub x0: &'a Tensor,
    pub y: &'a Tensor,
    pub guidance: &'a GuidancePair,
}

/// Loss value and parameter gradient for one batch.
#[derive(Debug)]
pub struct LossReport {
    pub loss: f64,
    pub grads: Vec<f32>,
}

/// Monte-Carlo batch objective: each item gets an independent step and
/// noise draw, the state is corrupted, and the predictor is penalized on
/// its deviation estimate. Returns the mean (optionally step-weighted)
/// loss and its gradient.
pub fn training_loss(
    sched: &BridgeSchedule,
    net: &Denoiser,
    batch: &[TrainItem],
    kind: LossKind,
    weighting: LossWeighting,
    prng: &mut Prng,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let draws: Vec<(usize, Tensor)> = batch
        .iter()
        .map(|item| {
            let t = prng.range_inclusive(1, sched.steps() as u64) as usize;
            let eps = prng.normal_tensor(item.x0.shape().to_vec());
            (t, eps)
        })
        .collect();

    let b = batch.len() as f64;
    let mut loss = 0.0f64;
    let mut grads = vec![0.0f64; net.param_count()];

    for (item, (t, eps)) in batch.iter().zip(&draws) {
        check_image_pair("train", item.x0, item.y)?;
        let x_t = forward_with_noise(sched, *t, item.x0, item.y, eps)?;
        let target = noise_target(&x_t, item.x0)?;
        let x_cat = item.guidance.stack_input(&x_t)?;

        let shape = x_cat.shape();
        let (h, w) = (shape[0], shape[1]);
        let hw = (h * w) as f64;
        let planar = denoiser::hwc_to_planar(x_cat.data(), h, w, 3);
        let (out, trace) = denoiser::forward(net.spec(), net.params(), &planar, h, w, *t);

        let weight = match weighting {
            LossWeighting::None => 1.0,
            LossWeighting::NoiseCoef => sched.consecutive(*t)?.coef_eps(),
        };

        let mut d_out = vec![0.0f32; h * w];
        let mut item_loss = 0.0f64;
        for i in 0..h * w {
            let r = out[i] as f64 - target.data()[i] as f64;
            match kind {
                LossKind::L1 => {
                    item_loss += r.abs();
                    d_out[i] = (weight * r.signum() / (b * hw)) as f32;
                }
                LossKind::L2 => {
                    item_loss += r * r;
                    d_out[i] = (weight * 2.0 * r / (b * hw)) as f32;
                }
            }
        }
        loss += weight * item_loss / hw;

        let g = denoiser::backward(net.spec(), net.params(), &trace, &d_out);
        for (acc, gi) in grads.iter_mut().zip(&g) {
            *acc += *gi as f64;
        }
    }

    loss /= b;
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {loss}")));
    }
    Ok(LossReport {
        loss,
        grads: grads.into_iter().map(|g| g as f32).collect(),
    })
}

// ============================================================================
