//! Conditioning maps derived from the source image, plus the small
//! segmenter that predicts soft attention masks.
//!
//! The attenuation map converts raw CT values to Hounsfield units, looks up
//! a piecewise-linear attenuation coefficient, and exponentiates:
//! `exp(-mu * thickness)`, giving values in (0, 1]. The attention map is a
//! threshold mask of the target modality; at inference time it can come
//! from a segmenter trained here with Dice loss.

use serde::{Deserialize, Serialize};

use crate::denoiser::{self, optim::Adam, Denoiser, NetSpec};
use crate::error::{Error, Result};
use crate::metrics;
use crate::prng::Prng;
use crate::tensor::Tensor;

// ============================================================================
// Attenuation map
// ============================================================================

/// Piecewise-linear Hounsfield-to-attenuation-coefficient calibration.
/// Lookups clamp to the table domain, so values below the first breakpoint
/// reuse its coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct LacTable {
    breakpoints: Vec<f64>,
    mu: Vec<f64>,
}

/// JSON form of [`LacTable`]: segment slopes are derived, which makes the
/// curve continuous by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LacTableSpec {
    pub breakpoints: Vec<f64>,
    pub mu_at_breakpoints: Vec<f64>,
}

impl LacTable {
    pub fn new(breakpoints: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != mu.len() {
            return Err(Error::Config(format!(
                "LAC table needs one coefficient per breakpoint, got {} vs {}",
                breakpoints.len(),
                mu.len()
            )));
        }
        if breakpoints.len() < 3 {
            return Err(Error::Config(
                "LAC table needs at least two segments (three breakpoints)".into(),
            ));
        }
        if breakpoints.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("LAC breakpoints must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("LAC breakpoints must be strictly ascending".into()));
        }
        if mu.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "LAC coefficients must be finite and non-negative".into(),
            ));
        }
        Ok(LacTable { breakpoints, mu })
    }

    pub fn from_spec(spec: LacTableSpec) -> Result<Self> {
        Self::new(spec.breakpoints, spec.mu_at_breakpoints)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: LacTableSpec =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("LAC table JSON: {e}")))?;
        Self::from_spec(spec)
    }

    pub fn to_spec(&self) -> LacTableSpec {
        LacTableSpec {
            breakpoints: self.breakpoints.clone(),
            mu_at_breakpoints: self.mu.clone(),
        }
    }

    /// Attenuation coefficient (1/cm) at a Hounsfield value, clamped to the
    /// table domain.
    pub fn lookup_mu(&self, hu: f64) -> f64 {
        let first = self.breakpoints[0];
        let last = *self.breakpoints.last().unwrap();
        let hu = hu.clamp(first, last);
        let seg = match self
            .breakpoints
            .iter()
            .position(|&b| hu <= b)
            .unwrap_or(self.breakpoints.len() - 1)
        {
            0 => 0,
            i => i - 1,
        };
        let (b0, b1) = (self.breakpoints[seg], self.breakpoints[seg + 1]);
        let (m0, m1) = (self.mu[seg], self.mu[seg + 1]);
        m0 + (hu - b0) / (b1 - b0) * (m1 - m0)
    }
}

impl Default for LacTable {
    /// Three-segment placeholder calibration: zero at air, 0.096/cm at
    /// water, then two shallower soft-tissue/bone segments up to the
    /// 12-bit Hounsfield ceiling.
    fn default() -> Self {
        LacTable::new(
            vec![-1000.0, 0.0, 1000.0, 3071.0],
            vec![0.0, 0.096, 0.147, 0.20913],
        )
        .expect("default table is valid")
    }
}

/// Standard raw-to-Hounsfield rescale slope.
pub const HU_SLOPE: f64 = 1.0;
/// Standard raw-to-Hounsfield rescale intercept.
pub const HU_INTERCEPT: f64 = -1024.0;

/// Transmission map from a raw (non-negative) CT image:
/// `exp(-mu(slope * raw + intercept) * thickness_cm)` per pixel.
pub fn attenuation_map(
    ct_raw: &Tensor,
    slope: f64,
    intercept: f64,
    table: &LacTable,
    thickness_cm: f64,
) -> Result<Tensor> {
    if !(thickness_cm.is_finite() && thickness_cm > 0.0) {
        return Err(Error::Config(format!(
            "slice thickness must be positive, got {thickness_cm}"
        )));
    }
    if !(slope.is_finite() && intercept.is_finite()) {
        return Err(Error::Config("rescale slope/intercept must be finite".into()));
    }
    if ct_raw.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::Range("raw CT values must be finite and >= 0".into()));
    }
    let data = ct_raw
        .data()
        .iter()
        .map(|&raw| {
            let hu = slope * raw as f64 + intercept;
            (-table.lookup_mu(hu) * thickness_cm).exp() as f32
        })
        .collect();
    Tensor::new(ct_raw.shape().to_vec(), data)
}

// ============================================================================
// Attention map
// ============================================================================

/// Binary mask of pixels strictly above `threshold`.
pub fn attention_truth(pet: &Tensor, threshold: f32) -> Tensor {
    pet.map(|v| if v > threshold { 1.0 } else { 0.0 })
}

/// Default threshold: the 0.90 point of the image's dynamic range.
pub fn default_pet_threshold(pet: &Tensor) -> f32 {
    let lo = pet.min();
    let hi = pet.max();
    lo + 0.9 * (hi - lo)
}

// ============================================================================
// Dice loss
// ============================================================================

const DICE_EPS: f64 = 1e-6;

/// A predicted soft mask with its reference mask, both valued in [0, 1].
#[derive(Debug, Clone)]
pub struct MaskPair {
    predicted: Tensor,
    truth: Tensor,
}

impl MaskPair {
    pub fn new(predicted: Tensor, truth: Tensor) -> Result<Self> {
        if predicted.shape() != truth.shape() {
            return Err(Error::Shape {
                op: "mask pair",
                expected: predicted.shape().to_vec(),
                got: truth.shape().to_vec(),
            });
        }
        for (name, t) in [("predicted", &predicted), ("truth", &truth)] {
            if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Range(format!("{name} mask has values outside [0, 1]")));
            }
        }
        Ok(MaskPair { predicted, truth })
    }

    pub fn predicted(&self) -> &Tensor {
        &self.predicted
    }

    pub fn truth(&self) -> &Tensor {
        &self.truth
    }
}

/// Soft Dice loss `1 - (2 |P.T| + eps) / (|P| + |T| + eps)`; two empty
/// masks give 0.
pub fn dice_loss(pair: &MaskPair) -> f64 {
    let (num, den) = dice_terms(pair.predicted.data(), pair.truth.data());
    1.0 - num / den
}

fn dice_terms(pred: &[f32], truth: &[f32]) -> (f64, f64) {
    let mut inter = 0.0f64;
    let mut sums = 0.0f64;
    for (&p, &t) in pred.iter().zip(truth) {
        inter += p as f64 * t as f64;
        sums += p as f64 + t as f64;
    }
    (2.0 * inter + DICE_EPS, sums + DICE_EPS)
}

/// Gradient of [`dice_loss`] with respect to the prediction, scaled by
/// `scale` and written into `d_pred`.
fn dice_grad(pred: &[f32], truth: &[f32], scale: f64, d_pred: &mut [f32]) {
    let (num, den) = dice_terms(pred, truth);
    for (d, &t) in d_pred.iter_mut().zip(truth) {
        *d = (scale * -(2.0 * t as f64 * den - num) / (den * den)) as f32;
    }
}

// ============================================================================
// Segmenter training
// ============================================================================

/// Segmenter training-loop settings.
#[derive(Debug, Clone, Copy)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            epochs: 15,
            batch: 8,
            lr: 1e-3,
        }
    }
}

/// One line of segmenter training history.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SegEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_iou: f64,
}

/// Segmenter training outcome: the network restored to its best-validation
/// weights, plus the full history.
#[derive(Debug)]
pub struct SegTrainReport {
    pub net: Denoiser,
    pub best_iou: f64,
    pub best_epoch: usize,
    pub history: Vec<SegEpoch>,
}

/// Trains the single-channel sigmoid-head segmenter with Dice loss and
/// returns the checkpoint with the highest validation IoU (binarized at
/// 0.5), evaluated after every epoch.
pub fn train_segmenter(
    train: &[(Tensor, Tensor)],
    val: &[(Tensor, Tensor)],
    cfg: &SegTrainConfig,
    prng: &mut Prng,
) -> Result<SegTrainReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("segmenter needs non-empty train and val sets".into()));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::Config("segmenter epochs and batch must be >= 1".into()));
    }
    for (image, mask) in train.iter().chain(val) {
        if image.shape().len() != 2 || image.shape() != mask.shape() {
            return Err(Error::Shape {
                op: "segmenter data",
                expected: image.shape().to_vec(),
                got: mask.shape().to_vec(),
            });
        }
    }

    let mut net = Denoiser::init(NetSpec::segmenter(), prng)?;
    let mut adam = Adam::new(net.param_count());
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best_iou = -1.0f64;
    let mut best_epoch = 0usize;
    let mut best_params: Vec<f32> = net.params().to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        prng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0u64;

        for chunk in order.chunks(cfg.batch) {
            let mut grads = vec![0.0f64; net.param_count()];
            let mut batch_loss = 0.0f64;
            for &idx in chunk {
                let (image, mask) = &train[idx];
                let (h, w) = (image.shape()[0], image.shape()[1]);
                let (out, trace) = denoiser::forward(net.spec(), net.params(), image.data(), h, w, 1);

                let (num, den) = dice_terms(&out, mask.data());
                batch_loss += 1.0 - num / den;
                let mut d_out = vec![0.0f32; out.len()];
                dice_grad(&out, mask.data(), 1.0 / chunk.len() as f64, &mut d_out);

                let g = denoiser::backward(net.spec(), net.params(), &trace, &d_out);
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    *acc += *gi as f64;
                }
            }
            let grads: Vec<f32> = grads.into_iter().map(|g| g as f32).collect();
            adam.step(net.params_mut(), &grads, cfg.lr)?;
            epoch_loss += batch_loss / chunk.len() as f64;
            batches += 1;
        }

        let val_iou = validation_iou(&net, val)?;
        if val_iou > best_iou {
            best_iou = val_iou;
            best_epoch = epoch;
            best_params.copy_from_slice(net.params());
        }
        history.push(SegEpoch {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_iou,
        });
    }

    net.params_mut().copy_from_slice(&best_params);
    Ok(SegTrainReport {
        net,
        best_iou,
        best_epoch,
        history,
    })
}

/// Mean IoU of the segmenter's binarized predictions over a dataset.
pub fn validation_iou(net: &Denoiser, data: &[(Tensor, Tensor)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot validate on an empty set".into()));
    }
    let mut total = 0.0f64;
    for (image, mask) in data {
        let soft = predict_mask(net, image)?;
        total += metrics::iou(&soft, mask, 0.5)?;
    }
    Ok(total / data.len() as f64)
}

/// Runs the segmenter on one 2-D image, returning the soft mask.
pub fn predict_mask(net: &Denoiser, image: &Tensor) -> Result<Tensor> {
    let shape = image.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "predict_mask",
            expected: vec![0, 0],
            got: shape,
        });
    }
    let stacked = Tensor::stack_channels(&[image])?;
    net.denoise(&stacked, 1)?.reshape(shape)
}

// ============================================================================
