//! Image-quality metrics (MAE, PSNR, SSIM, IoU) and the evaluation report.
//!
//! All reductions accumulate in `f64`. PSNR of identical images is the
//! `+inf` sentinel, serialized as `null` in JSON and `inf` in CSV.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_shapes(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean absolute difference.
pub fn mae(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_shapes("mae", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Peak signal-to-noise ratio in dB against a dynamic-range maximum.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, max_value: f64) -> Result<f64> {
    check_shapes("psnr", a, b)?;
    if !(max_value.is_finite() && max_value > 0.0) {
        return Err(Error::Config(format!(
            "PSNR max_value must be positive, got {max_value}"
        )));
    }
    let e = mse(a, b);
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / e).log10())
}

/// Window shape and stabilizing constants for [`ssim`].
#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Structural similarity with the default 11x11 Gaussian window.
pub fn ssim(a: &Tensor, b: &Tensor, max_value: f64) -> Result<f64> {
    ssim_with(a, b, max_value, &SsimConfig::default())
}

/// Structural similarity: mean over all fully contained Gaussian-weighted
/// windows of the luminance/contrast/structure product.
pub fn ssim_with(a: &Tensor, b: &Tensor, max_value: f64, cfg: &SsimConfig) -> Result<f64> {
    check_shapes("ssim", a, b)?;
    if a.shape().len() != 2 {
        return Err(Error::Shape {
            op: "ssim",
            expected: vec![0, 0],
            got: a.shape().to_vec(),
        });
    }
    if !(max_value.is_finite() && max_value > 0.0) {
        return Err(Error::Config(format!(
            "SSIM max_value must be positive, got {max_value}"
        )));
    }
    if cfg.window == 0 || cfg.sigma <= 0.0 {
        return Err(Error::Config("SSIM window and sigma must be positive".into()));
    }
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let k = cfg.window;
    if h < k || w < k {
        return Err(Error::Config(format!(
            "image {h}x{w} is smaller than the {k}x{k} SSIM window"
        )));
    }

    let kernel = gaussian_kernel(k, cfg.sigma);
    let c1 = (cfg.k1 * max_value).powi(2);
    let c2 = (cfg.k2 * max_value).powi(2);

    let mut total = 0.0f64;
    let mut windows = 0u64;
    for top in 0..=h - k {
        for left in 0..=w - k {
            let mut mu_x = 0.0;
            let mut mu_y = 0.0;
            let mut xx = 0.0;
            let mut yy = 0.0;
            let mut xy = 0.0;
            for i in 0..k {
                let row = (top + i) * w + left;
                let krow = i * k;
                for j in 0..k {
                    let wt = kernel[krow + j];
                    let x = a.data()[row + j] as f64;
                    let y = b.data()[row + j] as f64;
                    mu_x += wt * x;
                    mu_y += wt * y;
                    xx += wt * x * x;
                    yy += wt * y * y;
                    xy += wt * x * y;
                }
            }
            let var_x = xx - mu_x * mu_x;
            let var_y = yy - mu_y * mu_y;
            let cov = xy - mu_x * mu_y;
            let num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
            let den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

fn gaussian_kernel(k: usize, sigma: f64) -> Vec<f64> {
    let center = (k as f64 - 1.0) / 2.0;
    let mut kernel = Vec::with_capacity(k * k);
    let mut sum = 0.0;
    for i in 0..k {
        for j in 0..k {
            let di = i as f64 - center;
            let dj = j as f64 - center;
            let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            kernel.push(v);
            sum += v;
        }
    }
    for v in &mut kernel {
        *v /= sum;
    }
    kernel
}

/// Intersection over union after binarizing both masks at `threshold`.
/// Two empty masks count as a perfect match.
pub fn iou(pred: &Tensor, truth: &Tensor, threshold: f32) -> Result<f64> {
    check_shapes("iou", pred, truth)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let p = p > threshold;
        let t = t > threshold;
        inter += (p && t) as u64;
        union += (p || t) as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

// ============================================================================
// Evaluation report
// ============================================================================

mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            ser.serialize_some(v)
        } else {
            ser.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(de)?.unwrap_or(f64::INFINITY))
    }
}

/// Metrics for one evaluated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEval {
    pub id: String,
    pub mae: f64,
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

/// Dataset-level means; `perceptual` is reserved for a plug-in distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mae: f64,
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub iou: Option<f64>,
    pub perceptual: Option<f64>,
}

/// Full evaluation output: per-image rows plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub max_value: f64,
    pub per_image: Vec<PairEval>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    /// Aggregates per-image rows by arithmetic mean. An infinite PSNR
    /// propagates into the aggregate; the IoU mean appears only when every
    /// row has one.
    pub fn from_rows(max_value: f64, per_image: Vec<PairEval>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Config("cannot aggregate an empty evaluation".into()));
        }
        let n = per_image.len() as f64;
        let mae = per_image.iter().map(|r| r.mae).sum::<f64>() / n;
        let psnr_db = per_image.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let ssim = per_image.iter().map(|r| r.ssim).sum::<f64>() / n;
        let iou = per_image
            .iter()
            .map(|r| r.iou)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Ok(EvalReport {
            max_value,
            per_image,
            aggregate: Aggregate {
                mae,
                psnr_db,
                ssim,
                iou,
                perceptual: None,
            },
        })
    }

    /// CSV twin of the JSON report: one row per image, then the aggregate.
    pub fn to_csv(&self) -> String {
        fn num(v: f64) -> String {
            if v.is_finite() {
                format!("{v}")
            } else {
                "inf".into()
            }
        }
        let mut out = String::from("id,mae,psnr_db,ssim,iou\n");
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        for row in &self.per_image {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.id,
                num(row.mae),
                num(row.psnr_db),
                num(row.ssim),
                opt(row.iou)
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "aggregate,{},{},{},{}\n",
            num(a.mae),
            num(a.psnr_db),
            num(a.ssim),
            opt(a.iou)
        ));
        out
    }
}

// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;

    #[test]
    fn mae_hand_cases() {
        let a = Tensor::new(vec![2], vec![0.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &b).unwrap(), 1.0);
        let c = a.offset(-3.5);
        assert!((mae(&a, &c).unwrap() - 3.5).abs() < 1e-9);
    }

    #[test]
    fn psnr_hand_cases() {
        let zero = Tensor::zeros(vec![4, 4]);
        let full = Tensor::filled(vec![4, 4], 255.0);
        assert!((psnr(&zero, &full, 255.0).unwrap()).abs() < 1e-12);
        assert!(psnr(&zero, &zero, 255.0).unwrap().is_infinite());
        let d = Tensor::filled(vec![4, 4], 65.025f64.sqrt() as f32);
        let got = psnr(&zero, &d, 255.0).unwrap();
        assert!((got - 30.0).abs() < 1e-4, "got {got}");
    }

    #[test]
    fn psnr_rejects_bad_max() {
        let a = Tensor::zeros(vec![2, 2]);
        assert!(psnr(&a, &a, 0.0).is_err());
        assert!(psnr(&a, &a, f64::NAN).is_err());
    }

    #[test]
    fn metrics_reject_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![3, 2]);
        assert!(matches!(mae(&a, &b), Err(Error::Shape { .. })));
        assert!(matches!(psnr(&a, &b, 1.0), Err(Error::Shape { .. })));
        assert!(matches!(ssim(&a, &b, 1.0), Err(Error::Shape { .. })));
        assert!(matches!(iou(&a, &b, 0.5), Err(Error::Shape { .. })));
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut p = Prng::new(1, "ssim");
        let a = p.normal_tensor(vec![16, 16]);
        let v = ssim(&a, &a, 2.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn ssim_luminance_only_case_matches_hand_value() {
        let max = 100.0;
        let a = Tensor::filled(vec![12, 12], 25.0);
        let b = Tensor::filled(vec![12, 12], 75.0);
        // Constant images: variance terms vanish, the contrast/structure
        // factor is c2/c2 = 1, leaving (2 mu_x mu_y + c1)/(mu_x^2 + mu_y^2 + c1)
        // = 3751/6251.
        let got = ssim(&a, &b, max).unwrap();
        let expected = 3751.0 / 6251.0;
        assert!((got - expected).abs() < 1e-9, "got {got}, expected {expected}");
    }

    #[test]
    fn ssim_is_negative_for_anticorrelated_patterns() {
        let mut data = vec![0.0f32; 16 * 16];
        for r in 0..16 {
            for c in 0..16 {
                data[r * 16 + c] = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        let a = Tensor::new(vec![16, 16], data).unwrap();
        let b = a.scale(-1.0);
        let v = ssim(&a, &b, 2.0).unwrap();
        assert!(v < 0.0, "got {v}");
    }

    #[test]
    fn ssim_stays_in_unit_band_and_is_symmetric() {
        let mut p = Prng::new(2, "ssim-band");
        for _ in 0..5 {
            let a = p.normal_tensor(vec![14, 15]);
            let b = p.normal_tensor(vec![14, 15]);
            let ab = ssim(&a, &b, 4.0).unwrap();
            let ba = ssim(&b, &a, 4.0).unwrap();
            assert!((-1.0..=1.0).contains(&ab), "out of band: {ab}");
            assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_rejects_images_smaller_than_the_window() {
        let a = Tensor::zeros(vec![10, 20]);
        assert!(matches!(ssim(&a, &a, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn iou_hand_cases() {
        let ones = Tensor::filled(vec![4, 4], 1.0);
        let zeros = Tensor::zeros(vec![4, 4]);
        assert_eq!(iou(&ones, &ones, 0.5).unwrap(), 1.0);
        assert_eq!(iou(&ones, &zeros, 0.5).unwrap(), 0.0);
        assert_eq!(iou(&zeros, &zeros, 0.5).unwrap(), 1.0);

        // Truth covers the left half, prediction the left quarter.
        let mut truth = vec![0.0f32; 16];
        let mut pred = vec![0.0f32; 16];
        for r in 0..4 {
            truth[r * 4] = 1.0;
            truth[r * 4 + 1] = 1.0;
            pred[r * 4] = 1.0;
        }
        let truth = Tensor::new(vec![4, 4], truth).unwrap();
        let pred = Tensor::new(vec![4, 4], pred).unwrap();
        assert_eq!(iou(&pred, &truth, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn iou_respects_the_binarize_threshold() {
        let soft = Tensor::filled(vec![2, 2], 0.4);
        let hard = Tensor::filled(vec![2, 2], 1.0);
        assert_eq!(iou(&soft, &hard, 0.5).unwrap(), 0.0);
        assert_eq!(iou(&soft, &hard, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn report_serializes_infinite_psnr_as_null() {
        let report = EvalReport::from_rows(
            255.0,
            vec![PairEval {
                id: "p0".into(),
                mae: 1.0,
                psnr_db: f64::INFINITY,
                ssim: 1.0,
                iou: None,
            }],
        )
        .unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"psnr_db\":null"), "json: {json}");
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert!(back.per_image[0].psnr_db.is_infinite());
        assert!(back.aggregate.psnr_db.is_infinite());
        let csv = report.to_csv();
        assert!(csv.contains(",inf,"), "csv: {csv}");
        assert!(csv.starts_with("id,mae,psnr_db,ssim,iou\n"));
    }

    #[test]
    fn report_aggregates_by_mean_and_needs_rows() {
        let rows = vec![
            PairEval {
                id: "a".into(),
                mae: 2.0,
                psnr_db: 20.0,
                ssim: 0.5,
                iou: Some(0.4),
            },
            PairEval {
                id: "b".into(),
                mae: 4.0,
                psnr_db: 40.0,
                ssim: 0.7,
                iou: Some(0.8),
            },
        ];
        let report = EvalReport::from_rows(100.0, rows).unwrap();
        assert_eq!(report.aggregate.mae, 3.0);
        assert_eq!(report.aggregate.psnr_db, 30.0);
        assert!((report.aggregate.ssim - 0.6).abs() < 1e-12);
        assert!((report.aggregate.iou.unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(report.aggregate.perceptual, None);
        assert!(EvalReport::from_rows(100.0, vec![]).is_err());
    }

    #[test]
    fn aggregate_iou_needs_every_row() {
        let rows = vec![
            PairEval {
                id: "a".into(),
                mae: 1.0,
                psnr_db: 10.0,
                ssim: 0.5,
                iou: Some(0.5),
            },
            PairEval {
                id: "b".into(),
                mae: 1.0,
                psnr_db: 10.0,
                ssim: 0.5,
                iou: None,
            },
        ];
        let report = EvalReport::from_rows(100.0, rows).unwrap();
        assert_eq!(report.aggregate.iou, None);
    }
}
