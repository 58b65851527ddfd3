//! Synthetic paired-image generator: structural source images (a CT stand-
//! in) with a deterministic mapping to bright-blob target images (a PET
//! stand-in), plus truth masks, normalization, study-level splits, and the
//! on-disk dataset layout.
//!
//! All randomness lives in [`PairSpec`]; [`gen_pair`] itself is a pure
//! function of that struct, so a stored `PairSpec` regenerates its images
//! exactly.
//! A study is a group of pairs jittered from one base anatomy, and splits
//! never separate a study's pairs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::prng::Prng;
use crate::tensor::Tensor;

/// Raw dynamic-range maximum of the source modality (11-bit).
pub const CT_MAX: f64 = 2047.0;
/// Raw dynamic-range maximum of the target modality (15-bit).
pub const PET_MAX: f64 = 32767.0;

// ============================================================================
// Normalization
// ============================================================================

/// Maps raw values in `[0, max_value]` linearly onto `[-1, 1]`.
pub fn normalize(raw: &Tensor, max_value: f64) -> Result<Tensor> {
    if !(max_value.is_finite() && max_value > 0.0) {
        return Err(Error::Config(format!(
            "normalization max must be positive, got {max_value}"
        )));
    }
    if raw
        .data()
        .iter()
        .any(|&v| !v.is_finite() || v < 0.0 || v as f64 > max_value)
    {
        return Err(Error::Range(format!(
            "raw values must lie in [0, {max_value}]"
        )));
    }
    let data = raw
        .data()
        .iter()
        .map(|&v| (2.0 * v as f64 / max_value - 1.0) as f32)
        .collect();
    Tensor::new(raw.shape().to_vec(), data)
}

/// Inverse of [`normalize`]: maps `[-1, 1]` back to `[0, max_value]`.
pub fn denormalize(norm: &Tensor, max_value: f64) -> Result<Tensor> {
    if !(max_value.is_finite() && max_value > 0.0) {
        return Err(Error::Config(format!(
            "normalization max must be positive, got {max_value}"
        )));
    }
    if norm
        .data()
        .iter()
        .any(|&v| !v.is_finite() || !(-1.0..=1.0).contains(&v))
    {
        return Err(Error::Range("normalized values must lie in [-1, 1]".into()));
    }
    let data = norm
        .data()
        .iter()
        .map(|&v| ((v as f64 + 1.0) / 2.0 * max_value) as f32)
        .collect();
    Tensor::new(norm.shape().to_vec(), data)
}

// ============================================================================
// Generative spec
// ============================================================================

/// Tissue intensity level of one ellipse; the dense class is the one that
/// hosts metabolic activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TissueClass {
    Soft,
    Medium,
    Dense,
}

impl TissueClass {
    /// Source-image intensity on the unit scale.
    fn intensity(self) -> f64 {
        match self {
            TissueClass::Soft => 0.25,
            TissueClass::Medium => 0.5,
            TissueClass::Dense => 0.85,
        }
    }

    /// Peak target-image blob amplitude when the ellipse is active.
    fn blob_amplitude(self) -> f64 {
        match self {
            TissueClass::Soft => 0.5,
            TissueClass::Medium => 0.7,
            TissueClass::Dense => 0.95,
        }
    }
}

/// One ellipse: center/radii/angle in unit coordinates, tissue class, and
/// whether it hosts a target blob.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
    pub class: TissueClass,
    pub active: bool,
}

impl EllipseSpec {
    /// Squared elliptic radius of a unit-space point; 1 on the boundary.
    fn rho2(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let (sin, cos) = self.angle.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        (u / self.rx).powi(2) + (v / self.ry).powi(2)
    }
}

/// Smooth linear shading added to the source image.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShadingSpec {
    pub gx: f64,
    pub gy: f64,
    pub amp: f64,
}

/// Complete recipe for one pair; generation is a pure function of this.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSpec {
    pub ellipses: Vec<EllipseSpec>,
    pub shading: ShadingSpec,
    /// Weight of the blurred-source "physiological background" term.
    pub background_gain: f64,
}

/// Base anatomy shared by all pairs of a study.
#[derive(Debug, Clone)]
pub struct StudySpec {
    base: PairSpec,
}

/// Draws a study's base anatomy: 2 to 4 ellipses, the first always dense
/// so every study has at least one active region.
pub fn random_study_spec(prng: &mut Prng) -> StudySpec {
    let count = prng.range_inclusive(2, 4) as usize;
    let mut ellipses = Vec::with_capacity(count);
    for i in 0..count {
        let class = if i == 0 {
            TissueClass::Dense
        } else {
            match prng.below(3) {
                0 => TissueClass::Soft,
                1 => TissueClass::Medium,
                _ => TissueClass::Dense,
            }
        };
        ellipses.push(EllipseSpec {
            cx: prng.uniform(0.25, 0.75),
            cy: prng.uniform(0.25, 0.75),
            rx: prng.uniform(0.08, 0.22),
            ry: prng.uniform(0.08, 0.22),
            angle: prng.uniform(0.0, std::f64::consts::PI),
            class,
            active: class == TissueClass::Dense,
        });
    }
    StudySpec {
        base: PairSpec {
            ellipses,
            shading: ShadingSpec {
                gx: 0.0,
                gy: 0.0,
                amp: 0.0,
            },
            background_gain: 0.12,
        },
    }
}

/// Perturbs a study's base anatomy into one concrete pair: small shifts in
/// position, size, and angle, plus a freshly drawn shading plane.
pub fn jitter_spec(prng: &mut Prng, study: &StudySpec) -> PairSpec {
    let mut spec = study.base.clone();
    for e in &mut spec.ellipses {
        e.cx = (e.cx + prng.uniform(-0.02, 0.02)).clamp(0.22, 0.78);
        e.cy = (e.cy + prng.uniform(-0.02, 0.02)).clamp(0.22, 0.78);
        e.rx = (e.rx * prng.uniform(0.93, 1.07)).clamp(0.06, 0.24);
        e.ry = (e.ry * prng.uniform(0.93, 1.07)).clamp(0.06, 0.24);
        e.angle += prng.uniform(-0.1, 0.1);
    }
    spec.shading = ShadingSpec {
        gx: prng.uniform(-1.0, 1.0),
        gy: prng.uniform(-1.0, 1.0),
        amp: prng.uniform(0.0, 0.06),
    };
    spec
}

// ============================================================================
// Pair generation
// ============================================================================

/// One generated example: normalized source and target, the active-region
/// truth mask, and the raw source kept for attenuation-map computation.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub y: Tensor,
    pub x0: Tensor,
    pub truth_mask: Tensor,
    pub raw_ct: Tensor,
    pub study_id: String,
}

const BACKGROUND_LEVEL: f64 = 0.03;

/// Renders a pair from its spec. Deterministic: the same spec always
/// produces bit-identical tensors.
///
/// The source paints ellipses (later ones on top) at their class intensity
/// over a dark background, then adds the shading plane. The target is a
/// blurred copy of the source scaled by `background_gain` plus one
/// anisotropic blob per active ellipse whose half-maximum contour is the
/// ellipse boundary; the truth mask is the union of active interiors.
pub fn gen_pair(size: usize, spec: &PairSpec, study_id: &str) -> Result<PairedSample> {
    if size < 16 {
        return Err(Error::Config(format!("image size must be >= 16, got {size}")));
    }
    let n = size * size;
    let mut source01 = vec![BACKGROUND_LEVEL; n];
    let mut mask = vec![0.0f32; n];

    // Inactive ellipses first, active ones on top, so active tissue is
    // always visible in the source image wherever the mask is set.
    let paint_order: Vec<&EllipseSpec> = spec
        .ellipses
        .iter()
        .filter(|e| !e.active)
        .chain(spec.ellipses.iter().filter(|e| e.active))
        .collect();

    for i in 0..size {
        for j in 0..size {
            let x = (j as f64 + 0.5) / size as f64;
            let y = (i as f64 + 0.5) / size as f64;
            let idx = i * size + j;
            for e in &paint_order {
                if e.rho2(x, y) < 1.0 {
                    source01[idx] = e.class.intensity();
                    if e.active {
                        mask[idx] = 1.0;
                    }
                }
            }
            let shade = spec.shading.amp
                * (spec.shading.gx * (x - 0.5) + spec.shading.gy * (y - 0.5));
            source01[idx] = (source01[idx] + shade).clamp(0.0, 1.0);
        }
    }

    let background = blur(&source01, size);
    let mut target01 = vec![0.0f64; n];
    for i in 0..size {
        for j in 0..size {
            let x = (j as f64 + 0.5) / size as f64;
            let y = (i as f64 + 0.5) / size as f64;
            let idx = i * size + j;
            let mut v = spec.background_gain * background[idx];
            for e in spec.ellipses.iter().filter(|e| e.active) {
                v += e.class.blob_amplitude() * (-std::f64::consts::LN_2 * e.rho2(x, y)).exp();
            }
            target01[idx] = v.clamp(0.0, 1.0);
        }
    }

    let raw_ct = Tensor::new(
        vec![size, size],
        source01.iter().map(|&v| (v * CT_MAX) as f32).collect(),
    )?;
    let raw_pet = Tensor::new(
        vec![size, size],
        target01.iter().map(|&v| (v * PET_MAX) as f32).collect(),
    )?;
    Ok(PairedSample {
        y: normalize(&raw_ct, CT_MAX)?,
        x0: normalize(&raw_pet, PET_MAX)?,
        truth_mask: Tensor::new(vec![size, size], mask)?,
        raw_ct,
        study_id: study_id.to_string(),
    })
}

/// 5-tap binomial blur, horizontal then vertical, clamping at the edges.
fn blur(src: &[f64], size: usize) -> Vec<f64> {
    const TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let at = |v: &[f64], i: isize, j: isize| -> f64 {
        let i = i.clamp(0, size as isize - 1) as usize;
        let j = j.clamp(0, size as isize - 1) as usize;
        v[i * size + j]
    };
    let mut tmp = vec![0.0f64; size * size];
    for i in 0..size as isize {
        for j in 0..size as isize {
            let mut acc = 0.0;
            for (k, w) in TAPS.iter().enumerate() {
                acc += w * at(src, i, j + k as isize - 2);
            }
            tmp[i as usize * size + j as usize] = acc;
        }
    }
    let mut out = vec![0.0f64; size * size];
    for i in 0..size as isize {
        for j in 0..size as isize {
            let mut acc = 0.0;
            for (k, w) in TAPS.iter().enumerate() {
                acc += w * at(&tmp, i + k as isize - 2, j);
            }
            out[i as usize * size + j as usize] = acc;
        }
    }
    out
}

// ============================================================================
// Studies and datasets
// ============================================================================

/// A group of pairs sharing one base anatomy.
#[derive(Debug, Clone)]
pub struct Study {
    pub id: String,
    pub samples: Vec<PairedSample>,
}

/// Generates one study: a base anatomy plus `pairs` jittered renders, all
/// drawn from a stream derived from the study id.
pub fn gen_study(prng: &Prng, id: &str, size: usize, pairs: usize) -> Result<Study> {
    if pairs == 0 {
        return Err(Error::Config("a study needs at least one pair".into()));
    }
    let mut stream = prng.derive(id);
    let base = random_study_spec(&mut stream);
    let mut samples = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let spec = jitter_spec(&mut stream, &base);
        samples.push(gen_pair(size, &spec, id)?);
    }
    Ok(Study {
        id: id.to_string(),
        samples,
    })
}

/// Generates a full dataset of `studies` x `pairs_per_study` examples.
pub fn gen_dataset(
    prng: &Prng,
    studies: usize,
    pairs_per_study: usize,
    size: usize,
) -> Result<Vec<Study>> {
    if studies == 0 {
        return Err(Error::Config("dataset needs at least one study".into()));
    }
    (0..studies)
        .map(|i| gen_study(prng, &format!("study_{i:04}"), size, pairs_per_study))
        .collect()
}

// ============================================================================
// Splits
// ============================================================================

/// Train/val/test fractions applied at study granularity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Study ids per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles studies and partitions them by fraction. Every split receives
/// at least one study; a study's pairs never straddle splits.
pub fn make_split(study_ids: &[String], spec: &SplitSpec, prng: &mut Prng) -> Result<Split> {
    if [spec.train, spec.val, spec.test]
        .iter()
        .any(|f| !f.is_finite() || *f <= 0.0)
    {
        return Err(Error::Config("split fractions must be positive".into()));
    }
    if (spec.train + spec.val + spec.test - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split fractions must sum to 1".into()));
    }
    let n = study_ids.len();
    if n < 3 {
        return Err(Error::Config(format!(
            "need at least 3 studies to form 3 splits, got {n}"
        )));
    }

    let mut order: Vec<String> = study_ids.to_vec();
    prng.shuffle(&mut order);

    let mut n_train = (spec.train * n as f64).floor() as usize;
    let mut n_val = (spec.val * n as f64).floor() as usize;
    n_val = n_val.max(1);
    let mut n_test = n - n_train - n_val;
    if n_test == 0 {
        n_test = 1;
        n_train -= 1;
    }
    while n_train + n_val + n_test > n {
        n_train -= 1;
    }
    n_train = n - n_val - n_test;
    if n_train == 0 {
        return Err(Error::Config("split leaves no training studies".into()));
    }

    let mut it = order.into_iter();
    Ok(Split {
        train: it.by_ref().take(n_train).collect(),
        val: it.by_ref().take(n_val).collect(),
        test: it.collect(),
    })
}

// ============================================================================
// Disk layout
// ============================================================================

/// Relative CPDT paths of one stored pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFiles {
    pub ct: String,
    pub pet: String,
    pub mask: String,
}

/// One study's rows in the dataset index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyEntry {
    pub id: String,
    pub pairs: Vec<PairFiles>,
}

/// `index.json`: every study and the files of every pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub studies: Vec<StudyEntry>,
}

impl DatasetIndex {
    /// Entries for the given study ids, in index order.
    pub fn select(&self, ids: &[String]) -> Vec<&StudyEntry> {
        self.studies.iter().filter(|s| ids.contains(&s.id)).collect()
    }
}

/// Writes every pair's tensors under `dir` and returns the written index.
pub fn save_dataset(dir: &Path, studies: &[Study]) -> Result<DatasetIndex> {
    let mut entries = Vec::with_capacity(studies.len());
    for study in studies {
        let sub = dir.join(&study.id);
        std::fs::create_dir_all(&sub).map_err(Error::io(&sub))?;
        let mut pairs = Vec::with_capacity(study.samples.len());
        for (i, sample) in study.samples.iter().enumerate() {
            let rel = |kind: &str| format!("{}/pair_{i:03}_{kind}.cpdt", study.id);
            let files = PairFiles {
                ct: rel("ct"),
                pet: rel("pet"),
                mask: rel("mask"),
            };
            container::save_tensor(dir.join(&files.ct), &sample.y)?;
            container::save_tensor(dir.join(&files.pet), &sample.x0)?;
            container::save_tensor(dir.join(&files.mask), &sample.truth_mask)?;
            pairs.push(files);
        }
        entries.push(StudyEntry {
            id: study.id.clone(),
            pairs,
        });
    }
    let index = DatasetIndex { studies: entries };
    let path = dir.join("index.json");
    let body = serde_json::to_string_pretty(&index)
        .map_err(|e| Error::Config(format!("index serialization: {e}")))?;
    std::fs::write(&path, body).map_err(Error::io(path))?;
    Ok(index)
}

/// Reads `index.json` from a dataset directory.
pub fn load_index(dir: &Path) -> Result<DatasetIndex> {
    let path = dir.join("index.json");
    let body = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&body).map_err(|e| Error::Format {
        offset: 0,
        reason: format!("{}: {e}", path.display()),
    })
}

/// Loads one pair's `(ct, pet, mask)` tensors.
pub fn load_pair(dir: &Path, files: &PairFiles) -> Result<(Tensor, Tensor, Tensor)> {
    Ok((
        container::load_tensor(dir.join(&files.ct))?,
        container::load_tensor(dir.join(&files.pet))?,
        container::load_tensor(dir.join(&files.mask))?,
    ))
}

/// Writes `split.json` next to the index.
pub fn save_split(dir: &Path, split: &Split) -> Result<()> {
    let path = dir.join("split.json");
    let body = serde_json::to_string_pretty(split)
        .map_err(|e| Error::Config(format!("split serialization: {e}")))?;
    std::fs::write(&path, body).map_err(Error::io(path))
}

/// Reads `split.json` from a dataset directory.
pub fn load_split(dir: &Path) -> Result<Split> {
    let path = dir.join("split.json");
    let body = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&body).map_err(|e| Error::Format {
        offset: 0,
        reason: format!("{}: {e}", path.display()),
    })
}

// ============================================================================
// PGM export
// ============================================================================

/// Writes a normalized 2-D tensor as a binary 8-bit PGM image: values are
/// denormalized against `max_value`, clipped, and scaled to 0..=255.
pub fn export_pgm(path: &Path, image: &Tensor, max_value: f64) -> Result<()> {
    if image.shape().len() != 2 {
        return Err(Error::Shape {
            op: "export_pgm",
            expected: vec![0, 0],
            got: image.shape().to_vec(),
        });
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in image.data() {
        let raw = ((v as f64).clamp(-1.0, 1.0) + 1.0) / 2.0 * max_value;
        bytes.push((raw / max_value * 255.0).round() as u8);
    }
    std::fs::write(path, bytes).map_err(Error::io(path))
}

// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn any_spec(prng: &mut Prng) -> PairSpec {
        let study = random_study_spec(prng);
        jitter_spec(prng, &study)
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        let raw = Tensor::new(vec![1, 3], vec![0.0, 2047.0, 1023.5]).unwrap();
        let n = normalize(&raw, CT_MAX).unwrap();
        assert_eq!(n.data()[0], -1.0);
        assert_eq!(n.data()[1], 1.0);
        assert!(n.data()[2].abs() < 1e-6);
    }

    #[test]
    fn normalization_roundtrip_is_tight() {
        let mut p = Prng::new(1, "roundtrip");
        let raw = Tensor::new(
            vec![1000],
            (0..1000).map(|_| p.uniform(0.0, PET_MAX) as f32).collect::<Vec<_>>(),
        )
        .unwrap();
        let back = denormalize(&normalize(&raw, PET_MAX).unwrap(), PET_MAX).unwrap();
        for (&a, &b) in raw.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn normalization_rejects_out_of_range() {
        let neg = Tensor::filled(vec![2], -1.0);
        assert!(matches!(normalize(&neg, CT_MAX), Err(Error::Range(_))));
        let big = Tensor::filled(vec![2], 3000.0);
        assert!(matches!(normalize(&big, CT_MAX), Err(Error::Range(_))));
        let far = Tensor::filled(vec![2], 1.5);
        assert!(matches!(denormalize(&far, CT_MAX), Err(Error::Range(_))));
        assert!(normalize(&Tensor::zeros(vec![2]), 0.0).is_err());
    }

    #[test]
    fn gen_pair_is_deterministic_and_in_range() {
        let mut p = Prng::new(2, "det");
        let spec = any_spec(&mut p);
        let a = gen_pair(32, &spec, "s").unwrap();
        let b = gen_pair(32, &spec, "s").unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.x0, b.x0);
        assert_eq!(a.truth_mask, b.truth_mask);
        assert_eq!(a.raw_ct, b.raw_ct);

        for t in [&a.y, &a.x0] {
            assert!(t.min() >= -1.0 && t.max() <= 1.0);
        }
        assert!(a.raw_ct.min() >= 0.0 && a.raw_ct.max() as f64 <= CT_MAX);
    }

    #[test]
    fn bounds_hold_across_many_random_pairs() {
        let mut p = Prng::new(3, "bounds");
        for i in 0..1000 {
            let spec = any_spec(&mut p);
            let s = gen_pair(16, &spec, "s").unwrap();
            assert!(s.y.min() >= -1.0 && s.y.max() <= 1.0, "pair {i}");
            assert!(s.x0.min() >= -1.0 && s.x0.max() <= 1.0, "pair {i}");
        }
    }

    #[test]
    fn zero_active_spec_has_background_only_target_and_empty_mask() {
        let mut p = Prng::new(4, "inactive");
        let mut spec = any_spec(&mut p);
        for e in &mut spec.ellipses {
            e.active = false;
        }
        let s = gen_pair(32, &spec, "s").unwrap();
        assert_eq!(s.truth_mask.sum(), 0.0);
        // Background term alone: target stays far below blob peaks.
        let max01 = (s.x0.max() as f64 + 1.0) / 2.0;
        assert!(max01 <= spec.background_gain + 1e-6, "max {max01}");
    }

    #[test]
    fn active_centroids_land_inside_the_mask() {
        let mut p = Prng::new(5, "centroid");
        for _ in 0..50 {
            let spec = any_spec(&mut p);
            let s = gen_pair(32, &spec, "s").unwrap();
            for e in spec.ellipses.iter().filter(|e| e.active) {
                let i = (e.cy * 32.0) as usize;
                let j = (e.cx * 32.0) as usize;
                assert_eq!(s.truth_mask.data()[i * 32 + j], 1.0);
            }
        }
    }

    #[test]
    fn blob_half_max_contour_matches_the_mask_on_a_clean_spec() {
        // One active ellipse, no background or shading: in unit space the
        // target is A * exp(-ln2 * rho^2), so pixels above A/2 are exactly
        // the interior.
        let spec = PairSpec {
            ellipses: vec![EllipseSpec {
                cx: 0.5,
                cy: 0.45,
                rx: 0.2,
                ry: 0.12,
                angle: 0.4,
                class: TissueClass::Dense,
                active: true,
            }],
            shading: ShadingSpec {
                gx: 0.0,
                gy: 0.0,
                amp: 0.0,
            },
            background_gain: 0.0,
        };
        let s = gen_pair(32, &spec, "s").unwrap();
        let half = TissueClass::Dense.blob_amplitude() / 2.0;
        let threshold = (2.0 * half - 1.0) as f32;
        let from_target = crate::guidance::attention_truth(&s.x0, threshold);
        assert_eq!(from_target.sum(), s.truth_mask.sum());
        assert_eq!(from_target, s.truth_mask);
    }

    #[test]
    fn active_tissue_is_visible_wherever_the_mask_is_set() {
        let mut p = Prng::new(12, "paint");
        for _ in 0..50 {
            let spec = any_spec(&mut p);
            let s = gen_pair(32, &spec, "s").unwrap();
            let max_shade = spec.shading.amp.abs();
            for (idx, &m) in s.truth_mask.data().iter().enumerate() {
                if m == 1.0 {
                    let v = s.raw_ct.data()[idx] as f64 / CT_MAX;
                    assert!(
                        (v - TissueClass::Dense.intensity()).abs() <= max_shade + 1e-9,
                        "masked pixel {idx} has intensity {v}"
                    );
                }
            }
        }
    }

    #[test]
    fn gen_pair_rejects_tiny_images() {
        let mut p = Prng::new(6, "tiny");
        let spec = any_spec(&mut p);
        assert!(matches!(gen_pair(15, &spec, "s"), Err(Error::Config(_))));
        assert!(gen_pair(16, &spec, "s").is_ok());
    }

    #[test]
    fn studies_jitter_but_share_anatomy() {
        let p = Prng::new(7, "study");
        let study = gen_study(&p, "study_0000", 32, 3).unwrap();
        assert_eq!(study.samples.len(), 3);
        // Pairs differ (jitter) but correlate strongly (same anatomy).
        let a = &study.samples[0].y;
        let b = &study.samples[1].y;
        assert_ne!(a, b);
        let diff = crate::metrics::mae(a, b).unwrap();
        assert!(diff < 0.3, "studies too different: {diff}");
        // Same stream, same id: regeneration is identical.
        let again = gen_study(&p, "study_0000", 32, 3).unwrap();
        assert_eq!(study.samples[2].x0, again.samples[2].x0);
    }

    #[test]
    fn every_study_has_active_regions() {
        let p = Prng::new(8, "active");
        for study in gen_dataset(&p, 20, 1, 16).unwrap() {
            assert!(study.samples[0].truth_mask.sum() > 0.0, "study {}", study.id);
        }
    }

    #[test]
    fn split_respects_fractions_and_grouping() {
        let ids: Vec<String> = (0..10).map(|i| format!("study_{i:04}")).collect();
        let mut p = Prng::new(9, "split");
        let split = make_split(&ids, &SplitSpec::default(), &mut p).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.val.len(), 1);
        assert_eq!(split.test.len(), 1);

        let mut all: Vec<&String> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);

        let mut p2 = Prng::new(9, "split");
        assert_eq!(split, make_split(&ids, &SplitSpec::default(), &mut p2).unwrap());
    }

    #[test]
    fn split_needs_enough_studies_and_sane_fractions() {
        let ids: Vec<String> = (0..2).map(|i| format!("s{i}")).collect();
        let mut p = Prng::new(10, "split2");
        assert!(make_split(&ids, &SplitSpec::default(), &mut p).is_err());

        let ids: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let bad = SplitSpec {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(make_split(&ids, &bad, &mut p).is_err());
        // Small counts still give every split at least one study.
        let split = make_split(&ids, &SplitSpec::default(), &mut p).unwrap();
        assert!(!split.train.is_empty());
        assert!(!split.val.is_empty());
        assert!(!split.test.is_empty());
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), 5);
    }

    #[test]
    fn dataset_roundtrips_through_the_directory_layout() {
        let dir = std::env::temp_dir().join("cpdm-datagen-io");
        std::fs::remove_dir_all(&dir).ok();
        let p = Prng::new(11, "io");
        let studies = gen_dataset(&p, 3, 2, 16).unwrap();
        let index = save_dataset(&dir, &studies).unwrap();
        assert_eq!(index, load_index(&dir).unwrap());

        let (ct, pet, mask) = load_pair(&dir, &index.studies[1].pairs[0]).unwrap();
        assert_eq!(ct, studies[1].samples[0].y);
        assert_eq!(pet, studies[1].samples[0].x0);
        assert_eq!(mask, studies[1].samples[0].truth_mask);

        let split = Split {
            train: vec!["study_0000".into()],
            val: vec!["study_0001".into()],
            test: vec!["study_0002".into()],
        };
        save_split(&dir, &split).unwrap();
        assert_eq!(split, load_split(&dir).unwrap());
        assert_eq!(index.select(&split.val)[0].id, "study_0001");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn pgm_export_writes_a_valid_header_and_payload() {
        let dir = std::env::temp_dir().join("cpdm-pgm");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.pgm");
        let image = Tensor::new(vec![2, 3], vec![-1.0, 0.0, 1.0, -1.0, 2.0, -2.0]).unwrap();
        export_pgm(&path, &image, PET_MAX).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let payload = &bytes[bytes.len() - 6..];
        assert_eq!(payload, &[0, 128, 255, 0, 255, 0]);
        std::fs::remove_dir_all(&dir).ok();
    }
}
