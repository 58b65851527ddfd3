//! `eval`: score translated images against their paired targets from files
//! alone, producing JSON and CSV reports.
//!
//! Error metrics run in raw intensity units after denormalization. The IoU
//! column compares hot regions: both images binarized at the threshold the
//! attention extractor would pick for the target.

use std::path::{Path, PathBuf};

use clap::Args;

use cpdm_core::guidance::default_pet_threshold;
use cpdm_core::metrics::{self, EvalReport, PairEval};
use cpdm_core::{container, Error, Result};

use crate::commands::write_json;
use crate::commands::sample::SampleManifest;
use crate::config::{self, RunConfig};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory the samples were drawn from
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Samples directory (from sample)
    #[arg(long, value_name = "DIR")]
    pub samples: PathBuf,
    /// Report output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Worker threads for scoring
    #[arg(long, default_value_t = 1, value_name = "N")]
    pub workers: usize,
}

pub fn run(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let path = args.samples.join("samples.json");
    let body = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    let manifest: SampleManifest = serde_json::from_str(&body).map_err(|e| Error::Format {
        offset: 0,
        reason: format!("{}: {e}", path.display()),
    })?;
    if manifest.items.is_empty() {
        return Err(Error::Config("samples manifest lists no items".into()));
    }

    let rows = score_all(cfg, args, &manifest.items, args.workers)?;
    let report = EvalReport::from_rows(cfg.pet_max, rows)?;

    std::fs::create_dir_all(&args.out).map_err(Error::io(&args.out))?;
    write_json(&args.out.join("eval.json"), &report)?;
    let csv_path = args.out.join("eval.csv");
    std::fs::write(&csv_path, report.to_csv()).map_err(Error::io(csv_path))?;
    config::write_resolved(&args.out, cfg)?;

    let agg = &report.aggregate;
    println!(
        "evaluated {} pairs: MAE {:.3}, PSNR {:.2} dB, SSIM {:.4}, hot-region IoU {}",
        report.per_image.len(),
        agg.mae,
        agg.psnr_db,
        agg.ssim,
        agg.iou.map_or("n/a".to_string(), |v| format!("{v:.4}")),
    );
    Ok(())
}

fn score_all(
    cfg: &RunConfig,
    args: &EvalArgs,
    items: &[crate::commands::sample::SampleItem],
    workers: usize,
) -> Result<Vec<PairEval>> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(|item| score_one(cfg, args, item)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || -> Result<Vec<PairEval>> {
                    part.iter().map(|item| score_one(cfg, args, item)).collect()
                })
            })
            .collect();
        let mut rows = Vec::with_capacity(items.len());
        for handle in handles {
            rows.extend(handle.join().expect("evaluation worker panicked")?);
        }
        Ok(rows)
    })
}

fn score_one(
    cfg: &RunConfig,
    args: &EvalArgs,
    item: &crate::commands::sample::SampleItem,
) -> Result<PairEval> {
    let pred_norm = load_norm(&args.samples.join(&item.prediction))?;
    let truth_norm = load_norm(&args.data.join(&item.target))?;

    let pred = cpdm_core::datagen::denormalize(&pred_norm, cfg.pet_max)?;
    let truth = cpdm_core::datagen::denormalize(&truth_norm, cfg.pet_max)?;
    let threshold = default_pet_threshold(&truth_norm);
    Ok(PairEval {
        id: item.id.clone(),
        mae: metrics::mae(&pred, &truth)?,
        psnr_db: metrics::psnr(&pred, &truth, cfg.pet_max)?,
        ssim: metrics::ssim(&pred, &truth, cfg.pet_max)?,
        iou: Some(metrics::iou(&pred_norm, &truth_norm, threshold)?),
    })
}

/// Loads a tensor and clips it into the normalized band, so slight model
/// overshoot cannot abort scoring.
fn load_norm(path: &Path) -> Result<cpdm_core::Tensor> {
    container::load_tensor(path)?.clamp(-1.0, 1.0)
}
