//! `train-seg`: fit the attention segmenter on (source, truth-mask) pairs.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cpdm_core::denoiser::{save_checkpoint, CheckpointMeta};
use cpdm_core::guidance::{train_segmenter, SegEpoch, SegTrainConfig};
use cpdm_core::{Prng, Result, Tensor};

use crate::commands::{load_split_pairs, SplitSel};
use crate::config::{self, RunConfig};

#[derive(Debug, Args)]
pub struct TrainSegArgs {
    /// Dataset directory (from gen-data)
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Checkpoint output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Passes over the training split
    #[arg(long, default_value_t = SegTrainConfig::default().epochs, value_name = "N")]
    pub epochs: usize,
    /// Segmenter batch size
    #[arg(long, default_value_t = SegTrainConfig::default().batch, value_name = "N")]
    pub seg_batch: usize,
    /// Segmenter learning rate
    #[arg(long, default_value_t = SegTrainConfig::default().lr, value_name = "X")]
    pub seg_lr: f64,
}

#[derive(Serialize)]
struct SegHistory<'a> {
    best_iou: f64,
    best_epoch: usize,
    history: &'a [SegEpoch],
}

pub fn run(cfg: &RunConfig, args: &TrainSegArgs) -> Result<()> {
    let to_masked = |pairs: Vec<crate::commands::LoadedPair>| -> Vec<(Tensor, Tensor)> {
        pairs.into_iter().map(|p| (p.ct, p.mask)).collect()
    };
    let train = to_masked(load_split_pairs(&args.data, SplitSel::Train)?);
    let val = to_masked(load_split_pairs(&args.data, SplitSel::Val)?);

    let scfg = SegTrainConfig {
        epochs: args.epochs,
        batch: args.seg_batch,
        lr: args.seg_lr,
    };
    let mut prng = Prng::new(cfg.seed, "train-seg");
    let report = train_segmenter(&train, &val, &scfg, &mut prng)?;

    save_checkpoint(
        &args.out,
        "seg",
        &report.net,
        None,
        &CheckpointMeta {
            step_count: report.best_epoch as u64,
            lr: scfg.lr,
            ema: false,
        },
    )?;
    crate::commands::write_json(
        &args.out.join("seg_history.json"),
        &SegHistory {
            best_iou: report.best_iou,
            best_epoch: report.best_epoch,
            history: &report.history,
        },
    )?;
    config::write_resolved(&args.out, cfg)?;

    println!(
        "segmenter best val IoU {:.4} at epoch {} ({} epochs, {} train pairs); checkpoint in {}",
        report.best_iou,
        report.best_epoch,
        scfg.epochs,
        train.len(),
        args.out.display()
    );
    Ok(())
}
