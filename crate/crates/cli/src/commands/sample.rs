//! `sample`: translate source images with a trained checkpoint by walking
//! the reverse bridge, and record a manifest for later evaluation.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use cpdm_core::bridge::{sample, EmaPredictor, NoisePredictor, SamplerConfig};
use cpdm_core::datagen::{export_pgm, PET_MAX};
use cpdm_core::denoiser::load_checkpoint;
use cpdm_core::{container, Error, Prng, Result};

use crate::commands::{guidance_for, load_guidance, load_split_pairs, write_json, SplitSel};
use crate::config::{self, RunConfig};

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Dataset directory (from gen-data)
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Guidance maps directory (from make-maps)
    #[arg(long, value_name = "DIR")]
    pub maps: PathBuf,
    /// Trained checkpoint directory (from train)
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Output directory for translated images
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Which split to translate
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitSel,
    /// Translate only the first N pairs of the split
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    /// Use raw weights even when the checkpoint has shadow weights
    #[arg(long)]
    pub no_ema: bool,
    /// Also write PGM previews of every translation
    #[arg(long)]
    pub export_pgm: bool,
}

/// One row of `samples.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleItem {
    pub id: String,
    /// Prediction CPDT, relative to the samples directory.
    pub prediction: String,
    /// Paired target CPDT, relative to the dataset directory.
    pub target: String,
    /// Truth-mask CPDT, relative to the dataset directory.
    pub mask: String,
}

/// `samples.json`: everything `eval` needs, with no in-memory handoff.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleManifest {
    pub split: String,
    pub data: String,
    pub items: Vec<SampleItem>,
}

pub fn run(cfg: &RunConfig, args: &SampleArgs) -> Result<()> {
    let (net, shadow, _meta) = load_checkpoint(&args.checkpoint, "model")?;
    if net.spec().time_steps != cfg.t_total {
        return Err(Error::Config(format!(
            "checkpoint was trained with T = {}, config says T = {}",
            net.spec().time_steps,
            cfg.t_total
        )));
    }
    let sched = cpdm_core::schedule::BridgeSchedule::new(cfg.t_total, cfg.s_var)?;
    let scfg = SamplerConfig {
        steps: cfg.sample_steps,
        eta: cfg.eta,
    };
    scfg.validate(sched.steps())?;

    let ema_pred;
    let predictor: &dyn NoisePredictor = match (&shadow, args.no_ema) {
        (Some(sh), false) => {
            ema_pred = EmaPredictor::new(&net, sh)?;
            &ema_pred
        }
        _ => &net,
    };

    let mut pairs = load_split_pairs(&args.data, args.split)?;
    if let Some(limit) = args.limit {
        pairs.truncate(limit);
    }
    let maps = load_guidance(&args.maps)?;
    let master = Prng::new(cfg.seed, "sample");

    let mut items = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let guidance = guidance_for(&maps, &pair.id)?;
        let mut stream = master.derive(&pair.id);
        let translated = sample(&sched, predictor, &pair.ct, guidance, &scfg, &mut stream)?;

        let rel = format!("{}/pair_{:03}_pred.cpdt", pair.study, pair.index);
        let path = args.out.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        container::save_tensor(&path, &translated)?;
        if args.export_pgm {
            let clipped = translated.clamp(-1.0, 1.0)?;
            export_pgm(&path.with_extension("pgm"), &clipped, PET_MAX)?;
        }
        items.push(SampleItem {
            id: pair.id.clone(),
            prediction: rel,
            target: pair.files.pet.clone(),
            mask: pair.files.mask.clone(),
        });
    }

    let manifest = SampleManifest {
        split: args.split.name().to_string(),
        data: args.data.display().to_string(),
        items,
    };
    write_json(&args.out.join("samples.json"), &manifest)?;
    config::write_resolved(&args.out, cfg)?;

    println!(
        "translated {} '{}' pairs with {} reverse steps (eta {}) into {}",
        manifest.items.len(),
        manifest.split,
        cfg.sample_steps,
        cfg.eta,
        args.out.display()
    );
    Ok(())
}
