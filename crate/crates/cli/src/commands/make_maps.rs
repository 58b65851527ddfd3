//! `make-maps`: compute the two guidance planes for every dataset pair.
//!
//! The attention plane is either the stored truth mask or a trained
//! segmenter's binarized prediction on the source image; the attenuation
//! plane runs the denormalized source through the piecewise attenuation
//! table.

use std::path::PathBuf;

use clap::Args;

use cpdm_core::datagen::{self, denormalize};
use cpdm_core::denoiser::{load_checkpoint, Denoiser};
use cpdm_core::guidance::{
    attention_truth, attenuation_map, predict_mask, LacTable, HU_INTERCEPT, HU_SLOPE,
};
use cpdm_core::{container, Error, Result};

use crate::commands::{write_json, MapFiles, MapsIndex, MapsStudy};
use crate::config::{self, MapSource, RunConfig};

#[derive(Debug, Args)]
pub struct MakeMapsArgs {
    /// Dataset directory (from gen-data)
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Maps output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Segmenter checkpoint directory (required when map_source = segmenter)
    #[arg(long, value_name = "DIR")]
    pub seg: Option<PathBuf>,
    /// Tissue path length in cm for the attenuation exponent
    #[arg(long, default_value_t = 1.0, value_name = "CM")]
    pub thickness: f64,
}

pub fn run(cfg: &RunConfig, args: &MakeMapsArgs) -> Result<()> {
    let index = datagen::load_index(&args.data)?;
    let table = match &cfg.lac_table {
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(Error::io(path))?;
            LacTable::from_json(&body)?
        }
        None => LacTable::default(),
    };
    let seg_net: Option<Denoiser> = match cfg.map_source {
        MapSource::Truth => None,
        MapSource::Segmenter => {
            let dir = args.seg.as_ref().ok_or_else(|| {
                Error::Config("map_source 'segmenter' needs --seg <checkpoint dir>".into())
            })?;
            Some(load_checkpoint(dir, "seg")?.0)
        }
    };

    let mut studies = Vec::with_capacity(index.studies.len());
    let mut count = 0usize;
    for study in &index.studies {
        let sub = args.out.join(&study.id);
        std::fs::create_dir_all(&sub).map_err(Error::io(&sub))?;
        let mut pairs = Vec::with_capacity(study.pairs.len());
        for (i, files) in study.pairs.iter().enumerate() {
            let (ct, _pet, mask) = datagen::load_pair(&args.data, files)?;
            let attention = match &seg_net {
                None => mask,
                Some(net) => attention_truth(&predict_mask(net, &ct)?, 0.5),
            };
            let raw_ct = denormalize(&ct, cfg.ct_max)?;
            let attenuation =
                attenuation_map(&raw_ct, HU_SLOPE, HU_INTERCEPT, &table, args.thickness)?;

            let rel = |kind: &str| format!("{}/pair_{i:03}_{kind}.cpdt", study.id);
            let entry = MapFiles {
                attention: rel("attention"),
                attenuation: rel("attenuation"),
            };
            container::save_tensor(args.out.join(&entry.attention), &attention)?;
            container::save_tensor(args.out.join(&entry.attenuation), &attenuation)?;
            pairs.push(entry);
            count += 1;
        }
        studies.push(MapsStudy {
            id: study.id.clone(),
            pairs,
        });
    }

    write_json(&args.out.join("maps.json"), &MapsIndex { studies })?;
    config::write_resolved(&args.out, cfg)?;
    println!(
        "wrote guidance planes for {count} pairs ({} source) to {}",
        match cfg.map_source {
            MapSource::Truth => "truth-mask",
            MapSource::Segmenter => "segmenter",
        },
        args.out.display()
    );
    Ok(())
}
