//! One module per subcommand, plus the dataset-loading helpers they share.

pub mod eval;
pub mod gen_data;
pub mod make_maps;
pub mod sample;
pub mod schedule_dump;
pub mod train;
pub mod train_seg;

use std::collections::HashMap;
use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use cpdm_core::bridge::GuidancePair;
use cpdm_core::datagen::{self, PairFiles};
use cpdm_core::{container, Error, Result, Tensor};

/// Which study split a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitSel {
    Train,
    Val,
    Test,
}

impl SplitSel {
    pub fn name(self) -> &'static str {
        match self {
            SplitSel::Train => "train",
            SplitSel::Val => "val",
            SplitSel::Test => "test",
        }
    }
}

/// One dataset pair pulled into memory, with its provenance.
pub struct LoadedPair {
    /// `<study_id>/<pair_index>`, the key used across maps and manifests.
    pub id: String,
    pub study: String,
    pub index: usize,
    pub files: PairFiles,
    pub ct: Tensor,
    pub pet: Tensor,
    pub mask: Tensor,
}

/// Stable pair key: study id plus zero-padded position within the study.
pub fn pair_id(study: &str, index: usize) -> String {
    format!("{study}/{index:03}")
}

/// Loads every pair of the chosen split, in index order.
pub fn load_split_pairs(data: &Path, which: SplitSel) -> Result<Vec<LoadedPair>> {
    let index = datagen::load_index(data)?;
    let split = datagen::load_split(data)?;
    let ids = match which {
        SplitSel::Train => &split.train,
        SplitSel::Val => &split.val,
        SplitSel::Test => &split.test,
    };
    let mut out = Vec::new();
    for study in index.select(ids) {
        for (i, files) in study.pairs.iter().enumerate() {
            let (ct, pet, mask) = datagen::load_pair(data, files)?;
            out.push(LoadedPair {
                id: pair_id(&study.id, i),
                study: study.id.clone(),
                index: i,
                files: files.clone(),
                ct,
                pet,
                mask,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "split '{}' contains no pairs under {}",
            which.name(),
            data.display()
        )));
    }
    Ok(out)
}

/// Relative CPDT paths of one pair's guidance planes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapFiles {
    pub attention: String,
    pub attenuation: String,
}

/// One study's rows in `maps.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapsStudy {
    pub id: String,
    pub pairs: Vec<MapFiles>,
}

/// `maps.json`: guidance-plane files for every pair of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapsIndex {
    pub studies: Vec<MapsStudy>,
}

/// Reads `maps.json` from a maps directory.
pub fn load_maps_index(dir: &Path) -> Result<MapsIndex> {
    let path = dir.join("maps.json");
    let body = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&body).map_err(|e| Error::Format {
        offset: 0,
        reason: format!("{}: {e}", path.display()),
    })
}

/// Loads every guidance pair of a maps directory, keyed by pair id.
pub fn load_guidance(dir: &Path) -> Result<HashMap<String, GuidancePair>> {
    let index = load_maps_index(dir)?;
    let mut out = HashMap::new();
    for study in &index.studies {
        for (i, files) in study.pairs.iter().enumerate() {
            let attention = container::load_tensor(dir.join(&files.attention))?;
            let attenuation = container::load_tensor(dir.join(&files.attenuation))?;
            out.insert(pair_id(&study.id, i), GuidancePair::new(attention, attenuation)?);
        }
    }
    Ok(out)
}

/// Fetches one pair's guidance planes or explains which id is missing.
pub fn guidance_for<'a>(
    maps: &'a HashMap<String, GuidancePair>,
    id: &str,
) -> Result<&'a GuidancePair> {
    maps.get(id)
        .ok_or_else(|| Error::Config(format!("maps directory has no entry for pair '{id}'")))
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    body.push('\n');
    std::fs::write(path, body).map_err(Error::io(path))
}
