//! Run configuration: a JSON file merged with command-line overrides.
//!
//! Resolution order is defaults, then the JSON file (`--config` flag or the
//! `CPDM_CONFIG` environment variable), then individual flags. The resolved
//! struct is written into every artifact directory so a run is always
//! reproducible from its outputs alone.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use cpdm_core::bridge::{LossKind, LossWeighting};
use cpdm_core::{Error, Result};

/// Environment variable holding the default config path.
pub const CONFIG_ENV: &str = "CPDM_CONFIG";

/// Pointwise training penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossChoice {
    L1,
    L2,
}

impl From<LossChoice> for LossKind {
    fn from(c: LossChoice) -> LossKind {
        match c {
            LossChoice::L1 => LossKind::L1,
            LossChoice::L2 => LossKind::L2,
        }
    }
}

/// Per-step loss weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum WeightChoice {
    None,
    #[value(name = "c_eps")]
    CEps,
}

impl From<WeightChoice> for LossWeighting {
    fn from(c: WeightChoice) -> LossWeighting {
        match c {
            WeightChoice::None => LossWeighting::None,
            WeightChoice::CEps => LossWeighting::NoiseCoef,
        }
    }
}

/// Where `make-maps` gets its attention masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MapSource {
    /// Stored truth masks (oracle guidance).
    Truth,
    /// A trained segmenter applied to the source image.
    Segmenter,
}

/// Shadow-weight averaging settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaSettings {
    #[serde(default = "d_true")]
    pub on: bool,
    #[serde(default = "d_ema_decay")]
    pub decay: f64,
    #[serde(default = "d_ema_start")]
    pub start: u64,
}

impl Default for EmaSettings {
    fn default() -> Self {
        EmaSettings {
            on: true,
            decay: 0.995,
            start: 300,
        }
    }
}

/// Every knob of the experiment lifecycle, with working defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "T", default = "d_t_total")]
    pub t_total: usize,
    #[serde(default = "d_s_var")]
    pub s_var: f64,
    #[serde(default = "d_image_size")]
    pub image_size: usize,
    #[serde(default = "d_sample_steps")]
    pub sample_steps: usize,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_loss")]
    pub loss: LossChoice,
    #[serde(default = "d_weighting")]
    pub weighting: WeightChoice,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_batch")]
    pub batch: usize,
    #[serde(default = "d_train_steps")]
    pub train_steps: usize,
    #[serde(default)]
    pub ema: EmaSettings,
    #[serde(default = "d_map_source")]
    pub map_source: MapSource,
    #[serde(default)]
    pub lac_table: Option<PathBuf>,
    #[serde(default = "d_pet_max")]
    pub pet_max: f64,
    #[serde(default = "d_ct_max")]
    pub ct_max: f64,
}

fn d_true() -> bool {
    true
}
fn d_ema_decay() -> f64 {
    0.995
}
fn d_ema_start() -> u64 {
    300
}
fn d_t_total() -> usize {
    1000
}
fn d_s_var() -> f64 {
    1.0
}
fn d_image_size() -> usize {
    32
}
fn d_sample_steps() -> usize {
    200
}
fn d_eta() -> f64 {
    1.0
}
fn d_loss() -> LossChoice {
    LossChoice::L1
}
fn d_weighting() -> WeightChoice {
    WeightChoice::None
}
fn d_lr() -> f64 {
    1e-4
}
fn d_batch() -> usize {
    16
}
fn d_train_steps() -> usize {
    3000
}
fn d_map_source() -> MapSource {
    MapSource::Truth
}
fn d_pet_max() -> f64 {
    32767.0
}
fn d_ct_max() -> f64 {
    2047.0
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults always deserialize")
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_total < 2 {
            return Err(Error::Config("T must be >= 2".into()));
        }
        if !(self.s_var.is_finite() && self.s_var > 0.0) {
            return Err(Error::Config(format!("s_var must be positive, got {}", self.s_var)));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "image_size must be >= 16, got {}",
                self.image_size
            )));
        }
        if self.sample_steps == 0 {
            return Err(Error::Config("sample_steps must be >= 1".into()));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 || self.train_steps == 0 {
            return Err(Error::Config("batch and train_steps must be >= 1".into()));
        }
        if !(self.ema.decay > 0.0 && self.ema.decay < 1.0) {
            return Err(Error::Config(format!(
                "ema.decay must lie in (0, 1), got {}",
                self.ema.decay
            )));
        }
        for (name, v) in [("pet_max", self.pet_max), ("ct_max", self.ct_max)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss.into()
    }

    pub fn loss_weighting(&self) -> LossWeighting {
        self.weighting.into()
    }
}

/// Flags shared by every subcommand; set ones override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file (falls back to $CPDM_CONFIG, then defaults)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base seed for every derived random stream
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Number of bridge diffusion steps
    #[arg(long = "T", global = true, value_name = "N")]
    pub t_total: Option<usize>,
    /// Scale of the bridge's peak variance
    #[arg(long, global = true, value_name = "X")]
    pub s_var: Option<f64>,
    /// Square image edge length
    #[arg(long, global = true, value_name = "N")]
    pub image_size: Option<usize>,
    /// Reverse steps used at sampling time
    #[arg(long, visible_alias = "steps", global = true, value_name = "K")]
    pub sample_steps: Option<usize>,
    /// Reverse-transition stochasticity (0 = deterministic)
    #[arg(long, global = true, value_name = "X")]
    pub eta: Option<f64>,
    /// Training penalty
    #[arg(long, global = true, value_enum, value_name = "KIND")]
    pub loss: Option<LossChoice>,
    /// Per-step loss weighting
    #[arg(long, global = true, value_enum, value_name = "KIND")]
    pub weighting: Option<WeightChoice>,
    /// Initial learning rate
    #[arg(long, global = true, value_name = "X")]
    pub lr: Option<f64>,
    /// Training batch size
    #[arg(long, global = true, value_name = "N")]
    pub batch: Option<usize>,
    /// Number of optimizer steps
    #[arg(long, global = true, value_name = "N")]
    pub train_steps: Option<usize>,
    /// Enable or disable shadow-weight averaging
    #[arg(long, global = true, value_name = "BOOL")]
    pub ema: Option<bool>,
    /// Shadow-weight decay factor
    #[arg(long, global = true, value_name = "X")]
    pub ema_decay: Option<f64>,
    /// Step at which shadow averaging starts
    #[arg(long, global = true, value_name = "N")]
    pub ema_start: Option<u64>,
    /// Attention-map source for make-maps
    #[arg(long, global = true, value_enum, value_name = "SRC")]
    pub map_source: Option<MapSource>,
    /// JSON file with attenuation-table anchors
    #[arg(long, global = true, value_name = "PATH")]
    pub lac_table: Option<PathBuf>,
    /// Raw dynamic-range maximum of target images
    #[arg(long, global = true, value_name = "X")]
    pub pet_max: Option<f64>,
    /// Raw dynamic-range maximum of source images
    #[arg(long, global = true, value_name = "X")]
    pub ct_max: Option<f64>,
}

/// Loads the base config and applies flag overrides.
pub fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let path = args
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => load_file(&p)?,
        None => RunConfig::default(),
    };

    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        };
    }
    take!(seed);
    take!(t_total);
    take!(s_var);
    take!(image_size);
    take!(sample_steps);
    take!(eta);
    take!(loss);
    take!(weighting);
    take!(lr);
    take!(batch);
    take!(train_steps);
    take!(map_source);
    take!(pet_max);
    take!(ct_max);
    if let Some(on) = args.ema {
        cfg.ema.on = on;
    }
    if let Some(d) = args.ema_decay {
        cfg.ema.decay = d;
    }
    if let Some(s) = args.ema_start {
        cfg.ema.start = s;
    }
    if let Some(p) = &args.lac_table {
        cfg.lac_table = Some(p.clone());
    }

    cfg.validate()?;
    Ok(cfg)
}

fn load_file(path: &Path) -> Result<RunConfig> {
    let body = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&body)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Writes the fully materialized config into an artifact directory.
pub fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let path = dir.join("resolved_config.json");
    let mut body = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
    body.push('\n');
    std::fs::write(&path, body).map_err(Error::io(path))
}
