//! Command-line lifecycle around the bridge-diffusion engine: dataset
//! generation, guidance maps, segmenter and diffusion training, sampling,
//! evaluation, and schedule inspection.
//!
//! The binary is a thin parser over [`commands`]; every subcommand is an
//! ordinary function over a resolved [`config::RunConfig`], so integration
//! tests can drive the same code paths in-process.

pub mod commands;
pub mod config;
