//! Desk-scale conditional Brownian-bridge diffusion engine.
//!
//! The crate translates one image domain into another by diffusing along a
//! Brownian bridge pinned at a source image and a target image, guided by a
//! pair of domain-knowledge maps (an attention mask and an attenuation map)
//! that are concatenated onto the denoiser input. Everything runs on the CPU
//! with deterministic, seed-reproducible arithmetic.
//!
//! Module map:
//! - [`tensor`]: dense row-major `f32` tensors with 64-bit reductions
//! - [`prng`]: counter-based deterministic random streams
//! - [`container`]: the CPDT binary tensor file format
//! - [`schedule`]: bridge variance schedule and reverse-pair coefficients
//! - [`bridge`]: forward sampling, training loss, guided reverse sampling
//! - [`denoiser`]: small convolutional noise predictor with hand-rolled
//!   reverse-mode gradients, Adam, EMA, and plateau LR scheduling
//! - [`guidance`]: attention masks, attenuation maps, segmenter training
//! - [`metrics`]: MAE / PSNR / SSIM / IoU and evaluation reports
//! - [`datagen`]: synthetic paired dataset generation and on-disk layout

pub mod bridge;
pub mod container;
pub mod datagen;
pub mod denoiser;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod prng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use prng::Prng;
pub use tensor::Tensor;
