//! Luminance-augmented L1 loss and a small blind-denoising benchmark.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`]: pixel container, luminance projection and file formats
//! * [`metrics`]: MSE, PSNR and Gaussian-windowed SSIM
//! * [`losses`]: L1, L2, the luminance term and their combination, each with
//!   an analytic gradient
//! * [`dataset`]: seeded synthetic images, Gaussian noise, blind patch batches
//! * [`tinynet`]: a residual convolutional denoiser with hand-written backprop
//! * [`trainer`]: Adam, the training loop and direct pixel optimisation
//! * [`harness`]: the benchmark grid, CSV reports and file-level inference
//!
//! Data-parallel loops go through [`par::Exec`]; with the `parallel` feature
//! disabled every loop runs sequentially and produces bit-identical results.

pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod tinynet;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{Image, LuminanceWeights};
pub use losses::{LossKind, LossOutput, LossSpec, PixelBase};
