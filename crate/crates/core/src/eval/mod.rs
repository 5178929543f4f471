//! Metrics, line profiles and sequence-level inference.

pub mod denoise;
pub mod metrics;
pub mod profile;

pub use denoise::{denoise, run_engine, DenoiseConfig, DenoiseMode, DenoiseOutput, Engine};
pub use metrics::{mse, psnr, ssim, FrameMetric, MetricReport};
pub use profile::{line_profile, LineProfile};
