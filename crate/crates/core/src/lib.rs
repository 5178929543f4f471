//! Unsupervised two-step, context-aware denoising of noisy image sequences.
//!
//! Step one trains a multi-frame network ([`nn::Msr2auNet`]) to predict each
//! frame from its four temporal neighbours. Step two distils that frozen
//! network into a single-frame student ([`nn::StudentUNet`]) while pulling it
//! toward a motion-compensated recursive temporal filter and matching
//! fusion-weighted high-frequency detail between the two.

pub mod error;
pub mod eval;
pub mod flow;
pub mod fusion;
pub mod imgops;
pub mod io;
pub mod nn;
pub mod phantom;
pub mod temporal;
pub mod training;

/// A single grayscale frame, row-major, normalized intensities.
pub type Frame = ndarray::Array2<f64>;

pub use error::{Error, Result};
pub use flow::{compensate_window, estimate_flow, warp, FlowEstimatorConfig, FlowField};
pub use fusion::{FusionConfig, FusionProducts, HighpassConfig, SwtBands};
pub use io::{load_sequence, make_windows, sample_patches, save_sequence, split_train_val, PatchSample, TrainingWindow};
pub use phantom::{apply_dose_noise, generate_clean_sequence, Dose, DoseLevel, FrameSequence, PhantomSpec};
pub use temporal::{effective_weights, recursive_filter, RecursiveFilterConfig};
pub use training::{train_step1, train_step2, AblationConfig, OptimizerConfig, Step2Config};
