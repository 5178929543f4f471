//! Small reverse-mode autodiff engine and the two denoising networks.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod msr2au;
pub mod params;
pub mod student;
pub mod tape;

use std::fmt::Debug;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use adam::{Adam, AdamConfig};
pub use msr2au::{MultiScaleMode, Msr2auConfig, Msr2auNet};
pub use params::{ParamId, ParamStore};
pub use student::{StudentConfig, StudentUNet};
pub use tape::{Gradients, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::Frame;

/// Packs `batch[b][c]` into a `(batch, channels, h, w)` tensor.
pub fn pack(batch: &[Vec<&Frame>]) -> Result<Tensor> {
    let first = batch.first().and_then(|s| s.first()).ok_or(Error::EmptyInput)?;
    let (h, w) = first.dim();
    let c = batch[0].len();
    let mut out = Tensor::zeros((batch.len(), c, h, w));
    for (b, sample) in batch.iter().enumerate() {
        if sample.len() != c {
            return Err(Error::shape(&[c], &[sample.len()]));
        }
        for (k, f) in sample.iter().enumerate() {
            if f.dim() != (h, w) {
                return Err(Error::shape(&[h, w], &[f.nrows(), f.ncols()]));
            }
            out.slice_mut(ndarray::s![b, k, .., ..]).assign(*f);
        }
    }
    Ok(out)
}

/// Channel `c` of sample `b` as a frame.
pub fn unpack(t: &Tensor, b: usize, c: usize) -> Frame {
    t.slice(ndarray::s![b, c, .., ..]).to_owned()
}

/// Common interface of the teacher and student networks.
///
/// Inputs are `(batch, input_channels, h, w)` tensors with `h` and `w`
/// divisible by `2^levels`; outputs are `(batch, 1, h, w)`.
pub trait Denoiser: Sized {
    /// Tag stored in checkpoints.
    const KIND: &'static str;
    type Config: Serialize + DeserializeOwned + Clone + PartialEq + Debug;

    fn build(config: Self::Config, seed: u64) -> Result<Self>;
    fn arch(&self) -> &Self::Config;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn input_channels(&self) -> usize;
    fn levels(&self) -> usize;

    /// Records the forward pass on `tape`. Inputs must already be validated.
    fn forward(&self, tape: &mut Tape, input: Var) -> Var;

    fn check_input(&self, dim: (usize, usize, usize, usize)) -> Result<()> {
        let (n, c, h, w) = dim;
        let unit = 1usize << self.levels();
        if n == 0 || c != self.input_channels() || h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![n.max(1), self.input_channels(), unit, unit],
                found: vec![n, c, h, w],
            });
        }
        Ok(())
    }

    /// Inference without keeping the tape.
    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input.dim())?;
        let mut tape = Tape::new();
        let x = tape.input(input.clone());
        let y = self.forward(&mut tape, x);
        Ok(tape.value(y).clone())
    }

    fn arch_hash(&self) -> String {
        checkpoint::arch_hash(Self::KIND, self.arch())
    }

    fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, Self::KIND, self.arch(), self.store())
    }

    /// Loads a checkpoint. With `expected`, the stored architecture must hash
    /// identically or loading fails with [`Error::ArchitectureMismatch`].
    fn load(path: &Path, expected: Option<&Self::Config>) -> Result<Self> {
        let (config, records) = checkpoint::read::<Self::Config>(path, Self::KIND, expected)?;
        let mut net = Self::build(config, 0)?;
        checkpoint::apply(net.store_mut(), records, path)?;
        Ok(net)
    }
}
