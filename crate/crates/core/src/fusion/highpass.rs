//! Radial frequency-domain high-pass filter.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighpassConfig {
    /// Radius of the removed low-frequency disc, as a fraction of the
    /// half-diagonal of the centred spectrum.
    pub cutoff_fraction: f64,
}

impl Default for HighpassConfig {
    fn default() -> Self {
        Self { cutoff_fraction: 0.1 }
    }
}

impl HighpassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_fraction > 0.0 && self.cutoff_fraction < 1.0) {
            return Err(Error::Config(format!(
                "cutoff_fraction {} outside (0, 1)",
                self.cutoff_fraction
            )));
        }
        Ok(())
    }
}

/// Signed frequency index of DFT bin `k` out of `n`.
fn centered(k: usize, n: usize) -> f64 {
    if 2 * k < n {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// A high-pass projector planned for one image shape.
///
/// The mask depends only on the radial frequency, so it is symmetric under
/// `k -> -k`; the filter maps real images to real images and is an orthogonal
/// projection (linear, idempotent, self-adjoint).
pub struct FrequencyHighpass {
    h: usize,
    w: usize,
    keep: Array2<bool>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl FrequencyHighpass {
    pub fn new(h: usize, w: usize, cfg: &HighpassConfig) -> Result<Self> {
        cfg.validate()?;
        if h == 0 || w == 0 {
            return Err(Error::EmptyInput);
        }
        let r_max = ((h as f64 / 2.0).powi(2) + (w as f64 / 2.0).powi(2)).sqrt();
        let cutoff = cfg.cutoff_fraction * r_max;
        let keep = Array2::from_shape_fn((h, w), |(ky, kx)| {
            let (fy, fx) = (centered(ky, h), centered(kx, w));
            (fy * fy + fx * fx).sqrt() >= cutoff
        });
        let mut planner = FftPlanner::new();
        Ok(Self {
            h,
            w,
            keep,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn transform(&self, data: &mut [Complex<f64>], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (h, w) = (self.h, self.w);
        for row in data.chunks_exact_mut(w) {
            rows.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = data[y * w + x];
            }
            cols.process(&mut column);
            for y in 0..h {
                data[y * w + x] = column[y];
            }
        }
    }

    pub fn apply(&self, image: &Frame) -> Result<Frame> {
        if image.dim() != (self.h, self.w) {
            return Err(Error::shape(&[self.h, self.w], &[image.nrows(), image.ncols()]));
        }
        let mut data: Vec<Complex<f64>> = image.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut data, &self.row_fwd, &self.col_fwd);
        for (c, &keep) in data.iter_mut().zip(self.keep.iter()) {
            if !keep {
                *c = Complex::new(0.0, 0.0);
            }
        }
        self.transform(&mut data, &self.row_inv, &self.col_inv);
        let norm = 1.0 / (self.h * self.w) as f64;
        Ok(Array2::from_shape_vec((self.h, self.w), data.iter().map(|c| c.re * norm).collect())
            .expect("shape preserved"))
    }
}

/// Zeroes every DFT coefficient whose centred radial frequency is below
/// `cutoff_fraction * R_max` and returns the real part of the inverse.
pub fn fft_highpass(image: &Frame, cfg: &HighpassConfig) -> Result<Frame> {
    let (h, w) = image.dim();
    FrequencyHighpass::new(h, w, cfg)?.apply(image)
}
