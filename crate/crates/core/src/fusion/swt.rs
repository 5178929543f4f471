//! Single-level undecimated (stationary) Haar wavelet transform with
//! periodic boundaries.
//!
//! Band naming follows the horizontal / vertical filter order: `hl` is
//! high-pass across columns and low-pass across rows, so it responds to
//! vertical edges; `lh` responds to horizontal edges.

use std::f64::consts::FRAC_1_SQRT_2;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::Frame;

#[derive(Debug, Clone, PartialEq)]
pub struct SwtBands {
    pub ll: Frame,
    pub lh: Frame,
    pub hl: Frame,
    pub hh: Frame,
}

impl SwtBands {
    pub fn shape(&self) -> (usize, usize) {
        self.ll.dim()
    }
}

fn analyze(x: &Frame, axis: Axis) -> (Frame, Frame) {
    let n = x.len_of(axis);
    let mut lo = Array2::zeros(x.dim());
    let mut hi = Array2::zeros(x.dim());
    for ((idx, &v), (l, h)) in x.indexed_iter().zip(lo.iter_mut().zip(hi.iter_mut())) {
        let next = match axis {
            Axis(0) => x[[(idx.0 + 1) % n, idx.1]],
            _ => x[[idx.0, (idx.1 + 1) % n]],
        };
        *l = (v + next) * FRAC_1_SQRT_2;
        *h = (v - next) * FRAC_1_SQRT_2;
    }
    (lo, hi)
}

fn synthesize(lo: &Frame, hi: &Frame, axis: Axis) -> Frame {
    let n = lo.len_of(axis);
    let scale = 0.5 * FRAC_1_SQRT_2;
    Array2::from_shape_fn(lo.dim(), |(y, x)| {
        let prev = match axis {
            Axis(0) => [(y + n - 1) % n, x],
            _ => [y, (x + n - 1) % n],
        };
        (lo[[y, x]] + hi[[y, x]] + lo[prev] - hi[prev]) * scale
    })
}

pub fn swt_haar1(image: &Frame) -> SwtBands {
    let (lo_x, hi_x) = analyze(image, Axis(1));
    let (ll, lh) = analyze(&lo_x, Axis(0));
    let (hl, hh) = analyze(&hi_x, Axis(0));
    SwtBands { ll, lh, hl, hh }
}

pub fn iswt_haar1(bands: &SwtBands) -> Result<Frame> {
    let shape = bands.shape();
    for b in [&bands.lh, &bands.hl, &bands.hh] {
        if b.dim() != shape {
            return Err(Error::shape(&[shape.0, shape.1], &[b.nrows(), b.ncols()]));
        }
    }
    let lo_x = synthesize(&bands.ll, &bands.lh, Axis(0));
    let hi_x = synthesize(&bands.hl, &bands.hh, Axis(0));
    Ok(synthesize(&lo_x, &hi_x, Axis(1)))
}
