use std::fmt::Write;

use crate::error::{Error, Result};
use crate::imgops::bilinear;
use crate::Frame;

/// Intensities sampled along a straight segment.
#[derive(Debug, Clone, PartialEq)]
pub struct LineProfile {
    /// `(row, col)` endpoints.
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub samples: Vec<f64>,
}

/// Samples `round(length) + 1` evenly spaced points from `from` to `to`
/// (both included) with bilinear interpolation.
pub fn line_profile(image: &Frame, from: (f64, f64), to: (f64, f64)) -> Result<LineProfile> {
    if image.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (h, w) = image.dim();
    for &(r, c) in [&from, &to] {
        if !(0.0..=(h - 1) as f64).contains(&r) || !(0.0..=(w - 1) as f64).contains(&c) {
            return Err(Error::Config(format!("profile endpoint ({r}, {c}) outside a {h}x{w} image")));
        }
    }
    let len = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    let steps = len.round() as usize;
    let samples = (0..=steps)
        .map(|k| {
            let t = if steps == 0 { 0.0 } else { k as f64 / steps as f64 };
            bilinear(image, from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1))
        })
        .collect();
    Ok(LineProfile { from, to, samples })
}

impl LineProfile {
    /// CSV with header `index,row,col,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,row,col,value\n");
        let n = self.samples.len();
        for (k, v) in self.samples.iter().enumerate() {
            let t = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
            let r = self.from.0 + t * (self.to.0 - self.from.0);
            let c = self.from.1 + t * (self.to.1 - self.from.1);
            writeln!(out, "{k},{r:.4},{c:.4},{v:.6}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn constant_image_gives_constant_samples() {
        let img = Array2::from_elem((10, 20), 0.25);
        let p = line_profile(&img, (3.0, 2.0), (3.0, 17.0)).unwrap();
        assert_eq!(p.samples.len(), 16);
        assert!(p.samples.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn vertical_line_across_a_step() {
        // rows 0..5 dark, rows 5.. bright
        let img = Array2::from_shape_fn((10, 6), |(y, _)| if y < 5 { 0.1 } else { 0.9 });
        let p = line_profile(&img, (0.0, 2.0), (9.0, 2.0)).unwrap();
        assert_eq!(p.samples.len(), 10);
        for (k, v) in p.samples.iter().enumerate() {
            let expect = if k < 5 { 0.1 } else { 0.9 };
            assert!((v - expect).abs() < 1e-12, "row {k}");
        }
    }

    #[test]
    fn reversed_endpoints_reverse_samples() {
        let img = Array2::from_shape_fn((12, 12), |(y, x)| ((y * 5 + x * 3) % 7) as f64 / 7.0);
        let a = line_profile(&img, (1.0, 1.5), (9.5, 10.0)).unwrap();
        let mut b = line_profile(&img, (9.5, 10.0), (1.0, 1.5)).unwrap().samples;
        b.reverse();
        for (x, y) in a.samples.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.samples.len(), 13);
    }

    #[test]
    fn rejects_outside_points() {
        let img = Array2::zeros((4, 4));
        assert!(line_profile(&img, (0.0, 0.0), (4.0, 0.0)).is_err());
        assert_eq!(line_profile(&img, (1.0, 1.0), (1.0, 1.0)).unwrap().samples.len(), 1);
    }
}
