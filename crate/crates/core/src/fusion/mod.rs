//! Edge-preserving fusion of the student and recursive-filter outputs.
//!
//! Given the student output `x` and the filter output `r`:
//!
//! ```text
//! T      = (x + r) / 2
//! dx     = |T - x|,            dr = |T - r|
//! M_x    = var(dx) * r,        M_r = var(dr) * x
//! hf_x   = M_x * H(x),         hf_r = M_r * H(r)
//! ```
//!
//! `var` is a local (windowed) population variance and `H` keeps the
//! frequency-high-passed detail bands of a one-level Haar SWT.

mod highpass;
mod swt;

pub use highpass::{fft_highpass, FrequencyHighpass, HighpassConfig};
pub use swt::{iswt_haar1, swt_haar1, SwtBands};

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgops::reflect_index;
use crate::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Side of the square neighbourhood of the variance operator (odd, >= 3).
    pub variance_window: usize,
    pub highpass: HighpassConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            variance_window: 7,
            highpass: HighpassConfig::default(),
        }
    }
}

fn same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(&[a.nrows(), a.ncols()], &[b.nrows(), b.ncols()]));
    }
    Ok(())
}

pub fn optimal_average(student: &Frame, filtered: &Frame) -> Result<Frame> {
    same_shape(student, filtered)?;
    Ok((student + filtered) * 0.5)
}

/// `(|T - x|, |T - r|)`.
pub fn difference_maps(average: &Frame, student: &Frame, filtered: &Frame) -> Result<(Frame, Frame)> {
    same_shape(average, student)?;
    same_shape(average, filtered)?;
    let d_student = Zip::from(average).and(student).map_collect(|t, x| (t - x).abs());
    let d_filtered = Zip::from(average).and(filtered).map_collect(|t, r| (t - r).abs());
    Ok((d_student, d_filtered))
}

/// Population variance over a `window x window` neighbourhood, reflect-padded.
pub fn local_variance(image: &Frame, window: usize) -> Result<Frame> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Config(format!("variance window {window} must be odd and >= 3")));
    }
    let (h, w) = image.dim();
    let r = (window / 2) as isize;
    let rows: Vec<Vec<usize>> = (0..h)
        .map(|y| (-r..=r).map(|d| reflect_index(y as isize + d, h)).collect())
        .collect();
    let cols: Vec<Vec<usize>> = (0..w)
        .map(|x| (-r..=r).map(|d| reflect_index(x as isize + d, w)).collect())
        .collect();
    let n = (window * window) as f64;
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let mut sum = 0.0;
        for &yy in &rows[y] {
            for &xx in &cols[x] {
                sum += image[[yy, xx]];
            }
        }
        let mean = sum / n;
        let mut ss = 0.0;
        for &yy in &rows[y] {
            for &xx in &cols[x] {
                let d = image[[yy, xx]] - mean;
                ss += d * d;
            }
        }
        ss / n
    }))
}

/// `(var(dx) * r, var(dr) * x)`.
pub fn cross_fusion(
    d_student: &Frame,
    d_filtered: &Frame,
    student: &Frame,
    filtered: &Frame,
    window: usize,
) -> Result<(Frame, Frame)> {
    same_shape(d_student, d_filtered)?;
    same_shape(d_student, student)?;
    same_shape(d_student, filtered)?;
    let m_student = local_variance(d_student, window)? * filtered;
    let m_filtered = local_variance(d_filtered, window)? * student;
    Ok((m_student, m_filtered))
}

/// The high-frequency operator `H`, planned for one image shape.
///
/// `H = S * D * A` where `A` is the SWT analysis, `D` zeroes the LL band and
/// high-passes the other three, and `S` is the synthesis. `S = A^T / 4` and
/// `D` is an orthogonal projection, so `H` is self-adjoint with spectrum in
/// `[0, 1]`; the gradient of `<g, H(x)>` with respect to `x` is `H(g)`.
pub struct HfOperator {
    highpass: FrequencyHighpass,
}

impl HfOperator {
    pub fn new(h: usize, w: usize, cfg: &HighpassConfig) -> Result<Self> {
        Ok(Self {
            highpass: FrequencyHighpass::new(h, w, cfg)?,
        })
    }

    pub fn apply(&self, image: &Frame) -> Result<Frame> {
        let bands = swt_haar1(image);
        let filtered = SwtBands {
            ll: Array2::zeros(bands.shape()),
            lh: self.highpass.apply(&bands.lh)?,
            hl: self.highpass.apply(&bands.hl)?,
            hh: self.highpass.apply(&bands.hh)?,
        };
        iswt_haar1(&filtered)
    }
}

pub fn hf_extract(image: &Frame, cfg: &HighpassConfig) -> Result<Frame> {
    let (h, w) = image.dim();
    HfOperator::new(h, w, cfg)?.apply(image)
}

/// `(M_x * H(x), M_r * H(r))`.
pub fn hf_components(
    m_student: &Frame,
    m_filtered: &Frame,
    h_student: &Frame,
    h_filtered: &Frame,
) -> Result<(Frame, Frame)> {
    same_shape(m_student, m_filtered)?;
    same_shape(m_student, h_student)?;
    same_shape(m_student, h_filtered)?;
    Ok((m_student * h_student, m_filtered * h_filtered))
}

/// Every intermediate of the fusion for one student / filter pair.
#[derive(Debug, Clone)]
pub struct FusionProducts {
    /// Student output `x`.
    pub student: Frame,
    /// Recursive-filter output `r`.
    pub filtered: Frame,
    /// `T = (x + r) / 2`.
    pub average: Frame,
    pub diff_student: Frame,
    pub diff_filtered: Frame,
    /// `var(dx) * r`.
    pub fusion_student: Frame,
    /// `var(dr) * x`.
    pub fusion_filtered: Frame,
    /// `H(x)`.
    pub high_student: Frame,
    /// `H(r)`.
    pub high_filtered: Frame,
    pub hf_student: Frame,
    pub hf_filtered: Frame,
}

impl FusionProducts {
    pub fn compute(student: &Frame, filtered: &Frame, cfg: &FusionConfig) -> Result<Self> {
        let (h, w) = student.dim();
        let op = HfOperator::new(h, w, &cfg.highpass)?;
        Self::compute_with(student, filtered, cfg.variance_window, &op)
    }

    pub fn compute_with(student: &Frame, filtered: &Frame, window: usize, op: &HfOperator) -> Result<Self> {
        let average = optimal_average(student, filtered)?;
        let (diff_student, diff_filtered) = difference_maps(&average, student, filtered)?;
        let (fusion_student, fusion_filtered) =
            cross_fusion(&diff_student, &diff_filtered, student, filtered, window)?;
        let high_student = op.apply(student)?;
        let high_filtered = op.apply(filtered)?;
        let (hf_student, hf_filtered) =
            hf_components(&fusion_student, &fusion_filtered, &high_student, &high_filtered)?;
        Ok(Self {
            student: student.clone(),
            filtered: filtered.clone(),
            average,
            diff_student,
            diff_filtered,
            fusion_student,
            fusion_filtered,
            high_student,
            high_filtered,
            hf_student,
            hf_filtered,
        })
    }

    /// Named planes in a fixed order, for dumps.
    pub fn planes(&self) -> Vec<(&'static str, &Frame)> {
        vec![
            ("student", &self.student),
            ("filtered", &self.filtered),
            ("average", &self.average),
            ("diff_student", &self.diff_student),
            ("diff_filtered", &self.diff_filtered),
            ("fusion_student", &self.fusion_student),
            ("fusion_filtered", &self.fusion_filtered),
            ("high_student", &self.high_student),
            ("high_filtered", &self.high_filtered),
            ("hf_student", &self.hf_student),
            ("hf_filtered", &self.hf_filtered),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    /// Brute-force variance of the window centred at (y, x), reflect borders.
    fn window_variance(img: &Frame, y: usize, x: usize, window: usize) -> f64 {
        let r = (window / 2) as isize;
        let mut vals = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = reflect_index(y as isize + dy, img.nrows());
                let xx = reflect_index(x as isize + dx, img.ncols());
                vals.push(img[[yy, xx]]);
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn average_arithmetic() {
        let a = Array2::from_elem((3, 3), 2.0);
        let b = Array2::from_elem((3, 3), 4.0);
        assert!(optimal_average(&a, &b).unwrap().iter().all(|&v| v == 3.0));
        let f = random(5, 4, 1);
        assert_eq!(optimal_average(&f, &f).unwrap(), f);
        let g = random(5, 4, 2);
        let t = optimal_average(&f, &g).unwrap();
        let lhs = t.mean().unwrap();
        let rhs = 0.5 * (f.mean().unwrap() + g.mean().unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn difference_maps_basic_cases() {
        let t = Array2::from_elem((2, 2), 3.0);
        let x = Array2::from_elem((2, 2), 2.0);
        let (dx, _) = difference_maps(&t, &x, &x).unwrap();
        assert!(dx.iter().all(|&v| v == 1.0));
        let f = random(4, 4, 3);
        let avg = optimal_average(&f, &f).unwrap();
        let (a, b) = difference_maps(&avg, &f, &f).unwrap();
        assert!(a.iter().chain(b.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_variance() {
        // every 3x3 window holds four of one value and five of the other: 80/81
        let board = Array2::from_shape_fn((10, 10), |(y, x)| if (y + x) % 2 == 0 { 2.0 } else { 0.0 });
        let var = local_variance(&board, 3).unwrap();
        for y in 1..9 {
            for x in 1..9 {
                assert!((var[[y, x]] - window_variance(&board, y, x, 3)).abs() < 1e-12);
                assert!((var[[y, x]] - 80.0 / 81.0).abs() < 1e-12);
            }
        }
        assert!(local_variance(&board, 4).is_err());
        assert!(local_variance(&board, 1).is_err());
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let v = local_variance(&Array2::from_elem((6, 7), 0.4), 5).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn cross_fusion_spot_values() {
        let x = random(12, 12, 4);
        let r = random(12, 12, 5);
        let t = optimal_average(&x, &r).unwrap();
        let (dx, dr) = difference_maps(&t, &x, &r).unwrap();
        let (mx, mr) = cross_fusion(&dx, &dr, &x, &r, 7).unwrap();
        for &(y, c) in &[(0, 0), (5, 6), (11, 3)] {
            assert!((mx[[y, c]] - window_variance(&dx, y, c, 7) * r[[y, c]]).abs() < 1e-14);
            assert!((mr[[y, c]] - window_variance(&dr, y, c, 7) * x[[y, c]]).abs() < 1e-14);
        }
        assert!(mx.iter().chain(mr.iter()).all(|&v| v >= 0.0));
        let z = Array2::zeros((12, 12));
        let (a, b) = cross_fusion(&z, &z, &x, &r, 7).unwrap();
        assert!(a.iter().chain(b.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn hf_of_constant_is_zero() {
        let h = hf_extract(&Array2::from_elem((16, 16), 0.6), &HighpassConfig::default()).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn hf_operator_is_self_adjoint() {
        let op = HfOperator::new(16, 20, &HighpassConfig::default()).unwrap();
        let a = random(16, 20, 8);
        let b = random(16, 20, 9);
        let lhs: f64 = (&op.apply(&a).unwrap() * &b).sum();
        let rhs: f64 = (&a * &op.apply(&b).unwrap()).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn fusion_products_vanish_when_outputs_agree() {
        let f = random(16, 16, 10);
        let p = FusionProducts::compute(&f, &f, &FusionConfig::default()).unwrap();
        assert!(p.hf_student.iter().chain(p.hf_filtered.iter()).all(|&v| v == 0.0));
        // constant student: H(x) = 0 so its HF component vanishes
        let c = Array2::from_elem((16, 16), 0.5);
        let p = FusionProducts::compute(&c, &f, &FusionConfig::default()).unwrap();
        assert!(p.hf_student.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn hf_component_spot_check() {
        let x = random(16, 16, 11);
        let r = random(16, 16, 12);
        let cfg = FusionConfig::default();
        let p = FusionProducts::compute(&x, &r, &cfg).unwrap();
        // recompute one pixel from scratch
        let (y, c) = (7, 9);
        let dx: Frame = Zip::from(&x).and(&r).map_collect(|a, b| ((a + b) / 2.0 - a).abs());
        let hx = hf_extract(&x, &cfg.highpass).unwrap();
        let expect = window_variance(&dx, y, c, 7) * r[[y, c]] * hx[[y, c]];
        assert!((p.hf_student[[y, c]] - expect).abs() < 1e-14);
        let dr: Frame = Zip::from(&x).and(&r).map_collect(|a, b| ((a + b) / 2.0 - b).abs());
        let hr = hf_extract(&r, &cfg.highpass).unwrap();
        let expect = window_variance(&dr, y, c, 7) * x[[y, c]] * hr[[y, c]];
        assert!((p.hf_filtered[[y, c]] - expect).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn difference_maps_coincide(seed in 0u64..1000, h in 2usize..12, w in 2usize..12) {
            let x = random(h, w, seed);
            let r = random(h, w, seed + 7919);
            let t = optimal_average(&x, &r).unwrap();
            let (dx, dr) = difference_maps(&t, &x, &r).unwrap();
            for ((a, b), (xv, rv)) in dx.iter().zip(&dr).zip(x.iter().zip(&r)) {
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!((a - (rv - xv).abs() / 2.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn hf_is_linear_and_non_expansive(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let cfg = HighpassConfig::default();
            let f = random(16, 16, seed);
            let g = random(16, 16, seed + 1);
            let combo = &f * a + &g * b;
            let lhs = hf_extract(&combo, &cfg).unwrap();
            let rhs = hf_extract(&f, &cfg).unwrap() * a + hf_extract(&g, &cfg).unwrap() * b;
            for (p, q) in lhs.iter().zip(&rhs) {
                prop_assert!((p - q).abs() < 1e-10);
            }
            let hf = hf_extract(&f, &cfg).unwrap();
            let norm = |m: &Frame| m.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm(&hf) <= norm(&f) + 1e-12);
        }

        #[test]
        fn highpass_is_idempotent(seed in 0u64..1000) {
            let cfg = HighpassConfig::default();
            let f = random(12, 18, seed);
            let once = fft_highpass(&f, &cfg).unwrap();
            let twice = fft_highpass(&once, &cfg).unwrap();
            for (p, q) in once.iter().zip(&twice) {
                prop_assert!((p - q).abs() < 1e-10);
            }
        }
    }
}
