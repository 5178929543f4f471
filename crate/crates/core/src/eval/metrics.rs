use serde::Serialize;

use crate::error::{Error, Result};
use crate::imgops::gaussian_kernel;
use crate::Frame;

const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(&[a.nrows(), a.ncols()], &[b.nrows(), b.ncols()]));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB. Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / m).log10())
}

/// Valid-region separable filtering (no padding).
fn filter_valid(img: &Frame, k: &[f64]) -> Frame {
    let (h, w) = img.dim();
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = Frame::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            tmp[[y, x]] = k.iter().enumerate().map(|(i, kv)| kv * img[[y, x + i]]).sum();
        }
    }
    let mut out = Frame::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = k.iter().enumerate().map(|(i, kv)| kv * tmp[[y + i, x]]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11-tap Gaussian window (sigma 1.5),
/// `K1 = 0.01`, `K2 = 0.03` and data range 1, averaged over the region
/// where the window fits entirely inside the image.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    same_shape(a, b)?;
    let k = gaussian_kernel(SSIM_SIGMA);
    if a.nrows() < k.len() || a.ncols() < k.len() {
        return Err(Error::shape(&[k.len(), k.len()], &[a.nrows(), a.ncols()]));
    }
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = filter_valid(a, &k);
    let mu_b = filter_valid(b, &k);
    let aa = filter_valid(&(a * a), &k);
    let bb = filter_valid(&(b * b), &k);
    let ab = filter_valid(&(a * b), &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[i], mu_b.as_slice().unwrap()[i]);
        let va = aa.as_slice().unwrap()[i] - ma * ma;
        let vb = bb.as_slice().unwrap()[i] - mb * mb;
        let cov = ab.as_slice().unwrap()[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetric {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Frame was copied from the input instead of being denoised.
    pub passthrough: bool,
}

/// Per-frame metrics plus mean and population standard deviation over the
/// frames that were actually processed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub frames: Vec<FrameMetric>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean.is_infinite() {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl MetricReport {
    /// Compares two equally long frame lists. `passthrough[k]` marks frames
    /// excluded from the summary statistics.
    pub fn compute(denoised: &[Frame], reference: &[Frame], passthrough: &[bool]) -> Result<Self> {
        if denoised.len() != reference.len() {
            return Err(Error::shape(&[reference.len()], &[denoised.len()]));
        }
        let mut frames = Vec::with_capacity(denoised.len());
        for (k, (d, r)) in denoised.iter().zip(reference).enumerate() {
            frames.push(FrameMetric {
                index: k,
                psnr: psnr(d, r, 1.0)?,
                ssim: ssim(d, r)?,
                passthrough: passthrough.get(k).copied().unwrap_or(false),
            });
        }
        let used: Vec<&FrameMetric> = frames.iter().filter(|f| !f.passthrough).collect();
        let (psnr_mean, psnr_std) = mean_std(&used.iter().map(|f| f.psnr).collect::<Vec<_>>());
        let (ssim_mean, ssim_std) = mean_std(&used.iter().map(|f| f.ssim).collect::<Vec<_>>());
        Ok(Self {
            frames,
            psnr_mean,
            psnr_std,
            ssim_mean,
            ssim_std,
        })
    }

    /// CSV with header `frame,psnr_db,ssim,passthrough`, one row per frame,
    /// then `mean` and `std` rows. Infinite PSNR is written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr_db,ssim,passthrough\n");
        for f in &self.frames {
            out.push_str(&format!(
                "{},{},{},{}\n",
                f.index,
                fmt_metric(f.psnr),
                fmt_metric(f.ssim),
                u8::from(f.passthrough)
            ));
        }
        out.push_str(&format!("mean,{},{},\n", fmt_metric(self.psnr_mean), fmt_metric(self.ssim_mean)));
        out.push_str(&format!("std,{},{},\n", fmt_metric(self.psnr_std), fmt_metric(self.ssim_std)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn textured(seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.5, 0.1).unwrap();
        Array2::from_shape_simple_fn((32, 40), || n.sample(&mut rng))
    }

    #[test]
    fn psnr_closed_forms() {
        let a = textured(1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = &a + 10.0 / 255.0;
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 28.1308).abs() < 1e-3, "{p}");
        let c = textured(2);
        assert_eq!(psnr(&a, &c, 1.0).unwrap(), psnr(&c, &a, 1.0).unwrap());
        assert!(psnr(&a, &Array2::zeros((3, 3)), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = textured(3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = textured(4);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ssim(&Array2::zeros((8, 8)), &Array2::zeros((8, 8))).is_err());
    }

    #[test]
    fn ssim_decreases_with_noise() {
        let a = Array2::from_elem((48, 48), 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let unit = Array2::from_shape_simple_fn((48, 48), || Normal::new(0.0, 1.0).unwrap().sample(&mut rng));
        let scores: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&s| ssim(&a, &(&a + &(&unit * s))).unwrap()).collect();
        assert!(scores[0] < 1.0);
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    }

    #[test]
    fn report_excludes_passthrough_frames() {
        let a = textured(6);
        let b = &a + 0.01;
        let r = MetricReport::compute(&[a.clone(), b.clone()], &[a.clone(), a.clone()], &[true, false]).unwrap();
        assert_eq!(r.frames[0].psnr, f64::INFINITY);
        assert!((r.psnr_mean - 40.0).abs() < 1e-9);
        assert_eq!(r.psnr_std, 0.0);
        let csv = r.to_csv();
        assert!(csv.starts_with("frame,psnr_db,ssim,passthrough\n0,inf,1.000000,1\n1,40.000000,"));
    }
}
