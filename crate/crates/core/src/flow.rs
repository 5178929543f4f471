//! Dense optical flow and backward warping.
//!
//! Flows follow the backward-warping convention: `warp(moving, flow)(y, x)`
//! samples `moving` at `(y + v, x + u)`, so a good flow makes the warped
//! moving frame line up with the reference.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgops::{bilinear, gaussian_blur, gaussian_kernel, gradients, pyramid_down, resize_bilinear, separable_filter};
use crate::io::TrainingWindow;
use crate::Frame;

/// Per-pixel displacement in pixels: `u` along columns, `v` along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            u: Array2::zeros((h, w)),
            v: Array2::zeros((h, w)),
        }
    }

    pub fn uniform(h: usize, w: usize, u: f64, v: f64) -> Self {
        Self {
            u: Array2::from_elem((h, w), u),
            v: Array2::from_elem((h, w), v),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.u.iter().chain(self.v.iter()).fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Flow of the two-hop path: first follow `self`, then `next` sampled at
    /// the displaced position.
    pub fn compose(&self, next: &FlowField) -> FlowField {
        let (h, w) = self.shape();
        let mut out = self.clone();
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (self.u[[y, x]], self.v[[y, x]]);
                let (py, px) = (y as f64 + v, x as f64 + u);
                out.u[[y, x]] += bilinear(&next.u, py, px);
                out.v[[y, x]] += bilinear(&next.v, py, px);
            }
        }
        out
    }

    /// Mean endpoint error against `other`, ignoring `border` pixels per side.
    pub fn mean_endpoint_error(&self, other: &FlowField, border: usize) -> f64 {
        let (h, w) = self.shape();
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in border..h.saturating_sub(border) {
            for x in border..w.saturating_sub(border) {
                let du = self.u[[y, x]] - other.u[[y, x]];
                let dv = self.v[[y, x]] - other.v[[y, x]];
                acc += (du * du + dv * dv).sqrt();
                n += 1;
            }
        }
        acc / n.max(1) as f64
    }

    /// Plain-text dump: a `flow <rows> <cols>` header, then one `row col u v`
    /// line per pixel in raster order.
    pub fn to_text(&self) -> String {
        let (h, w) = self.shape();
        let mut s = String::with_capacity(h * w * 32);
        s.push_str("# fluoroden flow dump: u = column displacement, v = row displacement (pixels)\n");
        let _ = writeln!(s, "flow {h} {w}");
        for y in 0..h {
            for x in 0..w {
                let _ = writeln!(s, "{y} {x} {:.6} {:.6}", self.u[[y, x]], self.v[[y, x]]);
            }
        }
        s
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Backward warp with bilinear sampling; samples outside the frame are
/// clamped to the border.
pub fn warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    let (h, w) = frame.dim();
    if flow.shape() != (h, w) {
        let (fh, fw) = flow.shape();
        return Err(Error::shape(&[h, w], &[fh, fw]));
    }
    if !flow.is_finite() {
        return Err(Error::NonFiniteFlow);
    }
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        bilinear(frame, y as f64 + flow.v[[y, x]], x as f64 + flow.u[[y, x]])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMethod {
    /// Coarse-to-fine dense Lucas-Kanade with iterative warping.
    LucasKanade,
    /// Always returns zero flow.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowEstimatorConfig {
    pub method: FlowMethod,
    pub pyramid_levels: usize,
    pub iterations: usize,
    /// Tikhonov weight added to the structure tensor diagonal, relative to
    /// the mean structure-tensor trace of the level.
    pub smoothing: f64,
    /// Gaussian integration window of the local least-squares fit.
    pub window_sigma: f64,
    /// Gaussian pre-smoothing of both frames before estimation.
    pub presmooth_sigma: f64,
}

impl Default for FlowEstimatorConfig {
    fn default() -> Self {
        Self {
            method: FlowMethod::LucasKanade,
            pyramid_levels: 3,
            iterations: 4,
            smoothing: 0.05,
            window_sigma: 2.5,
            presmooth_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowEstimate {
    pub flow: FlowField,
    /// Set when the images carry no usable gradient (e.g. constant frames).
    pub low_confidence: bool,
}

pub trait FlowEstimator {
    fn estimate(&self, reference: &Frame, moving: &Frame) -> Result<FlowEstimate>;
}

/// Builds the estimator named by `cfg.method`.
pub fn estimator(cfg: &FlowEstimatorConfig) -> Result<Box<dyn FlowEstimator + Send + Sync>> {
    if cfg.pyramid_levels == 0 {
        return Err(Error::Config("pyramid_levels must be >= 1".into()));
    }
    Ok(match cfg.method {
        FlowMethod::LucasKanade => Box::new(PyramidalLucasKanade { cfg: cfg.clone() }),
        FlowMethod::Zero => Box::new(ZeroFlow),
    })
}

pub fn estimate_flow(reference: &Frame, moving: &Frame, cfg: &FlowEstimatorConfig) -> Result<FlowEstimate> {
    estimator(cfg)?.estimate(reference, moving)
}

pub struct ZeroFlow;

impl FlowEstimator for ZeroFlow {
    fn estimate(&self, reference: &Frame, moving: &Frame) -> Result<FlowEstimate> {
        check_pair(reference, moving)?;
        let (h, w) = reference.dim();
        Ok(FlowEstimate {
            flow: FlowField::zeros(h, w),
            low_confidence: false,
        })
    }
}

pub struct PyramidalLucasKanade {
    cfg: FlowEstimatorConfig,
}

const DEGENERATE_TRACE: f64 = 1e-14;

fn check_pair(reference: &Frame, moving: &Frame) -> Result<()> {
    if reference.dim() != moving.dim() {
        let (a, b) = (reference.dim(), moving.dim());
        return Err(Error::shape(&[a.0, a.1], &[b.0, b.1]));
    }
    Ok(())
}

impl FlowEstimator for PyramidalLucasKanade {
    fn estimate(&self, reference: &Frame, moving: &Frame) -> Result<FlowEstimate> {
        check_pair(reference, moving)?;
        let cfg = &self.cfg;
        let (h, w) = reference.dim();
        let (gy, gx) = gradients(reference);
        let energy = gy.iter().chain(gx.iter()).fold(0.0f64, |m, g| m.max(g.abs()));
        if energy * energy < DEGENERATE_TRACE {
            return Ok(FlowEstimate {
                flow: FlowField::zeros(h, w),
                low_confidence: true,
            });
        }

        let smooth = |f: &Frame| {
            if cfg.presmooth_sigma > 0.0 {
                gaussian_blur(f, cfg.presmooth_sigma)
            } else {
                f.clone()
            }
        };
        let mut refs = vec![smooth(reference)];
        let mut movs = vec![smooth(moving)];
        while refs.len() < cfg.pyramid_levels {
            let last = refs.last().unwrap();
            if last.nrows() < 16 || last.ncols() < 16 {
                break;
            }
            let r = pyramid_down(last);
            let m = pyramid_down(movs.last().unwrap());
            refs.push(r);
            movs.push(m);
        }

        let window = gaussian_kernel(cfg.window_sigma);
        let mut flow: Option<FlowField> = None;
        for level in (0..refs.len()).rev() {
            let (rf, mv) = (&refs[level], &movs[level]);
            let (lh, lw) = rf.dim();
            let mut current = match flow.take() {
                None => FlowField::zeros(lh, lw),
                Some(prev) => {
                    let sy = lh as f64 / prev.u.nrows() as f64;
                    let sx = lw as f64 / prev.u.ncols() as f64;
                    FlowField {
                        u: resize_bilinear(&prev.u, lh, lw) * sx,
                        v: resize_bilinear(&prev.v, lh, lw) * sy,
                    }
                }
            };
            let (ry, rx) = gradients(rf);
            for _ in 0..cfg.iterations.max(1) {
                let warped = warp(mv, &current)?;
                let (wy, wx) = gradients(&warped);
                let iy = (&ry + &wy) * 0.5;
                let ix = (&rx + &wx) * 0.5;
                let it = &warped - rf;
                let sxx = separable_filter(&(&ix * &ix), &window);
                let sxy = separable_filter(&(&ix * &iy), &window);
                let syy = separable_filter(&(&iy * &iy), &window);
                let sxt = separable_filter(&(&ix * &it), &window);
                let syt = separable_filter(&(&iy * &it), &window);
                let mean_trace = (sxx.sum() + syy.sum()) / (lh * lw) as f64;
                let lambda = cfg.smoothing * mean_trace + 1e-12;
                for y in 0..lh {
                    for x in 0..lw {
                        let a = sxx[[y, x]] + lambda;
                        let b = sxy[[y, x]];
                        let c = syy[[y, x]] + lambda;
                        let det = a * c - b * b;
                        let (p, q) = (sxt[[y, x]], syt[[y, x]]);
                        // solve [a b; b c] [du dv] = -[p q]
                        let du = -(c * p - b * q) / det;
                        let dv = -(a * q - b * p) / det;
                        current.u[[y, x]] += du;
                        current.v[[y, x]] += dv;
                    }
                }
            }
            flow = Some(current);
        }
        let flow = flow.expect("at least one level");
        if !flow.is_finite() {
            return Err(Error::NonFiniteFlow);
        }
        Ok(FlowEstimate {
            flow,
            low_confidence: false,
        })
    }
}

/// Warps every neighbour of the window onto the centre frame.
///
/// Returns the frames in temporal order `[x~_{-r}, .., x~_{-1}, x_i, x~_{+1}, .., x~_{+r}]`.
/// Flows to non-adjacent frames are composed from adjacent-pair flows; the
/// centre frame is passed through untouched.
pub fn compensate_window(window: &TrainingWindow, cfg: &FlowEstimatorConfig) -> Result<Vec<Frame>> {
    let est = estimator(cfg)?;
    compensate_with(window, est.as_ref())
}

pub fn compensate_with(window: &TrainingWindow, est: &dyn FlowEstimator) -> Result<Vec<Frame>> {
    let flows = window_flows(window, est)?;
    window
        .stack()
        .into_iter()
        .zip(&flows)
        .map(|(f, flow)| match flow {
            Some(flow) => warp(f, flow),
            None => Ok(f.clone()),
        })
        .collect()
}

/// Flow from the centre frame to every frame of the window, in temporal
/// order; `None` at the centre.
pub fn window_flows(window: &TrainingWindow, est: &dyn FlowEstimator) -> Result<Vec<Option<FlowField>>> {
    let stack = window.stack();
    let r = window.radius();
    let mut out = vec![None; stack.len()];
    for dir in [-1isize, 1] {
        let mut acc: Option<FlowField> = None;
        let mut prev = r;
        for step in 1..=r {
            let k = (r as isize + dir * step as isize) as usize;
            let hop = est.estimate(stack[prev], stack[k])?.flow;
            let total = match acc.take() {
                None => hop,
                Some(a) => a.compose(&hop),
            };
            out[k] = Some(total.clone());
            acc = Some(total);
            prev = k;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn texture(h: usize, w: usize, dx: f64) -> Frame {
        Array2::from_shape_fn((h, w), |(y, x)| {
            let (y, x) = (y as f64, x as f64 - dx);
            0.5 + 0.2 * (2.0 * PI * x / 17.0).sin() * (2.0 * PI * y / 23.0).cos()
                + 0.1 * (2.0 * PI * (x + 2.0 * y) / 29.0).sin()
        })
    }

    #[test]
    fn zero_flow_is_identity() {
        let f = texture(20, 24, 0.0);
        let out = warp(&f, &FlowField::zeros(20, 24)).unwrap();
        assert!(out.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn unit_flow_shifts_one_column_with_clamped_border() {
        let f = texture(10, 12, 0.0);
        let out = warp(&f, &FlowField::uniform(10, 12, 1.0, 0.0)).unwrap();
        for y in 0..10 {
            for x in 0..11 {
                assert!((out[[y, x]] - f[[y, x + 1]]).abs() < 1e-12);
            }
            assert!((out[[y, 11]] - f[[y, 11]]).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_rejects_bad_flows() {
        let f = texture(6, 6, 0.0);
        let mut flow = FlowField::zeros(6, 6);
        flow.u[[2, 2]] = f64::NAN;
        assert!(matches!(warp(&f, &flow), Err(Error::NonFiniteFlow)));
        assert!(matches!(warp(&f, &FlowField::zeros(5, 6)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = texture(48, 48, 0.0);
        let est = estimate_flow(&f, &f, &FlowEstimatorConfig::default()).unwrap();
        assert!(est.flow.max_abs() < 1e-3);
        assert!(!est.low_confidence);
    }

    #[test]
    fn constant_frames_are_low_confidence() {
        let f = Array2::from_elem((32, 32), 0.4);
        let est = estimate_flow(&f, &f, &FlowEstimatorConfig::default()).unwrap();
        assert!(est.low_confidence);
        assert_eq!(est.flow.max_abs(), 0.0);
    }

    #[test]
    fn recovers_integer_shift() {
        // moving content sits 3 px further right, so flow u = +3
        let reference = texture(64, 64, 0.0);
        let moving = texture(64, 64, 3.0);
        let est = estimate_flow(&reference, &moving, &FlowEstimatorConfig::default()).unwrap();
        let truth = FlowField::uniform(64, 64, 3.0, 0.0);
        let epe = est.flow.mean_endpoint_error(&truth, 10);
        assert!(epe < 0.5, "EPE {epe}");
    }

    #[test]
    fn composition_adds_uniform_flows() {
        let a = FlowField::uniform(8, 8, 1.0, -0.5);
        let b = FlowField::uniform(8, 8, 0.25, 2.0);
        let c = a.compose(&b);
        assert!(c.u.iter().all(|u| (u - 1.25).abs() < 1e-12));
        assert!(c.v.iter().all(|v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn flow_text_dump_has_header_and_one_line_per_pixel() {
        let text = FlowField::uniform(2, 3, 0.5, -1.0).to_text();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], "flow 2 3");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[6], "1 2 0.500000 -1.000000");
    }
}
