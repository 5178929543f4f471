//! Small 2D image helpers shared by the flow, fusion and metric code.

use ndarray::Array2;

use crate::Frame;

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (`-1 -> 1`, `n -> n - 2`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Bilinear sample at (y, x); coordinates are clamped to the frame.
#[inline]
pub fn bilinear(frame: &Frame, y: f64, x: f64) -> f64 {
    let (h, w) = frame.dim();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = frame[[y0, x0]] * (1.0 - fx) + frame[[y0, x1]] * fx;
    let bottom = frame[[y1, x0]] * (1.0 - fx) + frame[[y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution with a symmetric odd kernel, reflect borders.
pub fn separable_filter(frame: &Frame, kernel: &[f64]) -> Frame {
    let (h, w) = frame.dim();
    let r = (kernel.len() / 2) as isize;
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * frame[[y, reflect_index(x as isize + k as isize - r, w)]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * tmp[[reflect_index(y as isize + k as isize - r, h), x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

pub fn gaussian_blur(frame: &Frame, sigma: f64) -> Frame {
    separable_filter(frame, &gaussian_kernel(sigma))
}

/// Blur with sigma 1 and keep every second sample.
pub fn pyramid_down(frame: &Frame) -> Frame {
    let blurred = gaussian_blur(frame, 1.0);
    let (h, w) = frame.dim();
    Array2::from_shape_fn((h.div_ceil(2), w.div_ceil(2)), |(y, x)| blurred[[2 * y, 2 * x]])
}

/// Bilinear resize of a field to `(h, w)`, sampling pixel centers.
pub fn resize_bilinear(frame: &Frame, h: usize, w: usize) -> Frame {
    let (sh, sw) = frame.dim();
    let sy = sh as f64 / h as f64;
    let sx = sw as f64 / w as f64;
    Array2::from_shape_fn((h, w), |(y, x)| {
        bilinear(frame, (y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5)
    })
}

/// Central-difference gradients (d/dy, d/dx) with one-sided differences at the border.
pub fn gradients(frame: &Frame) -> (Frame, Frame) {
    let (h, w) = frame.dim();
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        if h == 1 {
            0.0
        } else if y == 0 {
            frame[[1, x]] - frame[[0, x]]
        } else if y == h - 1 {
            frame[[h - 1, x]] - frame[[h - 2, x]]
        } else {
            0.5 * (frame[[y + 1, x]] - frame[[y - 1, x]])
        }
    });
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        if w == 1 {
            0.0
        } else if x == 0 {
            frame[[y, 1]] - frame[[y, 0]]
        } else if x == w - 1 {
            frame[[y, w - 1]] - frame[[y, w - 2]]
        } else {
            0.5 * (frame[[y, x + 1]] - frame[[y, x - 1]])
        }
    });
    (gy, gx)
}

pub fn mean(frame: &Frame) -> f64 {
    frame.sum() / frame.len() as f64
}
