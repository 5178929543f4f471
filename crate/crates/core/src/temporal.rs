//! First-order recursive (exponential) temporal filter.
//!
//! The state starts at the first frame of the stack and is updated as
//! `state <- (1 - w) * state + w * x_j` for every later frame, so the output
//! is a convex combination of the stack with weights given by
//! [`effective_weights`].

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{compensate_with, FlowEstimator};
use crate::io::TrainingWindow;
use crate::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    /// The state starts at the oldest frame of the stack.
    FirstFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecursiveFilterConfig {
    pub w: f64,
    pub init_policy: InitPolicy,
}

impl Default for RecursiveFilterConfig {
    fn default() -> Self {
        Self {
            w: 0.2,
            init_policy: InitPolicy::FirstFrame,
        }
    }
}

impl RecursiveFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w <= 1.0) {
            return Err(Error::Config(format!("recursive filter weight {} outside (0, 1]", self.w)));
        }
        Ok(())
    }
}

/// Filters a temporally ordered stack (oldest first) and returns the final state.
///
/// The canonical input is the five motion-compensated frames `j = -2..=2`.
pub fn recursive_filter<F: Borrow<Frame>>(stack: &[F], cfg: &RecursiveFilterConfig) -> Result<Frame> {
    recursive_filter_n(stack, cfg, Some(5))
}

/// Same as [`recursive_filter`] without the five-frame length requirement.
pub fn recursive_filter_n<F: Borrow<Frame>>(
    stack: &[F],
    cfg: &RecursiveFilterConfig,
    expected_len: Option<usize>,
) -> Result<Frame> {
    cfg.validate()?;
    if let Some(n) = expected_len {
        if stack.len() != n {
            return Err(Error::Config(format!("recursive filter expects {n} frames, got {}", stack.len())));
        }
    }
    let first = stack.first().ok_or(Error::EmptyInput)?.borrow();
    let shape = first.dim();
    let mut state = match cfg.init_policy {
        InitPolicy::FirstFrame => first.clone(),
    };
    for frame in &stack[1..] {
        let frame = frame.borrow();
        if frame.dim() != shape {
            return Err(Error::shape(&[shape.0, shape.1], &[frame.nrows(), frame.ncols()]));
        }
        state.zip_mut_with(frame, |s, &x| *s = (1.0 - cfg.w) * *s + cfg.w * x);
    }
    Ok(state)
}

/// Filters a whole window in temporal order. With an estimator the
/// neighbours are first warped onto the centre frame.
pub fn filter_window(
    window: &TrainingWindow,
    flow: Option<&dyn FlowEstimator>,
    cfg: &RecursiveFilterConfig,
) -> Result<Frame> {
    match flow {
        Some(est) => recursive_filter_n(&compensate_with(window, est)?, cfg, None),
        None => recursive_filter_n(&window.stack(), cfg, None),
    }
}

/// Closed-form weight of each of `n` frames in the filter output.
///
/// Frame 0 gets `(1 - w)^(n-1)`, frame `k >= 1` gets `w (1 - w)^(n-1-k)`.
pub fn effective_weights(n: usize, w: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let decay = (1.0 - w).powi((n - 1 - k) as i32);
            if k == 0 {
                decay
            } else {
                w * decay
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn frames(values: &[f64]) -> Vec<Frame> {
        values.iter().map(|&v| Array2::from_elem((3, 4), v)).collect()
    }

    #[test]
    fn constant_stack_is_a_fixed_point() {
        let out = recursive_filter(&frames(&[0.7; 5]), &RecursiveFilterConfig::default()).unwrap();
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn impulse_in_the_oldest_frame() {
        // 0.8^4 = 0.4096
        let out = recursive_filter(&frames(&[1.0, 0.0, 0.0, 0.0, 0.0]), &RecursiveFilterConfig::default()).unwrap();
        assert!(out.iter().all(|v| (v - 0.4096).abs() < 1e-15));
    }

    #[test]
    fn closed_form_weights() {
        let w = effective_weights(5, 0.2);
        let expected = [0.4096, 0.1024, 0.128, 0.16, 0.2];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(effective_weights(1, 0.3), vec![1.0]);
        for n in 1..12 {
            for &wt in &[0.05, 0.2, 0.5, 1.0] {
                let s: f64 = effective_weights(n, wt).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_match_unit_impulses() {
        let cfg = RecursiveFilterConfig { w: 0.35, ..Default::default() };
        let weights = effective_weights(5, 0.35);
        for k in 0..5 {
            let mut v = [0.0; 5];
            v[k] = 1.0;
            let out = recursive_filter(&frames(&v), &cfg).unwrap();
            assert!((out[[0, 0]] - weights[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = RecursiveFilterConfig::default();
        assert!(recursive_filter(&frames(&[1.0; 4]), &cfg).is_err());
        let bad = RecursiveFilterConfig { w: 0.0, ..cfg };
        assert!(recursive_filter(&frames(&[1.0; 5]), &bad).is_err());
        let bad = RecursiveFilterConfig { w: 1.5, ..cfg };
        assert!(recursive_filter(&frames(&[1.0; 5]), &bad).is_err());
        let mut mixed = frames(&[1.0; 5]);
        mixed[3] = Array2::zeros((2, 2));
        assert!(matches!(recursive_filter(&mixed, &cfg), Err(Error::ShapeMismatch { .. })));
    }
}
