//! Training objectives. Every loss is a mean over pixels (and over the batch
//! when averaged by the caller).

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::mse;
use crate::fusion::{local_variance, FusionProducts, HfOperator};
use crate::Frame;

/// Teacher objective: squared error between the predicted and the observed
/// noisy centre frame.
pub fn loss_step1(prediction: &Frame, target: &Frame) -> Result<f64> {
    mse(prediction, target)
}

/// Distillation loss between the student output and the frozen teacher output.
pub fn loss_pre(student: &Frame, teacher: &Frame) -> Result<f64> {
    mse(student, teacher)
}

/// Pull toward the recursive-filter output, which is a constant target.
pub fn loss_recur(student: &Frame, filtered: &Frame) -> Result<f64> {
    mse(student, filtered)
}

/// Squared error between the fusion-weighted high-frequency components.
pub fn loss_hf(hf_student: &Frame, hf_filtered: &Frame) -> Result<f64> {
    mse(hf_student, hf_filtered)
}

/// Which second-step terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSet {
    pub pre: bool,
    pub recur: bool,
    pub hf: bool,
}

impl LossSet {
    pub const ALL: LossSet = LossSet {
        pre: true,
        recur: true,
        hf: true,
    };

    pub fn needs_filter(self) -> bool {
        self.recur || self.hf
    }
}

/// Individual second-step terms; disabled terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossParts {
    pub pre: f64,
    pub recur: f64,
    pub hf: f64,
}

impl LossParts {
    pub fn scaled(self, s: f64) -> Self {
        Self {
            pre: self.pre * s,
            recur: self.recur * s,
            hf: self.hf * s,
        }
    }

    pub fn add(self, o: Self) -> Self {
        Self {
            pre: self.pre + o.pre,
            recur: self.recur + o.recur,
            hf: self.hf + o.hf,
        }
    }
}

/// `pre + alpha * recur + hf`.
pub fn loss_total(parts: &LossParts, alpha: f64) -> f64 {
    parts.pre + alpha * parts.recur + parts.hf
}

/// Second-step loss of one sample and its gradient with respect to the
/// student output.
///
/// In the HF term the two local-variance maps are held constant. With
/// `A = var(d_s) * f`, `B = var(d_f) * H(f)` the term is
/// `mean((A * H(s) - B * s)^2)` and, `H` being self-adjoint, its gradient is
/// `H(A * g) - B * g` with `g = 2 (A H(s) - B s) / n`.
pub fn step2_objective(
    student: &Frame,
    teacher: &Frame,
    filtered: Option<&Frame>,
    losses: LossSet,
    alpha: f64,
    variance_window: usize,
    op: &HfOperator,
) -> Result<(LossParts, Frame)> {
    let n = student.len() as f64;
    let mut parts = LossParts::default();
    let mut grad = Frame::zeros(student.raw_dim());
    if losses.pre {
        parts.pre = loss_pre(student, teacher)?;
        grad.zip_mut_with(&(student - teacher), |g, &d| *g += 2.0 * d / n);
    }
    if losses.needs_filter() {
        let f = filtered.ok_or_else(|| crate::Error::Config("recursive-filter target missing".into()))?;
        if losses.recur {
            parts.recur = loss_recur(student, f)?;
            grad.zip_mut_with(&(student - f), |g, &d| *g += alpha * 2.0 * d / n);
        }
        if losses.hf {
            let fp = FusionProducts::compute_with(student, f, variance_window, op)?;
            parts.hf = loss_hf(&fp.hf_student, &fp.hf_filtered)?;
            let var_f = local_variance(&fp.diff_filtered, variance_window)?;
            let b = &var_f * &fp.high_filtered;
            let g = (&fp.hf_student - &fp.hf_filtered) * (2.0 / n);
            let back = op.apply(&(&fp.fusion_student * &g))? - &b * &g;
            grad += &back;
        }
    }
    Ok((parts, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::HighpassConfig;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((16, 16), || rng.random_range(0.0..1.0))
    }

    #[test]
    fn mse_family_closed_forms() {
        let a = random(1);
        for f in [loss_step1, loss_pre, loss_recur, loss_hf] {
            assert_eq!(f(&a, &a).unwrap(), 0.0);
            assert!((f(&(&a + 1.0), &a).unwrap() - 1.0).abs() < 1e-12);
            assert!(f(&a, &random(2)).unwrap() > 0.0);
        }
    }

    #[test]
    fn total_combines_parts() {
        assert_eq!(loss_total(&LossParts::default(), 1.0), 0.0);
        let p = LossParts { pre: 1.0, recur: 2.0, hf: 3.0 };
        assert_eq!(loss_total(&p, 1.0), 6.0);
        assert_eq!(loss_total(&p, 0.0), 4.0);
    }

    #[test]
    fn hf_vanishes_for_equal_or_constant_inputs() {
        let op = HfOperator::new(16, 16, &HighpassConfig::default()).unwrap();
        let a = random(3);
        let (p, _) = step2_objective(&a, &a, Some(&a), LossSet::ALL, 1.0, 7, &op).unwrap();
        assert_eq!(p.hf, 0.0);
        let c1 = Array2::from_elem((16, 16), 0.3);
        let c2 = Array2::from_elem((16, 16), 0.6);
        let (p, _) = step2_objective(&c1, &c1, Some(&c2), LossSet::ALL, 1.0, 7, &op).unwrap();
        assert!(p.hf.abs() < 1e-20, "{}", p.hf);
    }

    #[test]
    fn hf_spot_value_matches_direct_formula() {
        let op = HfOperator::new(16, 16, &HighpassConfig::default()).unwrap();
        let (s, f) = (random(4), random(5));
        let only_hf = LossSet { hf: true, ..Default::default() };
        let (p, _) = step2_objective(&s, &s, Some(&f), only_hf, 1.0, 7, &op).unwrap();
        // direct recomputation from the definitions
        let avg = (&s + &f) / 2.0;
        let ds = (&avg - &s).mapv(f64::abs);
        let df = (&avg - &f).mapv(f64::abs);
        let hs = &local_variance(&ds, 7).unwrap() * &f * &op.apply(&s).unwrap();
        let hr = &local_variance(&df, 7).unwrap() * &s * &op.apply(&f).unwrap();
        let direct = (&hs - &hr).mapv(|v| v * v).mean().unwrap();
        assert!((p.hf - direct).abs() < 1e-15 * direct.max(1.0));
        assert!(p.hf > 0.0);
    }

    /// Loss with the variance maps frozen at the base point, evaluated from scratch.
    fn frozen_loss(s: &Frame, t: &Frame, f: &Frame, vs: &Frame, vf: &Frame, op: &HfOperator, alpha: f64) -> f64 {
        let pre = (s - t).mapv(|v| v * v).mean().unwrap();
        let recur = (s - f).mapv(|v| v * v).mean().unwrap();
        let a = vs * f * &op.apply(s).unwrap();
        let b = vf * s * &op.apply(f).unwrap();
        let hf = (&a - &b).mapv(|v| v * v).mean().unwrap();
        pre + alpha * recur + hf
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let op = HfOperator::new(16, 16, &HighpassConfig::default()).unwrap();
        let (s, t, f) = (random(6), random(7), random(8));
        let alpha = 0.7;
        let (_, grad) = step2_objective(&s, &t, Some(&f), LossSet::ALL, alpha, 7, &op).unwrap();
        let avg = (&s + &f) / 2.0;
        let vs = local_variance(&(&avg - &s).mapv(f64::abs), 7).unwrap();
        let vf = local_variance(&(&avg - &f).mapv(f64::abs), 7).unwrap();
        let eps = 1e-6;
        for &(y, x) in &[(0, 0), (3, 7), (8, 8), (15, 2), (11, 14)] {
            let mut plus = s.clone();
            plus[[y, x]] += eps;
            let mut minus = s.clone();
            minus[[y, x]] -= eps;
            let numeric = (frozen_loss(&plus, &t, &f, &vs, &vf, &op, alpha) - frozen_loss(&minus, &t, &f, &vs, &vf, &op, alpha))
                / (2.0 * eps);
            let analytic = grad[[y, x]];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-9);
            assert!(rel < 1e-6, "({y},{x}): {analytic} vs {numeric}");
        }
    }
}
