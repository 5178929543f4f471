//! Convolutional building blocks shared by both networks.

use ndarray::Array4;
use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

/// Same-size convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, cout: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let weight = store.add_he(format!("{name}.weight"), (cout, cin, kernel, kernel), rng);
        let bias = store.add(format!("{name}.bias"), Array4::zeros((1, cout, 1, 1)));
        Self {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
        }
    }

    /// Multiplies the weights in place (used to damp freshly initialized layers).
    pub fn scale_weight(&self, store: &mut ParamStore, factor: f64) {
        let w = store.get(self.weight) * factor;
        store.set(self.weight, w).expect("same shape");
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, b)
    }

    pub fn forward_relu(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let y = self.forward(tape, store, x);
        tape.relu(y)
    }
}

/// Parallel 3x3 / 5x5 / 7x7 convolutions (each followed by ReLU) on a
/// single-channel frame, concatenated along channels.
#[derive(Debug, Clone)]
pub struct MultiScaleExtractor {
    pub convs: Vec<Conv>,
}

impl MultiScaleExtractor {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, kernels: &[usize], filters: usize) -> Self {
        let convs = kernels
            .iter()
            .map(|&k| Conv::new(store, rng, &format!("{name}.k{k}"), 1, filters, k))
            .collect();
        Self { convs }
    }

    pub fn out_channels(&self) -> usize {
        self.convs.iter().map(|c| c.out_channels).sum()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, frame: Var) -> Var {
        let maps: Vec<Var> = self.convs.iter().map(|c| c.forward_relu(tape, store, frame)).collect();
        tape.concat(&maps)
    }
}

/// Recurrent residual unit: `x + R_t(x)` where `r_1 = relu(conv(x))` and
/// `r_k = relu(conv(x + r_{k-1}))`, all with one shared convolution.
#[derive(Debug, Clone)]
pub struct RecurrentResidual {
    pub conv: Conv,
    pub t: usize,
}

impl RecurrentResidual {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, t: usize) -> Self {
        assert!(t >= 1, "recurrence depth must be at least 1");
        let conv = Conv::new(store, rng, &format!("{name}.rconv"), channels, channels, 3);
        // the unrolled sum x + r_t grows with depth under plain He init
        conv.scale_weight(store, 1.0 / t as f64);
        Self { conv, t }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let mut r = self.conv.forward_relu(tape, store, x);
        for _ in 1..self.t {
            let s = tape.add(x, r);
            r = self.conv.forward_relu(tape, store, s);
        }
        tape.add(x, r)
    }
}

/// Additive attention gate on a skip connection.
///
/// `A = sigmoid(psi(relu(Wx skip + Wg gating)))`, output `skip * A`.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    pub wx: Conv,
    pub wg: Conv,
    pub psi: Conv,
}

impl AttentionGate {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, skip_ch: usize, gate_ch: usize, inter_ch: usize) -> Self {
        Self {
            wx: Conv::new(store, rng, &format!("{name}.wx"), skip_ch, inter_ch, 1),
            wg: Conv::new(store, rng, &format!("{name}.wg"), gate_ch, inter_ch, 1),
            psi: Conv::new(store, rng, &format!("{name}.psi"), inter_ch, 1, 1),
        }
    }

    /// Returns the gated skip features and the attention map.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, skip: Var, gating: Var) -> (Var, Var) {
        let a = self.wx.forward(tape, store, skip);
        let b = self.wg.forward(tape, store, gating);
        let s = tape.add(a, b);
        let s = tape.relu(s);
        let logits = self.psi.forward(tape, store, s);
        let attn = tape.sigmoid(logits);
        (tape.gate_mul(skip, attn), attn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tensor;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).raw_dim();
            store.set(id, Array4::zeros(shape)).unwrap();
        }
    }

    fn random_tensor(shape: (usize, usize, usize, usize), seed: u64) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn multiscale_shapes_and_zero_weights() {
        let mut store = ParamStore::new();
        let ext = MultiScaleExtractor::new(&mut store, &mut rng(), "ms", &[3, 5, 7], 32);
        let mut tape = Tape::new();
        let x = tape.input(random_tensor((1, 1, 64, 64), 1));
        let y = ext.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y).dim(), (1, 96, 64, 64));

        zero_all(&mut store);
        let mut tape = Tape::new();
        let x = tape.input(random_tensor((1, 1, 64, 64), 1));
        let y = ext.forward(&mut tape, &store, x);
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recurrence_adds_no_parameters() {
        let count = |t| {
            let mut store = ParamStore::new();
            RecurrentResidual::new(&mut store, &mut rng(), "r", 8, t);
            store.num_scalars()
        };
        assert_eq!(count(1), count(3));
    }

    #[test]
    fn zero_weights_give_residual_identity() {
        let mut store = ParamStore::new();
        let unit = RecurrentResidual::new(&mut store, &mut rng(), "r", 3, 2);
        zero_all(&mut store);
        let x0 = random_tensor((1, 3, 6, 6), 2);
        let mut tape = Tape::new();
        let x = tape.input(x0.clone());
        let y = unit.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y), &x0);
    }

    #[test]
    fn two_step_recurrence_matches_manual_unroll() {
        // Single channel, 4x4 map, so the shared convolution is easy to apply by hand.
        let mut store = ParamStore::new();
        let unit = RecurrentResidual::new(&mut store, &mut rng(), "r", 1, 2);
        let x0 = random_tensor((1, 1, 4, 4), 3);
        let w = store.get(unit.conv.weight).clone();
        let b = store.get(unit.conv.bias)[[0, 0, 0, 0]];
        let conv = |img: &Tensor| {
            let refl = |i: isize| -> usize {
                if i < 0 {
                    (-i) as usize
                } else if i > 3 {
                    (6 - i) as usize
                } else {
                    i as usize
                }
            };
            Tensor::from_shape_fn((1, 1, 4, 4), |(_, _, y, x)| {
                let mut acc = b;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let sy = refl(y as isize + dy as isize - 1);
                        let sx = refl(x as isize + dx as isize - 1);
                        acc += w[[0, 0, dy, dx]] * img[[0, 0, sy, sx]];
                    }
                }
                acc
            })
        };
        let relu = |t: Tensor| t.mapv(|v| v.max(0.0));
        let r1 = relu(conv(&x0));
        let r2 = relu(conv(&(&x0 + &r1)));
        let expected = &x0 + &r2;

        let mut tape = Tape::new();
        let x = tape.input(x0);
        let y = unit.forward(&mut tape, &store, x);
        for (a, e) in tape.value(y).iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_gates() {
        let mut store = ParamStore::new();
        let gate = AttentionGate::new(&mut store, &mut rng(), "g", 4, 4, 2);
        zero_all(&mut store);
        let skip0 = random_tensor((1, 4, 8, 8), 4);
        let gating0 = random_tensor((1, 4, 8, 8), 5);
        for (bias, expect_skip) in [(60.0, true), (-60.0, false)] {
            store.set(gate.psi.bias, Array4::from_elem((1, 1, 1, 1), bias)).unwrap();
            let mut tape = Tape::new();
            let skip = tape.input(skip0.clone());
            let gating = tape.input(gating0.clone());
            let (out, _) = gate.forward(&mut tape, &store, skip, gating);
            for (o, s) in tape.value(out).iter().zip(&skip0) {
                let target = if expect_skip { *s } else { 0.0 };
                assert!((o - target).abs() < 1e-20 + 1e-12 * s.abs());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn attention_never_amplifies(seed in any::<u64>(), scale in 0.1f64..20.0) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let gate = AttentionGate::new(&mut store, &mut r, "g", 3, 5, 2);
            let skip0 = random_tensor((1, 3, 6, 6), seed ^ 1) * scale;
            let gating0 = random_tensor((1, 5, 6, 6), seed ^ 2) * scale;
            let mut tape = Tape::new();
            let skip = tape.input(skip0.clone());
            let gating = tape.input(gating0);
            let (out, attn) = gate.forward(&mut tape, &store, skip, gating);
            prop_assert!(tape.value(attn).iter().all(|&a| (0.0..=1.0).contains(&a)));
            for (o, s) in tape.value(out).iter().zip(&skip0) {
                prop_assert!(o.abs() <= s.abs());
            }
        }
    }
}
