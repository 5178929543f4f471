//! Single-frame U-Net student.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::Denoiser;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub levels: usize,
    pub base_channels: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 16,
        }
    }
}

#[derive(Debug, Clone)]
struct DoubleConv {
    a: Conv,
    b: Conv,
}

impl DoubleConv {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            a: Conv::new(store, rng, &format!("{name}.a"), cin, cout, 3),
            b: Conv::new(store, rng, &format!("{name}.b"), cout, cout, 3),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let y = self.a.forward_relu(tape, store, x);
        self.b.forward_relu(tape, store, y)
    }
}

#[derive(Debug, Clone)]
pub struct StudentUNet {
    config: StudentConfig,
    store: ParamStore,
    encoder: Vec<DoubleConv>,
    /// `(up-convolution, block)` per decoder level, deepest first.
    decoder: Vec<(Conv, DoubleConv)>,
    head: Conv,
}

impl StudentUNet {
    pub fn new(config: StudentConfig, seed: u64) -> Result<Self> {
        if config.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let width = |l: usize| config.base_channels << l;
        let mut encoder = Vec::new();
        let mut cin = 1;
        for l in 0..=config.levels {
            encoder.push(DoubleConv::new(&mut store, &mut rng, &format!("enc{l}"), cin, width(l)));
            cin = width(l);
        }
        let decoder = (0..config.levels)
            .rev()
            .map(|l| {
                let up = Conv::new(&mut store, &mut rng, &format!("dec{l}.up"), width(l + 1), width(l), 3);
                let block = DoubleConv::new(&mut store, &mut rng, &format!("dec{l}"), 2 * width(l), width(l));
                (up, block)
            })
            .collect();
        let head = Conv::new(&mut store, &mut rng, "head", width(0), 1, 1);
        // zero output at init; the first Adam steps size the head
        head.scale_weight(&mut store, 0.0);
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            head,
        })
    }
}

impl Denoiser for StudentUNet {
    const KIND: &'static str = "student";
    type Config = StudentConfig;

    fn build(config: StudentConfig, seed: u64) -> Result<Self> {
        Self::new(config, seed)
    }

    fn arch(&self) -> &StudentConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn input_channels(&self) -> usize {
        1
    }

    fn levels(&self) -> usize {
        self.config.levels
    }

    fn forward(&self, tape: &mut Tape, input: Var) -> Var {
        let store = &self.store;
        let mut x = input;
        let mut skips = Vec::new();
        for (l, block) in self.encoder.iter().enumerate() {
            if l > 0 {
                x = tape.max_pool2(x);
            }
            x = block.forward(tape, store, x);
            skips.push(x);
        }
        skips.pop();
        for (up, block) in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder level");
            let u = tape.upsample2(x);
            let u = up.forward_relu(tape, store, u);
            let cat = tape.concat(&[skip, u]);
            x = block.forward(tape, store, cat);
        }
        self.head.forward(tape, store, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tensor;

    #[test]
    fn shape_is_preserved() {
        let net = StudentUNet::new(StudentConfig { levels: 3, base_channels: 4 }, 0).unwrap();
        let x = Tensor::from_shape_fn((2, 1, 64, 64), |(n, _, y, x)| ((n + y * x) % 5) as f64 / 5.0);
        let y = net.predict(&x).unwrap();
        assert_eq!(y.dim(), (2, 1, 64, 64));
        assert_eq!(y, net.predict(&x).unwrap());
        assert!(net.predict(&Tensor::zeros((1, 1, 20, 64))).is_err());
    }
}
