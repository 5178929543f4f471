//! Multi-frame teacher network: multi-scale front-end, recurrent residual
//! U-Net with attention-gated skips.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{AttentionGate, Conv, MultiScaleExtractor, RecurrentResidual};
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::Denoiser;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiScaleMode {
    /// 3x3, 5x5 and 7x7 branches.
    Full,
    /// A single 3x3 branch.
    Only3x3,
    /// No front-end; raw frames feed the U-Net directly.
    Without,
}

impl MultiScaleMode {
    pub fn kernels(self) -> &'static [usize] {
        match self {
            MultiScaleMode::Full => &[3, 5, 7],
            MultiScaleMode::Only3x3 => &[3],
            MultiScaleMode::Without => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Msr2auConfig {
    /// Number of neighbouring frames fed to the network (center excluded).
    pub context_frames: usize,
    pub multiscale: MultiScaleMode,
    /// Filters per kernel size and frame in the front-end.
    pub scale_filters: usize,
    /// Number of 2x poolings in the encoder.
    pub levels: usize,
    pub base_channels: usize,
    /// When false, blocks use a plain convolution instead of a recurrent residual unit.
    pub recurrent: bool,
    /// Recurrence depth `t` of each recurrent residual unit.
    pub recurrence_depth: usize,
}

impl Default for Msr2auConfig {
    fn default() -> Self {
        Self {
            context_frames: 4,
            multiscale: MultiScaleMode::Full,
            scale_filters: 32,
            levels: 3,
            base_channels: 16,
            recurrent: true,
            recurrence_depth: 2,
        }
    }
}

impl Msr2auConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_frames == 0 || self.context_frames % 2 != 0 {
            return Err(Error::Config(format!(
                "context_frames must be a positive even count, got {}",
                self.context_frames
            )));
        }
        if self.base_channels == 0 || self.recurrence_depth == 0 {
            return Err(Error::Config("base_channels and recurrence_depth must be positive".into()));
        }
        if self.multiscale != MultiScaleMode::Without && self.scale_filters == 0 {
            return Err(Error::Config("scale_filters must be positive".into()));
        }
        Ok(())
    }

    /// Channel count entering the U-Net.
    pub fn front_channels(&self) -> usize {
        match self.multiscale {
            MultiScaleMode::Without => self.context_frames,
            mode => self.context_frames * mode.kernels().len() * self.scale_filters,
        }
    }
}

#[derive(Debug, Clone)]
enum Body {
    Recurrent(RecurrentResidual),
    Plain(Conv),
}

/// 1x1 projection to the level width followed by the block body.
#[derive(Debug, Clone)]
struct Block {
    proj: Conv,
    body: Body,
}

impl Block {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, cfg: &Msr2auConfig) -> Self {
        let proj = Conv::new(store, rng, &format!("{name}.proj"), cin, cout, 1);
        let body = if cfg.recurrent {
            Body::Recurrent(RecurrentResidual::new(store, rng, name, cout, cfg.recurrence_depth))
        } else {
            Body::Plain(Conv::new(store, rng, &format!("{name}.conv"), cout, cout, 3))
        };
        Self { proj, body }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let p = self.proj.forward(tape, store, x);
        match &self.body {
            Body::Recurrent(unit) => unit.forward(tape, store, p),
            Body::Plain(conv) => conv.forward_relu(tape, store, p),
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: Conv,
    gate: AttentionGate,
    block: Block,
}

#[derive(Debug, Clone)]
pub struct Msr2auNet {
    config: Msr2auConfig,
    store: ParamStore,
    front: Option<MultiScaleExtractor>,
    encoder: Vec<Block>,
    decoder: Vec<DecoderLevel>,
    head: Conv,
}

impl Msr2auNet {
    pub fn new(config: Msr2auConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let front = match config.multiscale {
            MultiScaleMode::Without => None,
            mode => Some(MultiScaleExtractor::new(&mut store, &mut rng, "front", mode.kernels(), config.scale_filters)),
        };
        let width = |l: usize| config.base_channels << l;
        let mut encoder = Vec::new();
        let mut cin = config.front_channels();
        for l in 0..=config.levels {
            encoder.push(Block::new(&mut store, &mut rng, &format!("enc{l}"), cin, width(l), &config));
            cin = width(l);
        }
        let mut decoder = Vec::new();
        for l in (0..config.levels).rev() {
            let c = width(l);
            decoder.push(DecoderLevel {
                up: Conv::new(&mut store, &mut rng, &format!("dec{l}.up"), width(l + 1), c, 3),
                gate: AttentionGate::new(&mut store, &mut rng, &format!("dec{l}.gate"), c, c, (c / 2).max(1)),
                block: Block::new(&mut store, &mut rng, &format!("dec{l}"), 2 * c, c, &config),
            });
        }
        let head = Conv::new(&mut store, &mut rng, "head", width(0), 1, 1);
        // zero output at init; the first Adam steps size the head
        head.scale_weight(&mut store, 0.0);
        Ok(Self {
            config,
            store,
            front,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &Msr2auConfig {
        &self.config
    }

    /// Front-end features for an `(n, context_frames, h, w)` input: each frame
    /// goes through the same extractor and the results are concatenated.
    pub fn front_features(&self, tape: &mut Tape, input: Var) -> Var {
        match &self.front {
            None => input,
            Some(ext) => {
                let maps: Vec<Var> = (0..self.config.context_frames)
                    .map(|k| {
                        let frame = tape.channels(input, k, 1);
                        ext.forward(tape, &self.store, frame)
                    })
                    .collect();
                tape.concat(&maps)
            }
        }
    }
}

impl Denoiser for Msr2auNet {
    const KIND: &'static str = "msr2au";
    type Config = Msr2auConfig;

    fn build(config: Msr2auConfig, seed: u64) -> Result<Self> {
        Self::new(config, seed)
    }

    fn arch(&self) -> &Msr2auConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn input_channels(&self) -> usize {
        self.config.context_frames
    }

    fn levels(&self) -> usize {
        self.config.levels
    }

    fn forward(&self, tape: &mut Tape, input: Var) -> Var {
        let store = &self.store;
        let mut x = self.front_features(tape, input);
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (l, block) in self.encoder.iter().enumerate() {
            if l > 0 {
                x = tape.max_pool2(x);
            }
            x = block.forward(tape, store, x);
            skips.push(x);
        }
        skips.pop();
        for dec in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder level");
            let up = tape.upsample2(x);
            let up = dec.up.forward_relu(tape, store, up);
            let (gated, _) = dec.gate.forward(tape, store, skip, up);
            let cat = tape.concat(&[gated, up]);
            x = dec.block.forward(tape, store, cat);
        }
        self.head.forward(tape, store, x)
    }
}
