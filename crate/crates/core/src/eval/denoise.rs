//! End-to-end inference over a frame sequence.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use crate::error::{Error, Result};
use crate::flow::{estimator, FlowEstimator, FlowEstimatorConfig};
use crate::io::make_windows_with_radius;
use crate::nn::{pack, unpack, Denoiser, Msr2auConfig, Msr2auNet, StudentConfig, StudentUNet};
use crate::phantom::FrameSequence;
use crate::temporal::{filter_window, RecursiveFilterConfig};
use crate::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiseMode {
    /// Multi-frame network prediction of each interior frame.
    Teacher,
    /// Single-frame network on every frame.
    Student,
    /// Motion-compensated recursive filter on interior frames.
    Filter,
    /// The deployed pipeline: single-frame network on interior frames, with
    /// the first and last two frames passed through.
    #[default]
    Full,
}

impl DenoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DenoiseMode::Teacher => "teacher",
            DenoiseMode::Student => "student",
            DenoiseMode::Filter => "filter",
            DenoiseMode::Full => "full",
        }
    }
}

impl FromStr for DenoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(DenoiseMode::Teacher),
            "student" => Ok(DenoiseMode::Student),
            "filter" => Ok(DenoiseMode::Filter),
            "full" => Ok(DenoiseMode::Full),
            other => Err(Error::Config(format!("unknown denoise mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub mode: DenoiseMode,
    pub teacher_checkpoint: Option<PathBuf>,
    pub student_checkpoint: Option<PathBuf>,
    /// Expected architectures; when given, checkpoints must match them.
    pub teacher_arch: Option<Msr2auConfig>,
    pub student_arch: Option<StudentConfig>,
    pub motion_compensation: bool,
    pub flow: FlowEstimatorConfig,
    pub filter: RecursiveFilterConfig,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            mode: DenoiseMode::Full,
            teacher_checkpoint: None,
            student_checkpoint: None,
            teacher_arch: None,
            student_arch: None,
            motion_compensation: true,
            flow: FlowEstimatorConfig::default(),
            filter: RecursiveFilterConfig::default(),
        }
    }
}

/// A ready-to-run denoiser.
pub enum Engine<'a> {
    Teacher(&'a Msr2auNet),
    /// `boundary` frames at each end are passed through.
    Student { net: &'a StudentUNet, boundary: usize },
    Filter {
        flow: Option<&'a dyn FlowEstimator>,
        cfg: RecursiveFilterConfig,
    },
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub sequence: FrameSequence,
    /// `true` where the input frame was copied unchanged.
    pub passthrough: Vec<bool>,
    pub metrics: Option<MetricReport>,
}

fn clamp01(f: Frame) -> Frame {
    f.mapv(|v| v.clamp(0.0, 1.0))
}

/// Runs `engine` over every frame. Outputs are clamped to `[0, 1]`.
pub fn run_engine(input: &FrameSequence, engine: &Engine) -> Result<(Vec<Frame>, Vec<bool>)> {
    input.check_consistent()?;
    let n = input.len();
    let mut frames = input.frames.clone();
    let mut passthrough = vec![true; n];
    match engine {
        Engine::Teacher(net) => {
            let r = net.config().context_frames / 2;
            for w in make_windows_with_radius(input, r)? {
                let x = pack(&[w.context.iter().map(|f| f.as_ref()).collect()])?;
                frames[w.index] = clamp01(unpack(&net.predict(&x)?, 0, 0));
                passthrough[w.index] = false;
            }
        }
        Engine::Student { net, boundary } => {
            if n < 2 * boundary + 1 {
                return Err(Error::TooShort {
                    required: 2 * boundary + 1,
                    found: n,
                });
            }
            for k in *boundary..n - boundary {
                let x = pack(&[vec![&input.frames[k]]])?;
                frames[k] = clamp01(unpack(&net.predict(&x)?, 0, 0));
                passthrough[k] = false;
            }
        }
        Engine::Filter { flow, cfg } => {
            for w in make_windows_with_radius(input, 2)? {
                frames[w.index] = clamp01(filter_window(&w, *flow, cfg)?);
                passthrough[w.index] = false;
            }
        }
    }
    Ok((frames, passthrough))
}

fn checkpoint(path: &Option<PathBuf>, mode: DenoiseMode, what: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::MissingCheckpoint {
        mode: mode.as_str().to_string(),
        what: what.to_string(),
    })
}

/// Loads whatever `cfg.mode` needs, denoises `input`, and scores the result
/// against `reference` when one is given.
pub fn denoise(input: &FrameSequence, cfg: &DenoiseConfig, reference: Option<&FrameSequence>) -> Result<DenoiseOutput> {
    let (frames, passthrough) = match cfg.mode {
        DenoiseMode::Teacher => {
            let path = checkpoint(&cfg.teacher_checkpoint, cfg.mode, "teacher")?;
            let net = Msr2auNet::load(&path, cfg.teacher_arch.as_ref())?;
            run_engine(input, &Engine::Teacher(&net))?
        }
        DenoiseMode::Student | DenoiseMode::Full => {
            let path = checkpoint(&cfg.student_checkpoint, cfg.mode, "student")?;
            let net = StudentUNet::load(&path, cfg.student_arch.as_ref())?;
            let boundary = if cfg.mode == DenoiseMode::Full { 2 } else { 0 };
            run_engine(input, &Engine::Student { net: &net, boundary })?
        }
        DenoiseMode::Filter => {
            let est = estimator(&cfg.flow)?;
            let flow = cfg.motion_compensation.then_some(est.as_ref() as &dyn FlowEstimator);
            run_engine(input, &Engine::Filter { flow, cfg: cfg.filter })?
        }
    };
    let metrics = reference
        .map(|r| MetricReport::compute(&frames, &r.frames, &passthrough))
        .transpose()?;
    Ok(DenoiseOutput {
        sequence: FrameSequence {
            frames,
            dose: input.dose,
            seed: input.seed,
            spec_hash: input.spec_hash.clone(),
        },
        passthrough,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{apply_dose_noise, generate_clean_sequence, DoseLevel, PhantomSpec};

    fn static_pair() -> (FrameSequence, FrameSequence) {
        let spec = PhantomSpec {
            height: 64,
            width: 64,
            num_frames: 9,
            motion_amplitude: 0.0,
            ..Default::default()
        };
        let clean = generate_clean_sequence(&spec, 4).unwrap();
        let noisy = apply_dose_noise(&clean, DoseLevel::low(), 5).unwrap();
        (clean, noisy)
    }

    #[test]
    fn filter_mode_gain_on_static_sequence() {
        let (clean, noisy) = static_pair();
        let expected = -10.0 * 0.26024f64.log10();
        for mc in [false, true] {
            let cfg = DenoiseConfig {
                mode: DenoiseMode::Filter,
                motion_compensation: mc,
                ..Default::default()
            };
            let out = denoise(&noisy, &cfg, Some(&clean)).unwrap();
            let base = MetricReport::compute(&noisy.frames, &clean.frames, &out.passthrough).unwrap();
            let gain = out.metrics.unwrap().psnr_mean - base.psnr_mean;
            if mc {
                // spurious sub-pixel flows on pure noise add interpolation smoothing
                assert!(gain > expected - 0.5, "gain {gain}");
            } else {
                assert!((gain - expected).abs() < 0.5, "gain {gain}");
            }
            assert_eq!(out.passthrough, [true, true, false, false, false, false, false, true, true]);
        }
    }

    #[test]
    fn missing_checkpoints_are_reported() {
        let (_, noisy) = static_pair();
        let err = denoise(&noisy, &DenoiseConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint { .. }));
        let cfg = DenoiseConfig {
            mode: DenoiseMode::Teacher,
            ..Default::default()
        };
        assert!(matches!(denoise(&noisy, &cfg, None), Err(Error::MissingCheckpoint { .. })));
    }

    #[test]
    fn full_mode_is_deterministic_and_flags_boundaries() {
        let (_, noisy) = static_pair();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let arch = StudentConfig { levels: 2, base_channels: 2 };
        StudentUNet::new(arch.clone(), 1).unwrap().save(&path).unwrap();
        let cfg = DenoiseConfig {
            student_checkpoint: Some(path),
            student_arch: Some(arch),
            ..Default::default()
        };
        let a = denoise(&noisy, &cfg, None).unwrap();
        let b = denoise(&noisy, &cfg, None).unwrap();
        assert_eq!(a.sequence.frames, b.sequence.frames);
        assert_eq!(a.sequence.len(), noisy.len());
        assert_eq!(a.sequence.shape(), noisy.shape());
        assert_eq!(a.passthrough.iter().filter(|&&p| p).count(), 4);
        assert_eq!(a.sequence.frames[0], noisy.frames[0]);
    }
}
