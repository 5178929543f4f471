//! The component ablation grid.
//!
//! | id  | frames | multi-scale | recurrent | MC | pre | recur | hf |
//! |-----|--------|-------------|-----------|----|-----|-------|----|
//! | 0   | raw low-dose input, no model                           |
//! | 1   | 5 | full     | yes |     |     |     |     |
//! | 1-1 | 3 | full     | yes |     |     |     |     |
//! | 1-2 | 7 | full     | yes |     |     |     |     |
//! | 1-3 | 5 | without  | yes |     |     |     |     |
//! | 1-4 | 5 | only 3x3 | yes |     |     |     |     |
//! | 1-5 | 5 | full     | no  |     |     |     |     |
//! | 2   | 5 | full     | yes |     | yes |     |     |
//! | 3   | 5 | full     | yes | yes | yes | yes |     |
//! | 4   | 5 | full     | yes | yes | yes | yes | yes |
//! | 4-1 | 5 | full     | yes | no  | yes | yes | yes |
//!
//! Rows 2 to 4-1 train a student against the teacher of row 1.

use std::fmt::Write;

use log::info;
use serde::{Deserialize, Serialize};

use super::losses::LossSet;
use super::{train_step1, train_step2, OptimizerConfig, Step2Config, TrainingHistory};
use crate::error::{Error, Result};
use crate::eval::{psnr, ssim};
use crate::flow::FlowEstimatorConfig;
use crate::fusion::FusionConfig;
use crate::io::{make_windows_with_radius, sample_patches, split_train_val, TrainingWindow};
use crate::nn::{pack, unpack, Denoiser, MultiScaleMode, Msr2auConfig, Msr2auNet, StudentConfig, StudentUNet};
use crate::phantom::{apply_dose_noise, generate_clean_sequence, noise_seed, DoseLevel, FrameSequence, PhantomSpec};
use crate::temporal::RecursiveFilterConfig;
use crate::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Baseline,
    Step1,
    Step2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub id: String,
    /// Window length including the centre frame.
    pub num_input_frames: usize,
    pub multiscale: MultiScaleMode,
    pub recurrent_units: bool,
    pub motion_compensation: bool,
    pub losses: LossSet,
}

pub const ALL_IDS: [&str; 11] = ["0", "1", "1-1", "1-2", "1-3", "1-4", "1-5", "2", "3", "4", "4-1"];

impl AblationConfig {
    pub fn from_id(id: &str) -> Result<Self> {
        let base = |frames, multiscale, recurrent_units| AblationConfig {
            id: id.to_string(),
            num_input_frames: frames,
            multiscale,
            recurrent_units,
            motion_compensation: false,
            losses: LossSet::default(),
        };
        let full = MultiScaleMode::Full;
        let step2 = |mc, losses| AblationConfig {
            motion_compensation: mc,
            losses,
            ..base(5, full, true)
        };
        let pre = LossSet { pre: true, ..Default::default() };
        let pre_recur = LossSet { pre: true, recur: true, hf: false };
        Ok(match id {
            "0" | "1" => base(5, full, true),
            "1-1" => base(3, full, true),
            "1-2" => base(7, full, true),
            "1-3" => base(5, MultiScaleMode::Without, true),
            "1-4" => base(5, MultiScaleMode::Only3x3, true),
            "1-5" => base(5, full, false),
            "2" => step2(false, pre),
            "3" => step2(true, pre_recur),
            "4" => step2(true, LossSet::ALL),
            "4-1" => step2(false, LossSet::ALL),
            other => return Err(Error::Config(format!("unknown ablation configuration `{other}`"))),
        })
    }

    /// Parses a comma-separated id list such as `0,1,2,3,4,4-1`.
    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        list.split(',').map(|s| Self::from_id(s.trim())).collect()
    }

    pub fn all() -> Vec<Self> {
        ALL_IDS.iter().map(|id| Self::from_id(id).expect("known id")).collect()
    }

    pub fn stage(&self) -> Stage {
        match self.id.as_str() {
            "0" => Stage::Baseline,
            id if id.starts_with('1') => Stage::Step1,
            _ => Stage::Step2,
        }
    }

    /// Temporal radius of the windows this configuration consumes.
    pub fn radius(&self) -> usize {
        match self.stage() {
            Stage::Baseline => 0,
            _ => self.num_input_frames / 2,
        }
    }

    fn teacher_arch(&self, template: &Msr2auConfig) -> Msr2auConfig {
        Msr2auConfig {
            context_frames: self.num_input_frames - 1,
            multiscale: self.multiscale,
            recurrent: self.recurrent_units,
            ..template.clone()
        }
    }
}

/// Sizes, schedules and component settings shared by every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    /// Width/depth template; frames, multi-scale mode and recurrence come from each row.
    pub teacher: Msr2auConfig,
    pub student: StudentConfig,
    pub step1: OptimizerConfig,
    pub step2: OptimizerConfig,
    pub patch_size: usize,
    /// Patches sampled from the training windows (before the validation split).
    pub patches: usize,
    pub val_fraction: f64,
    pub alpha: f64,
    pub flow: FlowEstimatorConfig,
    pub filter: RecursiveFilterConfig,
    pub fusion: FusionConfig,
    pub precompute: bool,
    /// Seeds patch sampling, the split and network initialization.
    pub seed: u64,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            teacher: Msr2auConfig::default(),
            student: StudentConfig::default(),
            step1: OptimizerConfig::default(),
            step2: OptimizerConfig::default(),
            patch_size: 32,
            patches: 2000,
            val_fraction: 0.1,
            alpha: 1.0,
            flow: FlowEstimatorConfig::default(),
            filter: RecursiveFilterConfig::default(),
            fusion: FusionConfig::default(),
            precompute: true,
            seed: 0,
        }
    }
}

/// Noisy training sequences and paired (noisy, clean) test sequences.
#[derive(Debug, Clone, Default)]
pub struct AblationData {
    pub train: Vec<FrameSequence>,
    pub test: Vec<(FrameSequence, FrameSequence)>,
}

/// Recipe for a synthetic train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSplit {
    pub phantom: PhantomSpec,
    pub dose: DoseLevel,
    pub train_sequences: usize,
    pub test_sequences: usize,
    /// Sequence `k` uses layout seed `seed + k`; test sequences follow the
    /// training ones.
    pub seed: u64,
}

impl Default for SyntheticSplit {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec {
                height: 64,
                width: 64,
                lesion_radii: vec![5.0, 8.0, 10.0],
                needle_length: 20.0,
                motion_amplitude: 4.0,
                ..Default::default()
            },
            dose: DoseLevel::low(),
            train_sequences: 180,
            test_sequences: 20,
            seed: 0,
        }
    }
}

impl SyntheticSplit {
    pub fn generate(&self) -> Result<AblationData> {
        let mut data = AblationData::default();
        for k in 0..(self.train_sequences + self.test_sequences) as u64 {
            let layout = self.seed.wrapping_add(k);
            let clean = generate_clean_sequence(&self.phantom, layout)?;
            let noisy = apply_dose_noise(&clean, self.dose, noise_seed(layout))?;
            if (k as usize) < self.train_sequences {
                data.train.push(noisy);
            } else {
                data.test.push((noisy, clean));
            }
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub psnr: f64,
    pub ssim: f64,
    /// Number of test frames scored.
    pub frames: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Training histories keyed by a label such as `teacher 1` or `student 4`.
    pub histories: Vec<(String, TrainingHistory)>,
    /// Teacher digest before and after each second-step run.
    pub teacher_digests: Vec<(String, String, String)>,
}

fn mark(applicable: bool, on: bool) -> &'static str {
    match (applicable, on) {
        (false, _) => "",
        (true, true) => "x",
        (true, false) => "-",
    }
}

impl AblationTable {
    /// One row per configuration with the columns
    /// `config,frames_3,frames_5,frames_7,multiscale,recurrent,mc,l_pre,l_recur,l_hf,psnr_db,ssim`.
    /// `x` marks an enabled component, `-` an ablated one, and blanks mean
    /// not applicable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,frames_3,frames_5,frames_7,multiscale,recurrent,mc,l_pre,l_recur,l_hf,psnr_db,ssim\n");
        for row in &self.rows {
            let c = &row.config;
            let model = c.stage() != Stage::Baseline;
            let step2 = c.stage() == Stage::Step2;
            let frames = |n| if model && c.num_input_frames == n { "x" } else { "" };
            let ms = match (model, c.multiscale) {
                (false, _) => "",
                (true, MultiScaleMode::Full) => "x",
                (true, MultiScaleMode::Only3x3) => "only-3x3",
                (true, MultiScaleMode::Without) => "without",
            };
            let loss = |on: bool| if step2 && on { "x" } else { "" };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{:.4},{:.4}",
                c.id,
                frames(3),
                frames(5),
                frames(7),
                ms,
                mark(model, c.recurrent_units),
                mark(step2 && c.losses.recur, c.motion_compensation),
                loss(c.losses.pre),
                loss(c.losses.recur),
                loss(c.losses.hf),
                row.psnr,
                row.ssim
            )
            .unwrap();
        }
        out
    }

    pub fn row(&self, id: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config.id == id)
    }
}

/// Training patches for one temporal radius, split into train and validation.
fn patch_sets(data: &AblationData, radius: usize, s: &AblationSettings) -> Result<(Vec<TrainingWindow>, Vec<TrainingWindow>)> {
    let mut windows = Vec::new();
    for seq in &data.train {
        windows.extend(make_windows_with_radius(seq, radius)?);
    }
    let patches = sample_patches(&windows, s.patches, s.patch_size, s.seed)?;
    let (train, val) = split_train_val(patches, s.val_fraction, s.seed ^ 0x5eed)?;
    Ok((
        train.into_iter().map(|p| p.window).collect(),
        val.into_iter().map(|p| p.window).collect(),
    ))
}

/// Mean PSNR / SSIM of `predict(test sequence, frame index)` over the shared
/// evaluation frames.
fn score(
    data: &AblationData,
    margin: usize,
    mut predict: impl FnMut(&FrameSequence, usize) -> Result<Frame>,
) -> Result<(f64, f64, usize)> {
    let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
    for (noisy, clean) in &data.test {
        if noisy.len() <= 2 * margin {
            return Err(Error::TooShort {
                required: 2 * margin + 1,
                found: noisy.len(),
            });
        }
        for k in margin..noisy.len() - margin {
            let out = predict(noisy, k)?.mapv(|v| v.clamp(0.0, 1.0));
            p += psnr(&out, &clean.frames[k], 1.0)?;
            s += ssim(&out, &clean.frames[k])?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok((p / n as f64, s / n as f64, n))
}

fn teacher_prediction(net: &Msr2auNet, seq: &FrameSequence, k: usize) -> Result<Frame> {
    let r = net.config().context_frames / 2;
    let context: Vec<&Frame> = (k - r..k).chain(k + 1..=k + r).map(|i| &seq.frames[i]).collect();
    Ok(unpack(&net.predict(&pack(&[context])?)?, 0, 0))
}

/// Trains and scores every configuration of `grid` on the held-out test
/// sequences. Every row is scored on the same frames: those at least
/// `max(2, largest radius in the grid)` frames away from either end.
pub fn run_ablation(grid: &[AblationConfig], data: &AblationData, s: &AblationSettings) -> Result<AblationTable> {
    if grid.is_empty() || data.train.is_empty() || data.test.is_empty() {
        return Err(Error::EmptyInput);
    }
    let margin = grid.iter().map(AblationConfig::radius).max().unwrap_or(0).max(2);
    let mut table = AblationTable::default();
    let mut teachers: Vec<(Msr2auConfig, Msr2auNet)> = Vec::new();
    let mut patch_cache: Vec<(usize, Vec<TrainingWindow>, Vec<TrainingWindow>)> = Vec::new();

    let mut patches_for = |radius: usize| -> Result<(Vec<TrainingWindow>, Vec<TrainingWindow>)> {
        if let Some((_, t, v)) = patch_cache.iter().find(|(r, _, _)| *r == radius) {
            return Ok((t.clone(), v.clone()));
        }
        let (t, v) = patch_sets(data, radius, s)?;
        patch_cache.push((radius, t.clone(), v.clone()));
        Ok((t, v))
    };

    let mut teacher_for = |cfg: &AblationConfig,
                           table: &mut AblationTable,
                           patches: &mut dyn FnMut(usize) -> Result<(Vec<TrainingWindow>, Vec<TrainingWindow>)>|
     -> Result<Msr2auNet> {
        let arch = cfg.teacher_arch(&s.teacher);
        if let Some((_, net)) = teachers.iter().find(|(a, _)| *a == arch) {
            return Ok(net.clone());
        }
        let (train, val) = patches(cfg.radius())?;
        let mut net = Msr2auNet::new(arch.clone(), s.seed)?;
        info!("training teacher for configuration {}", cfg.id);
        let history = train_step1(&mut net, &train, &val, &s.step1)?;
        table.histories.push((format!("teacher {}", cfg.id), history));
        net.store_mut().freeze();
        teachers.push((arch, net.clone()));
        Ok(net)
    };

    for cfg in grid {
        let (psnr_mean, ssim_mean, frames) = match cfg.stage() {
            Stage::Baseline => score(data, margin, |seq, k| Ok(seq.frames[k].clone()))?,
            Stage::Step1 => {
                let net = teacher_for(cfg, &mut table, &mut patches_for)?;
                score(data, margin, |seq, k| teacher_prediction(&net, seq, k))?
            }
            Stage::Step2 => {
                let base = AblationConfig::from_id("1")?;
                let teacher = teacher_for(&base, &mut table, &mut patches_for)?;
                let (train, val) = patches_for(cfg.radius())?;
                let mut student = StudentUNet::new(s.student.clone(), s.seed)?;
                let step2 = Step2Config {
                    losses: cfg.losses,
                    alpha: s.alpha,
                    motion_compensation: cfg.motion_compensation,
                    flow: s.flow.clone(),
                    filter: s.filter,
                    fusion: s.fusion,
                    precompute: s.precompute,
                };
                info!("training student for configuration {}", cfg.id);
                let outcome = train_step2(&mut student, &teacher, &train, &val, &step2, &s.step2)?;
                table.histories.push((format!("student {}", cfg.id), outcome.history));
                table
                    .teacher_digests
                    .push((cfg.id.clone(), outcome.teacher_digest_before, outcome.teacher_digest_after));
                score(data, margin, |seq, k| {
                    Ok(unpack(&student.predict(&pack(&[vec![&seq.frames[k]]])?)?, 0, 0))
                })?
            }
        };
        info!("configuration {}: psnr {psnr_mean:.4} ssim {ssim_mean:.4}", cfg.id);
        table.rows.push(AblationRow {
            config: cfg.clone(),
            psnr: psnr_mean,
            ssim: ssim_mean,
            frames,
        });
    }
    Ok(table)
}
