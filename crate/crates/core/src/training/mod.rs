//! Both training steps and the ablation grid.

pub mod ablation;
pub mod losses;
pub mod report;

use std::fmt::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, AblationConfig, AblationData, AblationRow, AblationSettings, AblationTable, Stage, SyntheticSplit};
pub use losses::{loss_hf, loss_pre, loss_recur, loss_step1, loss_total, step2_objective, LossParts, LossSet};
pub use report::RunReport;

use crate::error::{Error, Result};
use crate::flow::{estimator, FlowEstimatorConfig};
use crate::fusion::{FusionConfig, HfOperator};
use crate::io::TrainingWindow;
use crate::nn::{pack, unpack, Adam, AdamConfig, Denoiser, Gradients, Msr2auNet, StudentUNet, Tape, Tensor};
use crate::temporal::{filter_window, RecursiveFilterConfig};
use crate::Frame;

/// Adam settings plus the epoch schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Hard ceiling on `epochs`.
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 30,
            max_epochs: 200,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.epochs > self.max_epochs {
            return Err(Error::Config(format!(
                "epochs must lie in 1..={}, got {}",
                self.max_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> Result<Adam> {
        Adam::new(AdamConfig {
            learning_rate: self.learning_rate,
            ..Default::default()
        })
    }
}

/// Losses of one optimization step (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossReport {
    pub epoch: usize,
    pub step: usize,
    pub l2_step1: f64,
    pub l_pre: f64,
    pub l_recur: f64,
    pub l_hf: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingHistory {
    pub steps: Vec<LossReport>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainingHistory {
    /// `epoch,step,l2_step1,l_pre,l_recur,l_hf,l_total`, one row per step.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("epoch,step,l2_step1,l_pre,l_recur,l_hf,l_total\n");
        for r in &self.steps {
            writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{:e}",
                r.epoch, r.step, r.l2_step1, r.l_pre, r.l_recur, r.l_hf, r.l_total
            )
            .unwrap();
        }
        out
    }

    /// `epoch,train_loss,val_loss`.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            writeln!(out, "{},{:e},{:e}", e.epoch, e.train_loss, e.val_loss).unwrap();
        }
        out
    }
}

fn check_finite(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, step, loss })
    }
}

fn context_batch(windows: &[&TrainingWindow]) -> Result<Tensor> {
    pack(&windows
        .iter()
        .map(|w| w.context.iter().map(|f| f.as_ref()).collect())
        .collect::<Vec<_>>())
}

fn center_batch(windows: &[&TrainingWindow]) -> Result<Tensor> {
    pack(&windows.iter().map(|w| vec![w.center.as_ref()]).collect::<Vec<_>>())
}

fn check_windows(windows: &[TrainingWindow], context: usize) -> Result<()> {
    if let Some(w) = windows.iter().find(|w| w.context.len() != context) {
        return Err(Error::shape(&[context], &[w.context.len()]));
    }
    Ok(())
}

/// Mean-squared error over the whole tensor and its gradient seed.
fn mse_seed(y: &Tensor, t: &Tensor) -> (f64, Tensor) {
    let n = y.len() as f64;
    let d = y - t;
    (d.mapv(|v| v * v).sum() / n, d * (2.0 / n))
}

/// Teacher batch loss, used both for training and validation.
fn teacher_loss(net: &Msr2auNet, batch: &[&TrainingWindow], backprop: bool) -> Result<(f64, Option<Gradients>)> {
    let x = context_batch(batch)?;
    let target = center_batch(batch)?;
    net.check_input(x.dim())?;
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let y = net.forward(&mut tape, xv);
    let (loss, seed) = mse_seed(tape.value(y), &target);
    let grads = backprop.then(|| tape.backward(y, seed, net.store().len()));
    Ok((loss, grads))
}

fn epoch_order(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn mean_over_batches(windows: &[TrainingWindow], batch: usize, mut f: impl FnMut(&[&TrainingWindow]) -> Result<f64>) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let refs: Vec<&TrainingWindow> = windows.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(batch) {
        total += f(chunk)? * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// First step: fit the teacher to predict each noisy centre frame from its
/// noisy neighbours.
///
/// `train` and `val` hold (usually patch-sized) windows whose context length
/// matches the network. Batches are drawn in a seed-determined order and the
/// validation loss is recorded after every epoch.
pub fn train_step1(
    net: &mut Msr2auNet,
    train: &[TrainingWindow],
    val: &[TrainingWindow],
    opt: &OptimizerConfig,
) -> Result<TrainingHistory> {
    opt.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_windows(train, net.config().context_frames)?;
    check_windows(val, net.config().context_frames)?;
    let mut adam = opt.adam()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut history = TrainingHistory::default();
    let mut step = 0;
    for epoch in 0..opt.epochs {
        let order = epoch_order(&mut rng, train.len());
        let mut epoch_loss = 0.0;
        for idx in order.chunks(opt.batch_size) {
            let batch: Vec<&TrainingWindow> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = teacher_loss(net, &batch, true)?;
            check_finite(loss, epoch, step)?;
            adam.step(net.store_mut(), &grads.expect("requested"))?;
            epoch_loss += loss * batch.len() as f64;
            history.steps.push(LossReport {
                epoch,
                step,
                l2_step1: loss,
                l_total: loss,
                ..Default::default()
            });
            step += 1;
        }
        let val_loss = mean_over_batches(val, opt.batch_size, |b| Ok(teacher_loss(net, b, false)?.0))?;
        let train_loss = epoch_loss / train.len() as f64;
        info!("step1 epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        history.epochs.push(EpochSummary {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok(history)
}

/// Second-step settings that are not part of the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Step2Config {
    pub losses: LossSet,
    pub alpha: f64,
    pub motion_compensation: bool,
    pub flow: FlowEstimatorConfig,
    pub filter: RecursiveFilterConfig,
    pub fusion: FusionConfig,
    /// Compute teacher and filter outputs once per window instead of per batch.
    pub precompute: bool,
}

impl Default for Step2Config {
    fn default() -> Self {
        Self {
            losses: LossSet::ALL,
            alpha: 1.0,
            motion_compensation: true,
            flow: FlowEstimatorConfig::default(),
            filter: RecursiveFilterConfig::default(),
            fusion: FusionConfig::default(),
            precompute: false,
        }
    }
}

/// Outcome of [`train_step2`].
#[derive(Debug, Clone)]
pub struct Step2Outcome {
    pub history: TrainingHistory,
    pub teacher_digest_before: String,
    pub teacher_digest_after: String,
}

/// Produces the fixed targets (teacher output, optional filter output) for
/// a list of windows.
struct Targets<'a> {
    teacher: &'a Msr2auNet,
    cfg: &'a Step2Config,
    flow: Option<Box<dyn crate::flow::FlowEstimator + Send + Sync>>,
}

impl Targets<'_> {
    fn compute(&self, batch: &[&TrainingWindow]) -> Result<Vec<(Frame, Option<Frame>)>> {
        let out = self.teacher.predict(&context_batch(batch)?)?;
        batch
            .iter()
            .enumerate()
            .map(|(b, w)| {
                let filtered = if self.cfg.losses.needs_filter() {
                    let est = self.flow.as_deref().map(|e| e as &dyn crate::flow::FlowEstimator);
                    Some(filter_window(w, est, &self.cfg.filter)?)
                } else {
                    None
                };
                Ok((unpack(&out, b, 0), filtered))
            })
            .collect()
    }
}

/// Student forward pass on a batch plus the second-step objective. Returns
/// the batch-mean parts, the total and, if asked, parameter gradients.
fn student_loss(
    student: &StudentUNet,
    batch: &[&TrainingWindow],
    targets: &[(Frame, Option<Frame>)],
    cfg: &Step2Config,
    op: &HfOperator,
    backprop: bool,
) -> Result<(LossParts, f64, Option<Gradients>)> {
    let x = center_batch(batch)?;
    student.check_input(x.dim())?;
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let y = student.forward(&mut tape, xv);
    let out = tape.value(y);
    let nb = batch.len() as f64;
    let mut parts = LossParts::default();
    let mut seed = Tensor::zeros(out.raw_dim());
    for (b, (teacher, filtered)) in targets.iter().enumerate() {
        let s = unpack(out, b, 0);
        let (p, g) = step2_objective(
            &s,
            teacher,
            filtered.as_ref(),
            cfg.losses,
            cfg.alpha,
            cfg.fusion.variance_window,
            op,
        )?;
        parts = parts.add(p.scaled(1.0 / nb));
        seed.slice_mut(ndarray::s![b, 0, .., ..]).assign(&(g / nb));
    }
    let total = loss_total(&parts, cfg.alpha);
    let grads = backprop.then(|| tape.backward(y, seed, student.store().len()));
    Ok((parts, total, grads))
}

/// Second step: train the single-frame student against the frozen teacher,
/// the recursive-filter output and the fusion-weighted HF term.
///
/// The teacher must be frozen; its parameter digest is recorded before and
/// after and the call fails if they differ.
pub fn train_step2(
    student: &mut StudentUNet,
    teacher: &Msr2auNet,
    train: &[TrainingWindow],
    val: &[TrainingWindow],
    cfg: &Step2Config,
    opt: &OptimizerConfig,
) -> Result<Step2Outcome> {
    opt.validate()?;
    cfg.filter.validate()?;
    if !teacher.store().is_frozen() {
        return Err(Error::Config("the teacher must be frozen before the second step".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_windows(train, teacher.config().context_frames)?;
    check_windows(val, teacher.config().context_frames)?;
    let digest_before = teacher.store().digest();

    let (h, w) = train[0].shape();
    let op = HfOperator::new(h, w, &cfg.fusion.highpass)?;
    let flow = if cfg.motion_compensation {
        Some(estimator(&cfg.flow)?)
    } else {
        None
    };
    let targets = Targets { teacher, cfg, flow };
    let cache = |windows: &[TrainingWindow]| -> Result<Vec<(Frame, Option<Frame>)>> {
        let refs: Vec<&TrainingWindow> = windows.iter().collect();
        let mut all = Vec::with_capacity(windows.len());
        for chunk in refs.chunks(opt.batch_size) {
            all.extend(targets.compute(chunk)?);
        }
        Ok(all)
    };
    let (train_cache, val_cache) = if cfg.precompute {
        debug!("precomputing step-2 targets for {} + {} windows", train.len(), val.len());
        (Some(cache(train)?), Some(cache(val)?))
    } else {
        (None, None)
    };

    let mut adam = opt.adam()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut history = TrainingHistory::default();
    let mut step = 0;
    for epoch in 0..opt.epochs {
        let order = epoch_order(&mut rng, train.len());
        let mut epoch_loss = 0.0;
        for idx in order.chunks(opt.batch_size) {
            let batch: Vec<&TrainingWindow> = idx.iter().map(|&i| &train[i]).collect();
            let batch_targets = match &train_cache {
                Some(c) => idx.iter().map(|&i| c[i].clone()).collect(),
                None => targets.compute(&batch)?,
            };
            let (parts, total, grads) = student_loss(student, &batch, &batch_targets, cfg, &op, true)?;
            check_finite(total, epoch, step)?;
            adam.step(student.store_mut(), &grads.expect("requested"))?;
            epoch_loss += total * batch.len() as f64;
            history.steps.push(LossReport {
                epoch,
                step,
                l2_step1: 0.0,
                l_pre: parts.pre,
                l_recur: parts.recur,
                l_hf: parts.hf,
                l_total: total,
            });
            step += 1;
        }
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            let mut sum = 0.0;
            let refs: Vec<&TrainingWindow> = val.iter().collect();
            for (c, chunk) in refs.chunks(opt.batch_size).enumerate() {
                let t = match &val_cache {
                    Some(vc) => vc[c * opt.batch_size..c * opt.batch_size + chunk.len()].to_vec(),
                    None => targets.compute(chunk)?,
                };
                sum += student_loss(student, chunk, &t, cfg, &op, false)?.1 * chunk.len() as f64;
            }
            sum / val.len() as f64
        };
        let train_loss = epoch_loss / train.len() as f64;
        info!("step2 epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        history.epochs.push(EpochSummary {
            epoch,
            train_loss,
            val_loss,
        });
    }

    let digest_after = teacher.store().digest();
    if digest_after != digest_before {
        return Err(Error::Frozen);
    }
    Ok(Step2Outcome {
        history,
        teacher_digest_before: digest_before,
        teacher_digest_after: digest_after,
    })
}
