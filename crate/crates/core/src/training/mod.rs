//! Joint translation and coreference training.

mod optim;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use optim::{inverse_sqrt_lr, Adam};

use crate::config::ModelConfig;
use crate::corpus::WindowRecord;
use crate::model::checkpoint::{save_checkpoint, TrainMeta};
use crate::model::{EncodedWindow, Model};
use crate::nn::{Gradients, Graph, Tensor, Var};
use crate::vocab::Vocab;
use crate::{coref, Error, Result};

const SHUFFLE_SALT: u64 = 0x7368_7566_666c_65;

/// Loss values for a batch. `total` is always `mt + alpha * coref`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct JointLoss {
    pub total: f64,
    pub mt: f64,
    pub coref: f64,
}

impl JointLoss {
    pub fn new(mt: f64, coref: f64, alpha: f64) -> Self {
        JointLoss {
            total: mt + alpha * coref,
            mt,
            coref,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.mt.is_finite() && self.coref.is_finite()
    }
}

/// Which objective to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Mt,
    Coref,
    Joint,
}

struct WindowGraph {
    mt: Var,
    coref: Option<Var>,
    root: Var,
}

fn window_graph(model: &Model, g: &mut Graph, w: &EncodedWindow, objective: Objective) -> Result<WindowGraph> {
    let fwd = model.forward_graph(g, w)?;
    let mt = model.mt_loss_graph(g, &fwd, w);
    let coref = if model.config.variant.has_coref_head() {
        Some(coref::window_loss_graph(model, g, &fwd, w)?)
    } else {
        None
    };
    let root = match (objective, coref) {
        (Objective::Mt, _) | (Objective::Joint, None) => mt,
        (Objective::Coref, Some(c)) => c,
        (Objective::Coref, None) => {
            return Err(Error::InvalidArgument(format!(
                "{} model has no coreference head",
                model.config.variant
            )))
        }
        (Objective::Joint, Some(c)) => {
            let scaled = g.scale(c, model.config.alpha);
            g.add(mt, scaled)
        }
    };
    Ok(WindowGraph { mt, coref, root })
}

fn window_losses(g: &Graph, wg: &WindowGraph) -> (f64, f64) {
    (g.value(wg.mt).item(), wg.coref.map_or(0.0, |c| g.value(c).item()))
}

/// Evaluation-mode losses summed over `batch`.
pub fn joint_loss(model: &Model, batch: &[EncodedWindow]) -> Result<JointLoss> {
    let parts: Vec<(f64, f64)> = batch
        .par_iter()
        .map(|w| {
            let mut g = Graph::new();
            let wg = window_graph(model, &mut g, w, Objective::Mt)?;
            Ok(window_losses(&g, &wg))
        })
        .collect::<Result<_>>()?;
    let (mt, coref) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    Ok(JointLoss::new(mt, coref, model.config.alpha))
}

/// Evaluation-mode value and gradient of one objective summed over `batch`.
pub fn loss_and_gradients(model: &Model, batch: &[EncodedWindow], objective: Objective) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(&model.params);
    let mut total = 0.0;
    for w in batch {
        let mut g = Graph::new();
        let wg = window_graph(model, &mut g, w, objective)?;
        total += g.value(wg.root).item();
        grads.merge(&g.backward(wg.root, &model.params));
    }
    Ok((total, grads))
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Dropout generators for one window of one step; the two streams never
/// share draws.
fn window_rngs(seed: u64, step: u64, index: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let base = mix(mix(seed) ^ mix(step.wrapping_mul(0x1_0000_0001)) ^ index as u64);
    (ChaCha8Rng::seed_from_u64(mix(base ^ 1)), ChaCha8Rng::seed_from_u64(mix(base ^ 2)))
}

/// Training-mode losses and joint gradient, computed per window in parallel
/// and reduced in window order.
fn training_step_gradients(model: &Model, batch: &[&EncodedWindow], step: u64) -> Result<(JointLoss, Gradients)> {
    let seed = model.config.seed;
    let parts: Vec<(f64, f64, Gradients)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let (rt, rc) = window_rngs(seed, step, i);
            let mut g = Graph::training(rt, rc);
            let wg = window_graph(model, &mut g, w, Objective::Joint)?;
            let (mt, c) = window_losses(&g, &wg);
            Ok((mt, c, g.backward(wg.root, &model.params)))
        })
        .collect::<Result<_>>()?;
    let mut grads = Gradients::zeros_like(&model.params);
    let (mut mt, mut c) = (0.0, 0.0);
    for (m, cl, g) in &parts {
        mt += m;
        c += cl;
        grads.merge(g);
    }
    Ok((JointLoss::new(mt, c, model.config.alpha), grads))
}

/// Batches of window indices: windows sorted by source length (stable), cut
/// into chunks of `batch_size`.
pub fn length_buckets(windows: &[EncodedWindow], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by_key(|&i| windows[i].src.len());
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub mt_loss: f64,
    pub coref_loss: f64,
    pub total_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: JointLoss,
    pub valid: Option<JointLoss>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StopReason {
    EpochCap,
    Plateau,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: Adam,
    pub epoch: usize,
    pub best_valid: Option<JointLoss>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl TrainState {
    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    fn meta(&self) -> TrainMeta {
        TrainMeta {
            step: self.optimizer.step,
            epoch: self.epoch,
            best_valid_mt: self.best_valid.map(|l| l.mt),
            best_valid_coref: self.best_valid.map(|l| l.coref),
        }
    }
}

/// Where training artifacts go. With no directory nothing is written.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
}

struct Log {
    file: Option<BufWriter<File>>,
}

impl Log {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let file = match dir {
            Some(d) => {
                let p = d.join("train.log");
                Some(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
            }
            None => None,
        };
        Ok(Log { file })
    }

    fn record(&mut self, value: &impl Serialize) -> Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(value)?;
            writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| Error::io("train.log", e))?;
        }
        Ok(())
    }
}

/// Builds a vocabulary from both sides of every record.
pub fn build_vocab(records: &[WindowRecord]) -> Vocab {
    Vocab::build(records.iter().flat_map(|r| [r.src.as_slice(), r.tgt.as_slice()]))
}

/// Initialises a model with a vocabulary covering `train` and `valid` and
/// trains it.
pub fn train(
    config: &ModelConfig,
    train: &[WindowRecord],
    valid: &[WindowRecord],
    opts: &TrainOptions,
) -> Result<TrainState> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let all: Vec<WindowRecord> = train.iter().chain(valid).cloned().collect();
    let model = Model::new(config.clone(), build_vocab(&all))?;
    train_model(model, train, valid, opts)
}

/// Trains an existing model. Stops after `epochs` epochs or once neither
/// validation loss has improved for `patience` consecutive epochs.
pub fn train_model(
    model: Model,
    train: &[WindowRecord],
    valid: &[WindowRecord],
    opts: &TrainOptions,
) -> Result<TrainState> {
    let cfg = model.config.clone();
    let train_set: Vec<EncodedWindow> = train.iter().map(|r| model.encode_record(r)).collect::<Result<_>>()?;
    let valid_set: Vec<EncodedWindow> = valid.iter().map(|r| model.encode_record(r)).collect::<Result<_>>()?;
    if let Some(d) = &opts.out_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut log = Log::open(opts.out_dir.as_deref())?;
    let optimizer = Adam::new(&model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut state = TrainState {
        model,
        optimizer,
        epoch: 0,
        best_valid: None,
        steps: Vec::new(),
        epochs: Vec::new(),
        stop: StopReason::EpochCap,
    };
    let buckets = length_buckets(&train_set, cfg.batch_size);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let (mut best_mt, mut best_coref) = (f64::INFINITY, f64::INFINITY);
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..buckets.len()).collect();
        order.shuffle(&mut shuffle);
        let mut epoch_loss = JointLoss::default();
        for &b in &order {
            let batch: Vec<&EncodedWindow> = buckets[b].iter().map(|&i| &train_set[i]).collect();
            let step = state.optimizer.step + 1;
            let (loss, grads) = training_step_gradients(&state.model, &batch, step)?;
            if !loss.is_finite() || !grads.is_finite() {
                let snapshot = match &opts.out_dir {
                    Some(d) => {
                        let p = d.join("nan-snapshot.ckpt");
                        save_checkpoint(&p, &state.model, Some(&state.meta()), None)?;
                        Some(p)
                    }
                    None => None,
                };
                return Err(Error::NonFiniteLoss {
                    step: step as usize,
                    mt_loss: loss.mt,
                    coref_loss: loss.coref,
                    snapshot,
                });
            }
            let lr = inverse_sqrt_lr(cfg.lr, cfg.warmup_steps, step);
            state.optimizer.update(&mut state.model.params, &grads, lr);
            let rec = StepRecord {
                step,
                epoch,
                mt_loss: loss.mt,
                coref_loss: loss.coref,
                total_loss: loss.total,
                lr,
            };
            log.record(&rec)?;
            state.steps.push(rec);
            epoch_loss = JointLoss::new(epoch_loss.mt + loss.mt, epoch_loss.coref + loss.coref, cfg.alpha);
        }
        state.epoch = epoch;
        let valid_loss = if valid_set.is_empty() {
            None
        } else {
            Some(joint_loss(&state.model, &valid_set)?)
        };
        let rec = EpochRecord {
            epoch,
            train: epoch_loss,
            valid: valid_loss,
        };
        log.record(&rec)?;
        state.epochs.push(rec);

        let improved_best = match (valid_loss, state.best_valid) {
            (Some(v), Some(b)) => v.total < b.total,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved_best {
            state.best_valid = valid_loss;
        }
        if let Some(d) = &opts.out_dir {
            let moments = (state.optimizer.m.as_slice(), state.optimizer.v.as_slice());
            save_checkpoint(&d.join("last.ckpt"), &state.model, Some(&state.meta()), Some(moments))?;
            if improved_best || valid_set.is_empty() {
                save_checkpoint(&d.join("best.ckpt"), &state.model, Some(&state.meta()), None)?;
            }
        }
        if let Some(v) = valid_loss {
            let better_mt = v.mt < best_mt;
            let better_coref = v.coref < best_coref;
            best_mt = best_mt.min(v.mt);
            best_coref = best_coref.min(v.coref);
            stale = if better_mt || better_coref { 0 } else { stale + 1 };
            if cfg.patience > 0 && stale >= cfg.patience {
                state.stop = StopReason::Plateau;
                break;
            }
        }
    }
    Ok(state)
}

/// Mean teacher-forced token accuracy over `windows`.
pub fn token_accuracy(model: &Model, windows: &[EncodedWindow]) -> Result<f64> {
    let parts: Vec<(usize, usize)> = windows
        .par_iter()
        .map(|w| model.teacher_forced_hits(w))
        .collect::<Result<_>>()?;
    let (hit, total) = parts.iter().fold((0, 0), |a, p| (a.0 + p.0, a.1 + p.1));
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// All parameter tensors flattened, for comparing runs.
pub fn flat_params(model: &Model) -> Vec<f64> {
    model.params.iter().flat_map(|(_, t): (&str, &Tensor)| t.data().to_vec()).collect()
}
