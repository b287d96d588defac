//! Loss, optimizer and the three-stage training protocol.
//!
//! Stage 1 pretrains each extractor alone through a temporary softmax head.
//! Stage 2 freezes the extractors and fits the evidence layers and the
//! reliability coefficients. Stage 3 fine-tunes everything. Stages 2 and 3
//! stop early on validation fused Dice and keep the best model seen.

pub mod adam;
pub mod loss;
pub mod model;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledExample;
use crate::enn::kmeans_centers;
use crate::error::{Error, Result};
use crate::features::{DenseLayer, FeatureExtractor};
use crate::metrics::{argmax_labels, confusion, Confusion, Selector};

const KMEANS_ITERATIONS: usize = 25;

pub use adam::{adam_step, OptimizerState};
pub use loss::{loss_fused, loss_source, total_loss};
pub use model::{LossParts, Model, ModelGradients, ModelShape, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageFlags {
    pub pretrain: bool,
    pub evidential: bool,
    pub finetune: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self { pretrain: true, evidential: true, finetune: true }
    }
}

/// How evidence-layer prototypes are placed before stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeInit {
    /// Keep the standard-normal draws from initialization.
    #[default]
    Normal,
    /// Replace them by k-means centers of the training-set features.
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Non-improving epochs tolerated before stopping a stage.
    pub patience: usize,
    pub pretrain_epochs: usize,
    /// Cap on stage 2 epochs.
    pub max_epochs: usize,
    /// Cap on stage 3 epochs.
    pub finetune_epochs: usize,
    pub stages: StageFlags,
    pub prototype_init: PrototypeInit,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 4,
            patience: 10,
            pretrain_epochs: 50,
            max_epochs: 100,
            finetune_epochs: 20,
            stages: StageFlags::default(),
            prototype_init: PrototypeInit::Normal,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Every violated constraint, prefixed with `prefix`.
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("{prefix}learning_rate must be a positive finite number, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            out.push(format!("{prefix}batch_size must be at least 1"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub train_loss: f64,
    pub val_loss: f64,
    /// `None` during pretraining.
    pub val_dice_fused: Option<f64>,
    pub val_dice_modalities: Vec<f64>,
    /// Best validation fused Dice so far, once any evidential epoch ran.
    pub best_val_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub modalities: Vec<String>,
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,stage,train_loss,val_loss,val_dice_fused");
        for m in &self.modalities {
            let _ = write!(out, ",val_dice_{m}");
        }
        out.push('\n');
        for r in &self.records {
            let fused = r.val_dice_fused.map_or("nan".to_string(), |d| format!("{d:.6}"));
            let _ = write!(out, "{},{},{:.6},{:.6},{fused}", r.epoch, r.stage, r.train_loss, r.val_loss);
            for d in &r.val_dice_modalities {
                let _ = write!(out, ",{d:.6}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestRecord {
    pub epoch: usize,
    pub stage: u8,
    pub val_dice_fused: f64,
    /// Breaks ties between epochs with equal Dice.
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome<E> {
    /// Best validation model, or the last model if no evidential stage ran.
    pub model: Model<E>,
    pub log: TrainingLog,
    pub best: Option<BestRecord>,
    /// Optimizer state at the end of the last stage.
    pub optimizer: Option<OptimizerState>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub divergence: Option<Error>,
}

/// Validation summary of a model over a set of examples. Dice values are
/// pooled over the whole split (confusion counts summed across examples)
/// and averaged over the foreground classes; the loss is the mean per
/// example.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationScores {
    pub loss: f64,
    pub dice_fused: f64,
    pub dice_modalities: Vec<f64>,
}

/// Confusion counts for classes `1..k`.
fn foreground_confusion(pred: &[u16], truth: &[u16], k: usize) -> Vec<Confusion> {
    (1..k).map(|c| confusion(pred, truth, &Selector::Class(c as u16))).collect()
}

fn add_confusion(acc: &mut [Confusion], other: &[Confusion]) {
    for (a, b) in acc.iter_mut().zip(other) {
        a.tp += b.tp;
        a.fp += b.fp;
        a.fn_ += b.fn_;
    }
}

fn pooled_dice(c: &[Confusion]) -> f64 {
    c.iter().map(Confusion::dice).sum::<f64>() / c.len() as f64
}

pub fn validate<E: FeatureExtractor>(model: &Model<E>, examples: &[LabeledExample]) -> Result<ValidationScores> {
    let k = model.n_classes();
    let t_count = model.n_modalities();
    type PerExample = (f64, Vec<Confusion>, Vec<Vec<Confusion>>);
    let per: Vec<Result<PerExample>> = examples
        .par_iter()
        .map(|ex| {
            let out = model.forward(ex)?;
            let g = ex.one_hot(k);
            let probs = out.fused_probabilities();
            let mut loss = loss::dice_term(&probs, &g)?.0;
            let mut conf_mod = Vec::new();
            for m in &out.modalities {
                loss += loss::dice_term(&m.singletons, &g)?.0;
                conf_mod.push(foreground_confusion(&argmax_labels(&m.probabilities(k), k), &ex.labels, k));
            }
            Ok((loss, foreground_confusion(&argmax_labels(&probs, k), &ex.labels, k), conf_mod))
        })
        .collect();
    let mut loss = 0.0;
    let mut fused = vec![Confusion::default(); k - 1];
    let mut mods = vec![vec![Confusion::default(); k - 1]; t_count];
    for r in per {
        let (l, f, m) = r?;
        loss += l;
        add_confusion(&mut fused, &f);
        mods.iter_mut().zip(&m).for_each(|(a, b)| add_confusion(a, b));
    }
    Ok(ValidationScores {
        loss: loss / examples.len() as f64,
        dice_fused: pooled_dice(&fused),
        dice_modalities: mods.iter().map(|c| pooled_dice(c)).collect(),
    })
}

/// Temporary per-voxel softmax classifier on top of one extractor.
#[derive(Debug, Clone)]
struct PretrainHead {
    layer: DenseLayer,
}

impl PretrainHead {
    fn new(features: usize, k: usize) -> Self {
        Self { layer: DenseLayer::new(features, k, vec![0.0; features * k], vec![0.0; k]).expect("shapes agree") }
    }

    fn logits(&self, f: &crate::features::FeatureMap) -> Vec<f64> {
        let k = self.layer.outputs;
        let mut out = vec![0.0; f.voxels() * k];
        for v in 0..f.voxels() {
            let x = f.feature(v);
            for c in 0..k {
                let w = &self.layer.weights[c * self.layer.inputs..(c + 1) * self.layer.inputs];
                out[v * k + c] = self.layer.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }
}

/// Pretraining loss and gradients for one example: per modality, extractor
/// parameter gradients followed by head weight and bias gradients.
fn pretrain_example<E: FeatureExtractor>(
    extractors: &[E],
    heads: &[PretrainHead],
    ex: &LabeledExample,
    k: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut loss = 0.0;
    let mut grads = Vec::new();
    for ((e, head), img) in extractors.iter().zip(heads).zip(&ex.images) {
        let f = e.extract(img)?;
        let logits = head.logits(&f);
        let (l, gz) = loss::softmax_cross_entropy(&logits, &ex.labels, k);
        loss += l;
        let h = head.layer.inputs;
        let mut gw = vec![0.0; k * h];
        let mut gb = vec![0.0; k];
        let mut upstream = crate::features::FeatureMap::zeros(f.width, f.height, h);
        for v in 0..f.voxels() {
            let x = f.feature(v);
            let gzv = &gz[v * k..(v + 1) * k];
            let up = upstream.feature_mut(v);
            for c in 0..k {
                gb[c] += gzv[c];
                for j in 0..h {
                    gw[c * h + j] += gzv[c] * x[j];
                    up[j] += gzv[c] * head.layer.weights[c * h + j];
                }
            }
        }
        let eg = e.extract_backward(img, &upstream, false)?;
        grads.extend(eg.params);
        grads.push(gw);
        grads.push(gb);
    }
    Ok((loss, grads))
}

fn pretrain_scores<E: FeatureExtractor>(
    extractors: &[E],
    heads: &[PretrainHead],
    examples: &[LabeledExample],
    k: usize,
) -> Result<(f64, Vec<f64>)> {
    let per: Vec<Result<(f64, Vec<Vec<Confusion>>)>> = examples
        .par_iter()
        .map(|ex| {
            let mut loss = 0.0;
            let mut conf = Vec::new();
            for ((e, head), img) in extractors.iter().zip(heads).zip(&ex.images) {
                let logits = head.logits(&e.extract(img)?);
                loss += loss::softmax_cross_entropy(&logits, &ex.labels, k).0;
                conf.push(foreground_confusion(&argmax_labels(&logits, k), &ex.labels, k));
            }
            Ok((loss, conf))
        })
        .collect();
    let mut loss = 0.0;
    let mut mods = vec![vec![Confusion::default(); k - 1]; extractors.len()];
    for r in per {
        let (l, c) = r?;
        loss += l;
        mods.iter_mut().zip(&c).for_each(|(a, b)| add_confusion(a, b));
    }
    Ok((loss / examples.len() as f64, mods.iter().map(|c| pooled_dice(c)).collect()))
}

fn sum_in_order(parts: Vec<Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut it = parts.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for p in it {
        for (a, b) in acc.iter_mut().zip(p) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
    acc
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what: format!("training loss {loss}"), step: epoch as u64 })
    }
}

struct Trainer<'a, E> {
    model: Model<E>,
    train: &'a [LabeledExample],
    val: &'a [LabeledExample],
    config: &'a TrainingConfig,
    rng: ChaCha8Rng,
    log: TrainingLog,
    epoch: usize,
    best: Option<(BestRecord, Model<E>)>,
    optimizer: Option<OptimizerState>,
}

impl<E: FeatureExtractor> Trainer<'_, E> {
    fn batches(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect()
    }

    fn pretrain(&mut self) -> Result<()> {
        let k = self.model.n_classes();
        let mut heads: Vec<PretrainHead> =
            self.model.extractors.iter().map(|e| PretrainHead::new(e.feature_dim(), k)).collect();
        let shapes: Vec<usize> = self
            .model
            .extractors
            .iter()
            .zip(&heads)
            .flat_map(|(e, h)| {
                let mut s: Vec<usize> = e.params().iter().map(|p| p.len()).collect();
                s.extend([h.layer.weights.len(), h.layer.bias.len()]);
                s
            })
            .collect();
        let mut state = OptimizerState::new(&shapes);
        for _ in 0..self.config.pretrain_epochs {
            self.epoch += 1;
            let mut train_loss = 0.0;
            for batch in self.batches() {
                let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = batch
                    .par_iter()
                    .map(|&i| pretrain_example(&self.model.extractors, &heads, &self.train[i], k))
                    .collect();
                let mut parts = Vec::with_capacity(results.len());
                for r in results {
                    let (l, g) = r?;
                    train_loss += l;
                    parts.push(g);
                }
                let mut grads = sum_in_order(parts);
                let scale = 1.0 / batch.len() as f64;
                grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= scale));
                let mut params: Vec<&mut [f64]> = Vec::new();
                for (e, h) in self.model.extractors.iter_mut().zip(heads.iter_mut()) {
                    params.extend(e.params_mut());
                    params.push(&mut h.layer.weights);
                    params.push(&mut h.layer.bias);
                }
                let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
                adam_step(&mut params, &grad_refs, &mut state, self.config.learning_rate)?;
            }
            train_loss /= self.train.len() as f64;
            check_finite(train_loss, self.epoch)?;
            let (val_loss, dice) = pretrain_scores(&self.model.extractors, &heads, self.val, k)?;
            self.log.records.push(EpochRecord {
                epoch: self.epoch,
                stage: 1,
                train_loss,
                val_loss,
                val_dice_fused: None,
                val_dice_modalities: dice,
                best_val_dice: None,
            });
        }
        Ok(())
    }

    fn evidential_stage(&mut self, stage: u8, sel: Trainable, max_epochs: usize) -> Result<()> {
        let shapes: Vec<usize> = self.model.groups(sel).iter().map(|g| g.len()).collect();
        let mut state = OptimizerState::new(&shapes);
        let mut stale = 0usize;
        for _ in 0..max_epochs {
            self.epoch += 1;
            let mut train_loss = 0.0;
            for batch in self.batches() {
                let model = &self.model;
                let results: Vec<Result<(LossParts, ModelGradients)>> =
                    batch.par_iter().map(|&i| model.loss_and_gradients(&self.train[i], sel)).collect();
                let mut grads = ModelGradients::zeros(&self.model);
                for r in results {
                    let (l, g) = r?;
                    train_loss += l.total();
                    grads.accumulate(&g);
                }
                grads.scale(1.0 / batch.len() as f64);
                let grad_refs = grads.groups(sel);
                let mut params = self.model.groups_mut(sel);
                adam_step(&mut params, &grad_refs, &mut state, self.config.learning_rate)?;
            }
            train_loss /= self.train.len() as f64;
            check_finite(train_loss, self.epoch)?;
            let scores = validate(&self.model, self.val)?;
            let improved = self.best.as_ref().is_none_or(|(b, _)| {
                scores.dice_fused > b.val_dice_fused
                    || (scores.dice_fused == b.val_dice_fused && scores.loss < b.val_loss)
            });
            if improved {
                let record =
                    BestRecord { epoch: self.epoch, stage, val_dice_fused: scores.dice_fused, val_loss: scores.loss };
                self.best = Some((record, self.model.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
            self.log.records.push(EpochRecord {
                epoch: self.epoch,
                stage,
                train_loss,
                val_loss: scores.loss,
                val_dice_fused: Some(scores.dice_fused),
                val_dice_modalities: scores.dice_modalities,
                best_val_dice: self.best.as_ref().map(|(b, _)| b.val_dice_fused),
            });
            self.optimizer = Some(state.clone());
            if !improved && stale >= self.config.patience {
                break;
            }
        }
        if let Some((_, best)) = &self.best {
            self.model = best.clone();
        }
        Ok(())
    }

    fn warm_start_prototypes(&mut self) -> Result<()> {
        let model = &mut self.model;
        for t in 0..model.extractors.len() {
            let mut points = Vec::new();
            for ex in self.train {
                points.extend(model.extractors[t].extract(&ex.images[t])?.data);
            }
            let enn = &mut model.enns[t];
            let seed = self.config.seed.wrapping_add(t as u64);
            enn.prototypes = kmeans_centers(&points, enn.input_dim(), enn.n_prototypes(), seed, KMEANS_ITERATIONS)?;
        }
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        let stages = self.config.stages;
        if stages.pretrain {
            self.pretrain()?;
        }
        if self.config.prototype_init == PrototypeInit::Kmeans {
            self.warm_start_prototypes()?;
        }
        if stages.evidential {
            self.evidential_stage(2, Trainable::FROZEN_FEATURES, self.config.max_epochs)?;
        }
        if stages.finetune {
            self.evidential_stage(3, Trainable::ALL, self.config.finetune_epochs)?;
        }
        Ok(())
    }
}

/// Runs the enabled stages. A non-finite loss or gradient, or evidence that
/// degenerates numerically, ends training early; the outcome then carries
/// the error and the best model so far.
pub fn train<E: FeatureExtractor>(
    model: Model<E>,
    train: &[LabeledExample],
    val: &[LabeledExample],
    config: &TrainingConfig,
) -> Result<TrainOutcome<E>> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let problems = config.problems("");
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let mut trainer = Trainer {
        log: TrainingLog { modalities: model.modalities.clone(), records: Vec::new() },
        model,
        train,
        val,
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        epoch: 0,
        best: None,
        optimizer: None,
    };
    let divergence = match trainer.run() {
        Ok(()) => None,
        Err(e @ Error::NonFinite { .. }) => Some(e),
        // Parameters driven to saturation leave no plausible class.
        Err(e @ (Error::DegenerateFusion | Error::ZeroContour | Error::TotalConflict { .. })) => {
            Some(Error::NonFinite { what: format!("evidence ({e})"), step: trainer.epoch as u64 })
        }
        Err(e) => return Err(e),
    };
    let (best, model) = match trainer.best {
        Some((record, model)) => (Some(record), model),
        None => (None, trainer.model),
    };
    Ok(TrainOutcome { model, log: trainer.log, best, optimizer: trainer.optimizer, divergence })
}
