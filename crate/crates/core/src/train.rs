//! Optimiser, learning-rate schedule and the deterministic training loop.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngState};
use crate::decoder::MixtureNoise;
use crate::error::{Error, Result};
use crate::eval::ml_map;
use crate::losses::{assign_targets, total_loss, AssignConfig, LossBreakdown, LossInputs, LossWeights};
use crate::model::Model;
use crate::nn::{Gradients, ParamStore, Tape, Var};
use crate::synthgen::{AugmentTransform, Dataset, PoseTrajectory, SceneObject};
use crate::util::stream_rng;

const SHUFFLE_STREAM: u64 = 0x5f00_0000_0000;
const SAMPLE_STREAM: u64 = 0x5a00_0000_0000_0000;
const VALIDATION_STREAM: u64 = 0x7600_0000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimiser steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub lr_decay: f64,
    /// First (1-based) epoch trained at the decayed rate.
    pub decay_start: usize,
    pub decay_every: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub weights: LossWeights,
    pub assign: AssignConfig,
    pub augment: bool,
    /// Share of the training ids held out for per-epoch validation.
    pub val_fraction: f64,
    /// Validate every this many epochs (and after the last one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 180,
            max_steps: None,
            lr: 1e-3,
            lr_decay: 0.1,
            decay_start: 81,
            decay_every: 40,
            adam: AdamConfig::default(),
            clip_norm: Some(10.0),
            seed: 0,
            weights: LossWeights::default(),
            assign: AssignConfig::default(),
            augment: true,
            val_fraction: 0.1,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 || self.eval_every == 0 {
            return bad("batch_size, epochs, decay_every and eval_every must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1] so the schedule never increases");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps be positive");
        }
        self.weights.validate()
    }

    /// Learning rate for a 1-based epoch: `lr` before `decay_start`, then one extra factor of
    /// `lr_decay` at `decay_start` and every `decay_every` epochs after it.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start {
            return self.lr;
        }
        let k = 1 + (epoch - self.decay_start) / self.decay_every;
        self.lr * self.lr_decay.powi(k as i32)
    }
}

/// Adam moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store.iter().map(|(_, v)| Array2::zeros(v.dim())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update. Parameters without a gradient see a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            match grads.get(id) {
                Some(g) => {
                    m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                    v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                }
                None => {
                    m.mapv_inplace(|m| beta1 * m);
                    v.mapv_inplace(|v| beta2 * v);
                }
            }
            let w = store.value_mut(id);
            ndarray::Zip::from(w).and(&*m).and(&*v).for_each(|w, &m, &v| {
                *w -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
    }
}

/// Forward pass plus targets and loss for one (already resampled) sequence.
pub fn sequence_loss(
    model: &Model,
    tape: &mut Tape,
    frames: &Array3<f64>,
    objects: &[SceneObject],
    noise: &MixtureNoise,
    weights: &LossWeights,
    assign: &AssignConfig,
) -> Result<(Var, LossBreakdown)> {
    let f = model.forward(tape, frames, noise)?;
    let centers = tape.value(f.clusters.centers).clone();
    let assignment = assign_targets(&f.votes.seeds, &centers, objects, assign)?;
    Ok(total_loss(
        tape,
        &LossInputs::from_forward(&f),
        &assignment,
        weights,
        assign.huber_delta,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    /// Mean over the batch.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss.total).collect()
    }
}

/// Written next to the checkpoints when a step produces a non-finite loss.
#[derive(Debug, Serialize)]
struct NanDump<'a> {
    epoch: usize,
    step: usize,
    sequences: &'a [String],
    losses: Vec<LossBreakdown>,
}

/// Owns the model, optimiser and schedule position for one run.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub step: usize,
    pub history: History,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    dataset: &'a Dataset,
    frames: Vec<Array3<f64>>,
    train_idx: Vec<usize>,
    best: Option<f64>,
}

impl<'a> Trainer<'a> {
    /// Holds out the validation slice from `ids` and resamples every training sequence once.
    pub fn new(model: Model, config: TrainConfig, dataset: &'a Dataset, ids: &[String]) -> Result<Self> {
        config.validate()?;
        if ids.is_empty() {
            return Err(Error::Data("no training sequences".into()));
        }
        let mut shuffled = ids.to_vec();
        shuffled.sort();
        shuffled.shuffle(&mut stream_rng(config.seed, VALIDATION_STREAM));
        let n_val = (ids.len() as f64 * config.val_fraction).floor() as usize;
        let n_val = n_val.min(ids.len() - 1);
        let mut val_ids = shuffled[..n_val].to_vec();
        let mut train_ids = shuffled[n_val..].to_vec();
        val_ids.sort();
        train_ids.sort();
        let train_idx = train_ids
            .iter()
            .map(|id| {
                dataset
                    .sequences
                    .iter()
                    .position(|s| &s.id == id)
                    .ok_or_else(|| Error::Data(format!("unknown sequence {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let frames = train_idx
            .par_iter()
            .map(|&i| model.prepare(&dataset.sequences[i].trajectory))
            .collect::<Result<Vec<_>>>()?;
        let adam = Adam::new(config.adam, &model.store);
        Ok(Self {
            config,
            model,
            adam,
            epoch: 0,
            step: 0,
            history: History::default(),
            train_ids,
            val_ids,
            dataset,
            frames,
            train_idx,
            best: None,
        })
    }

    /// Continues from a saved state. The checkpoint must come from the same configs.
    pub fn resume(&mut self, ckpt: Checkpoint) -> Result<()> {
        if ckpt.model_config != self.model.config || ckpt.train_config != self.config {
            return Err(Error::Config(
                "checkpoint was written with a different configuration".into(),
            ));
        }
        self.model.store = ckpt.store;
        self.adam = ckpt.adam;
        self.epoch = ckpt.epoch;
        self.step = ckpt.step;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config.clone(),
            train_config: self.config.clone(),
            store: self.model.store.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: RngState {
                seed: self.config.seed,
                stream: SHUFFLE_STREAM + self.epoch as u64 + 1,
                word_pos: 0,
            },
        }
    }

    fn done(&self) -> bool {
        self.epoch >= self.config.epochs || self.config.max_steps.is_some_and(|m| self.step >= m)
    }

    /// Loss and gradient of one training item; randomness is keyed on (step, slot) only.
    fn item(&self, slot: usize, local: usize) -> Result<(Gradients, LossBreakdown)> {
        let seq = &self.dataset.sequences[self.train_idx[local]];
        let mut rng = stream_rng(
            self.config.seed,
            SAMPLE_STREAM ^ ((self.step as u64) << 16) ^ slot as u64,
        );
        let (frames, objects) = if self.config.augment {
            let t = AugmentTransform::sample(&mut rng);
            let traj = PoseTrajectory {
                frames: self.frames[local].clone(),
                frame_rate: seq.trajectory.frame_rate,
            };
            (
                t.apply_trajectory(&traj, &self.model.config.skeleton).frames,
                t.apply_objects(&seq.objects),
            )
        } else {
            (self.frames[local].clone(), seq.objects.clone())
        };
        let noise = MixtureNoise::sample(
            self.model.config.effective_clusters(),
            self.model.config.decoder.modes,
            &mut rng,
        );
        let mut tape = Tape::new(&self.model.store);
        let (loss, breakdown) = sequence_loss(
            &self.model,
            &mut tape,
            &frames,
            &objects,
            &noise,
            &self.config.weights,
            &self.config.assign,
        )?;
        Ok((tape.backward(loss), breakdown))
    }

    fn train_step(&mut self, batch: &[usize], lr: f64, out: Option<&Path>) -> Result<StepRecord> {
        let results = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &local)| self.item(slot, local))
            .collect::<Result<Vec<_>>>()?;
        let losses: Vec<LossBreakdown> = results.iter().map(|r| r.1).collect();
        if losses.iter().any(|l| !l.total.is_finite()) {
            let sequences: Vec<String> = batch.iter().map(|&i| self.train_ids[i].clone()).collect();
            let dump = NanDump {
                epoch: self.epoch + 1,
                step: self.step,
                sequences: &sequences,
                losses: losses.clone(),
            };
            let text = serde_json::to_string_pretty(&dump).unwrap_or_default();
            if let Some(dir) = out {
                fs::write(dir.join("nan_batch.json"), &text)?;
            }
            log::error!("non-finite loss: {text}");
            return Err(Error::Numerical(format!(
                "non-finite loss at epoch {} step {} on sequences {:?}",
                self.epoch + 1,
                self.step,
                sequences
            )));
        }
        let mut grads = Gradients::default();
        for (g, _) in &results {
            grads.accumulate(g);
        }
        grads.scale(1.0 / batch.len() as f64);
        let grad_norm = grads.global_norm();
        if !grad_norm.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient at step {}", self.step)));
        }
        if let Some(c) = self.config.clip_norm {
            if grad_norm > c {
                grads.scale(c / grad_norm);
            }
        }
        self.adam.step(&mut self.model.store, &grads, lr);
        self.step += 1;
        let mut mean = LossBreakdown::default();
        for l in &losses {
            mean.objectness += l.objectness;
            mean.class += l.class;
            mean.vote += l.vote;
            mean.center += l.center;
            mean.size += l.size;
            mean.orientation += l.orientation;
            mean.total += l.total;
        }
        let k = 1.0 / losses.len() as f64;
        for v in [
            &mut mean.objectness,
            &mut mean.class,
            &mut mean.vote,
            &mut mean.center,
            &mut mean.size,
            &mut mean.orientation,
            &mut mean.total,
        ] {
            *v *= k;
        }
        Ok(StepRecord {
            epoch: self.epoch + 1,
            step: self.step,
            lr,
            grad_norm,
            loss: mean,
        })
    }

    /// One pass over the (shuffled) training ids.
    pub fn run_epoch(&mut self, out: Option<&Path>) -> Result<EpochRecord> {
        let epoch = self.epoch + 1;
        let lr = self.config.lr_at(epoch);
        let mut order: Vec<usize> = (0..self.train_idx.len()).collect();
        order.shuffle(&mut stream_rng(self.config.seed, SHUFFLE_STREAM + epoch as u64));
        let mut log = match out {
            Some(dir) => Some(
                fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("losses.jsonl"))?,
            ),
            None => None,
        };
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(self.config.batch_size) {
            if self.config.max_steps.is_some_and(|m| self.step >= m) {
                break;
            }
            let rec = self.train_step(batch, lr, out)?;
            log::debug!("epoch {epoch} step {} loss {:.5}", rec.step, rec.loss.total);
            if let Some(f) = log.as_mut() {
                writeln!(
                    f,
                    "{}",
                    serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?
                )?;
            }
            total += rec.loss.total;
            steps += 1;
            self.history.steps.push(rec);
        }
        self.epoch = epoch;
        let validate = !self.val_ids.is_empty() && (epoch.is_multiple_of(self.config.eval_every) || self.done());
        let val_map = if validate {
            Some(ml_map(&self.model, self.dataset, &self.val_ids)?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            mean_loss: total / steps.max(1) as f64,
            val_map,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.1e} loss {:.5} val mAP {:?}",
            rec.mean_loss,
            rec.val_map
        );
        if let Some(dir) = out {
            let ckpt = self.checkpoint();
            ckpt.save(&dir.join("last.ckpt"))?;
            // lower loss is better when there is no validation slice
            let score = val_map.unwrap_or(-rec.mean_loss);
            if (validate || self.val_ids.is_empty()) && self.best.is_none_or(|b| score > b) {
                self.best = Some(score);
                ckpt.save(&dir.join("best.ckpt"))?;
            }
        }
        self.history.epochs.push(rec.clone());
        Ok(rec)
    }

    /// Trains until the epoch or step budget runs out.
    pub fn run(&mut self, out: Option<&Path>) -> Result<&History> {
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
        }
        while !self.done() {
            self.run_epoch(out)?;
        }
        Ok(&self.history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synthgen::{generate_dataset, GeneratorConfig};

    #[test]
    fn schedule_examples() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(1), 1e-3);
        assert_eq!(c.lr_at(79), 1e-3);
        assert_eq!(c.lr_at(80), 1e-3);
        assert!((c.lr_at(81) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(120) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(121) - 1e-5).abs() < 1e-19);
        assert!((c.lr_at(180) - 1e-6).abs() < 1e-20);
        for e in 1..180 {
            assert!(c.lr_at(e + 1) <= c.lr_at(e));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = TrainConfig {
            lr_decay: 2.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::default();
        let id = store.insert("w", Array2::from_elem((1, 2), 1.0));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let grads = Gradients {
            by_param: vec![Some(ndarray::arr2(&[[3.0, -0.5]]))],
        };
        adam.step(&mut store, &grads, 0.1);
        let w = store.value(id);
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] - 1.1).abs() < 1e-6);
    }

    fn small() -> (Dataset, ModelConfig) {
        let data = generate_dataset(&GeneratorConfig::toy(1, 2, 5)).unwrap();
        let mut m = ModelConfig::desk(3);
        m.frames = 48;
        m.encoder.d1 = 6;
        m.encoder.d2 = 16;
        m.encoder.blocks = 2;
        m.voting.seeds = 32;
        m.voting.clusters = 8;
        m.decoder.modes = 4;
        m.decoder.hidden = 16;
        (data, m)
    }

    #[test]
    fn overfitting_one_sequence_lowers_the_loss() {
        let (data, m) = small();
        let ids = vec![data.sequences[0].id.clone()];
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 200,
            augment: false,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(Model::new(m, 1).unwrap(), cfg, &data, &ids).unwrap();
        let losses = t.run(None).unwrap().losses();
        assert_eq!(losses.len(), 200);
        assert!(losses[199] < losses[0], "{} !< {}", losses[199], losses[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let (data, m) = small();
        let ids: Vec<String> = data.sequences.iter().map(|s| s.id.clone()).collect();
        let cfg = TrainConfig {
            batch_size: 2,
            epochs: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut t = Trainer::new(Model::new(m.clone(), 3).unwrap(), cfg.clone(), &data, &ids).unwrap();
            t.run(None).unwrap();
            (t.history.clone(), t.model.store.clone())
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }
}
