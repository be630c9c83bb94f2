//! Training orchestration: batch composition over the labeled and unlabeled
//! pools, label guessing, the combined objective
//! `L = L_s + λ_u·L_u + λ_ss·L_ss`, the optimizer loop, validation,
//! checkpoints, and history.
//!
//! All randomness derives from `(seed, purpose, epoch, index)` streams, so
//! runs replay bit-identically and checkpoints resume without storing
//! generator state. At epoch 0 both consistency weights are zero and the
//! unlabeled pipeline is skipped entirely, which makes the first epoch
//! bit-compatible with a supervised-only trainer at the same seed.

mod adam;
mod guess;

pub use adam::Adam;
pub use guess::{
    guess_labels_ssld, guess_labels_sslss, ssld_from_copies, sslss_from_copies, GuessSource, GuessedLabel,
    TransformedCopy,
};

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::{apply_augment, augment_k, sample_domain_augmentation, AugmentConfig, AugmentMode};
use crate::autodiff::Mode;
use crate::data::{DatasetSplit, ImageSample};
use crate::error::{Error, Result};
use crate::losses::{
    boundary_weight_map, consistency_mse, dice_loss, masked_consistency_mse, schedule, signed_distance_map,
    supervised_loss, total_loss, weighted_cross_entropy, LossConfig, LossWeights,
};
use crate::metrics::evaluate;
use crate::network::{
    load_checkpoint, save_checkpoint, CheckpointMeta, NetworkConfig, TensorBytes, U2NetPlus,
};
use crate::scalar::Scalar;
use crate::tensor::{stack_batch, Tensor3, Tensor4};
use crate::transform::{sample_transform, SpatialTransform, TransformConfig};

/// Whether the unlabeled pool participates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Ssl,
    SupervisedOnly,
}

/// Which model produces guessed labels: the live model or a snapshot taken
/// at the start of each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsldTarget {
    Live,
    Snapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub labeled_per_batch: usize,
    pub unlabeled_per_batch: usize,
    pub learning_rate: f64,
    /// Augmented copies per unlabeled data point.
    pub k: usize,
    pub seed: u64,
    pub deep_supervision: bool,
    pub mode: TrainMode,
    /// First epoch at which the transform-equivariance loss activates.
    pub stage2_start_epoch: usize,
    pub ssld_target: SsldTarget,
    pub validation_batch: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            labeled_per_batch: 2,
            unlabeled_per_batch: 2,
            learning_rate: 1e-3,
            k: 2,
            seed: 0,
            deep_supervision: true,
            mode: TrainMode::Ssl,
            stage2_start_epoch: 0,
            ssld_target: SsldTarget::Live,
            validation_batch: 8,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.labeled_per_batch < 1 || self.unlabeled_per_batch < 1 {
            return Err(Error::Config("per-batch counts must be at least 1".into()));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Loss values of one optimizer step.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_s: f64,
    pub weighted_ce: f64,
    pub dice: f64,
    pub surface: f64,
    pub side: f64,
    pub l_u: f64,
    pub l_ss: f64,
    pub total: f64,
}

/// One line of the structured step log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub losses: StepLosses,
    pub lambda_u: f64,
    pub lambda_ss: f64,
}

/// Per-epoch summary: mean step losses, validation metrics, and the weight
/// snapshot in effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: StepLosses,
    pub val_miou: Option<f64>,
    pub val_f1: Option<f64>,
    pub alpha: f64,
    pub lambda_u: f64,
    pub lambda_ss: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("history: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        serde_json::from_str(&json).map_err(|e| Error::Data(format!("history {}: {e}", path.display())))
    }
}

/// Training session owning the model, optimizer, and caches.
pub struct Trainer<T: TensorBytes> {
    pub model: U2NetPlus<T>,
    adam: Adam<T>,
    pub train_cfg: TrainConfig,
    pub loss_cfg: LossConfig,
    pub aug_cfg: AugmentConfig,
    pub transform_cfg: TransformConfig,
    pub history: TrainHistory,
    /// Echoed into checkpoint metadata (e.g. the full run configuration).
    pub meta_extra: serde_json::Value,
    start_epoch: usize,
    best_miou: Option<f64>,
    geometry: HashMap<String, Rc<(Array2<T>, Array2<T>)>>,
    snapshot: Option<U2NetPlus<T>>,
}

/// Paths written into a run directory.
pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const HISTORY_FILE: &str = "history.json";

impl<T: TensorBytes> Trainer<T> {
    pub fn new(
        net_cfg: NetworkConfig,
        train_cfg: TrainConfig,
        loss_cfg: LossConfig,
        aug_cfg: AugmentConfig,
        transform_cfg: TransformConfig,
    ) -> Result<Self> {
        train_cfg.validate()?;
        aug_cfg.validate()?;
        let model = U2NetPlus::new(net_cfg, train_cfg.seed)?;
        let adam = Adam::new(train_cfg.learning_rate, model.params());
        Ok(Self {
            model,
            adam,
            train_cfg,
            loss_cfg,
            aug_cfg,
            transform_cfg,
            history: TrainHistory::default(),
            meta_extra: serde_json::Value::Null,
            start_epoch: 0,
            best_miou: None,
            geometry: HashMap::new(),
            snapshot: None,
        })
    }

    /// Continues a run from a checkpoint; `history` should be the history
    /// file of the interrupted run (or empty to restart bookkeeping).
    pub fn resume(
        checkpoint: &Path,
        train_cfg: TrainConfig,
        loss_cfg: LossConfig,
        aug_cfg: AugmentConfig,
        transform_cfg: TransformConfig,
        history: TrainHistory,
    ) -> Result<Self> {
        train_cfg.validate()?;
        let (model, extra, meta) = load_checkpoint::<T>(checkpoint)?;
        let mut adam = Adam::new(train_cfg.learning_rate, model.params());
        if let Some(step) = meta.adam_step {
            adam.import_state(model.params(), &extra, step)?;
        }
        Ok(Self {
            model,
            adam,
            train_cfg,
            loss_cfg,
            aug_cfg,
            transform_cfg,
            history,
            meta_extra: meta.extra.clone(),
            start_epoch: meta.epoch,
            best_miou: meta.best_val_miou,
            geometry: HashMap::new(),
            snapshot: None,
        })
    }

    pub fn completed_epochs(&self) -> usize {
        self.history.epochs.len()
    }

    fn geometry_for(&mut self, sample: &ImageSample<T>) -> Result<Rc<(Array2<T>, Array2<T>)>> {
        if let Some(hit) = self.geometry.get(&sample.id) {
            return Ok(hit.clone());
        }
        let mask = sample
            .mask
            .as_ref()
            .ok_or_else(|| Error::Data(format!("labeled sample {} has no mask", sample.id)))?;
        let bal = boundary_weight_map::<T>(mask, self.loss_cfg.boundary_sigma);
        let sdm = signed_distance_map::<T>(mask);
        let entry = Rc::new((bal, sdm));
        self.geometry.insert(sample.id.clone(), entry.clone());
        Ok(entry)
    }

    /// Effective loss weights for an epoch: the schedule, gated by the
    /// train mode and the stage-2 start.
    pub fn effective_weights(&self, epoch: usize) -> LossWeights {
        let mut weights = schedule(epoch, &self.loss_cfg);
        if self.train_cfg.mode == TrainMode::SupervisedOnly {
            weights.lambda_u = 0.0;
            weights.lambda_ss = 0.0;
        }
        if epoch < self.train_cfg.stage2_start_epoch {
            weights.lambda_ss = 0.0;
        }
        weights
    }

    /// One optimizer step over a composed batch.
    pub fn train_step(
        &mut self,
        epoch: usize,
        step: usize,
        labeled: &[&ImageSample<T>],
        unlabeled: &[&ImageSample<T>],
        weights: &LossWeights,
    ) -> Result<StepLosses> {
        if labeled.is_empty() {
            return Err(Error::Config("a training step needs at least one labeled sample".into()));
        }
        self.model.params_mut().zero_grads();

        let mut losses = self.supervised_pass(epoch, step, labeled, weights)?;

        let do_u = weights.lambda_u > 0.0 && !unlabeled.is_empty();
        let do_ss = weights.lambda_ss > 0.0 && !unlabeled.is_empty();
        if do_u || do_ss {
            let (l_u, l_ss) = self.consistency_passes(epoch, step, unlabeled, weights, do_u, do_ss)?;
            losses.l_u = l_u;
            losses.l_ss = l_ss;
        }

        losses.total = total_loss(losses.l_s, losses.l_u, losses.l_ss, weights).map_err(|e| {
            match e {
                Error::NonFinite { component, value } => Error::NonFinite { component, value },
                other => other,
            }
        })?;
        self.adam.step(self.model.params_mut());
        Ok(losses)
    }

    fn supervised_pass(
        &mut self,
        epoch: usize,
        step: usize,
        labeled: &[&ImageSample<T>],
        weights: &LossWeights,
    ) -> Result<StepLosses> {
        let b_l = labeled.len();
        let mut rng = crate::rng::stream(self.train_cfg.seed, "labeled-aug", epoch as u64, step as u64);
        let mut images = Vec::with_capacity(b_l);
        for sample in labeled {
            let params = sample_domain_augmentation(&mut rng, AugmentMode::Labeled, &self.aug_cfg);
            images.push(apply_augment(&sample.image, &params)?);
        }
        let geo: Vec<_> = labeled.iter().map(|s| self.geometry_for(s)).collect::<Result<_>>()?;

        let batch = stack_batch(&images);
        let mut pass = self.model.forward(&batch, Mode::Train)?;
        let fused = pass.graph.value(pass.fused_probs).clone();
        let deep = self.train_cfg.deep_supervision;
        let side_vals: Vec<Tensor4<T>> = if deep {
            pass.side_probs.iter().map(|&id| pass.graph.value(id).clone()).collect()
        } else {
            Vec::new()
        };

        let dims = fused.dim();
        let (_, _, h, w) = dims;
        let zero_bal = Array2::<T>::zeros((h, w));
        let inv_b = 1.0 / b_l as f64;
        let mut fused_seed = Tensor4::<T>::zeros(dims);
        let mut side_seeds: Vec<Tensor4<T>> = if deep { vec![Tensor4::zeros(dims); side_vals.len()] } else { Vec::new() };

        let mut out = StepLosses::default();
        for (b, sample) in labeled.iter().enumerate() {
            let mask = sample.mask.as_ref().expect("validated labeled sample");
            let (bal, sdm) = &*geo[b];
            let probs = fused.index_axis(Axis(0), b).to_owned();
            let (l_s_b, comps, grad) =
                supervised_loss(&probs, mask, weights, bal, sdm, self.loss_cfg.dice_epsilon)?;
            out.l_s += l_s_b * inv_b;
            out.weighted_ce += comps.weighted_ce * inv_b;
            out.dice += comps.dice * inv_b;
            out.surface += comps.surface * inv_b;
            let scale = T::of(inv_b);
            fused_seed
                .index_axis_mut(Axis(0), b)
                .assign(&grad.map(|&g| g * scale));

            if deep {
                let side_scale = T::of(inv_b / side_vals.len() as f64);
                for (i, sv) in side_vals.iter().enumerate() {
                    let sprobs = sv.index_axis(Axis(0), b).to_owned();
                    let (ce, ce_grad) = weighted_cross_entropy(&sprobs, mask, &zero_bal, 1.0, 0.0)?;
                    let (dc, dc_grad) = dice_loss(&sprobs, mask, self.loss_cfg.dice_epsilon)?;
                    out.side += (ce + dc) * inv_b / side_vals.len() as f64;
                    let mut seed = side_seeds[i].index_axis_mut(Axis(0), b);
                    ndarray::Zip::from(&mut seed).and(&ce_grad).and(&dc_grad).for_each(|s, &a, &b2| {
                        *s = (a + b2) * side_scale;
                    });
                }
            }
        }
        out.l_s += out.side;

        let mut seeds = vec![(pass.fused_probs, fused_seed)];
        if deep {
            for (i, seed) in side_seeds.into_iter().enumerate() {
                seeds.push((pass.side_probs[i], seed));
            }
        }
        pass.graph.backward(seeds, self.model.params_mut());
        Ok(out)
    }

    fn consistency_passes(
        &mut self,
        epoch: usize,
        step: usize,
        unlabeled: &[&ImageSample<T>],
        weights: &LossWeights,
        do_u: bool,
        do_ss: bool,
    ) -> Result<(f64, f64)> {
        let k = self.train_cfg.k;

        // Draw per-sample copies and transforms, then guess labels with the
        // live model (or the epoch snapshot) in inference mode.
        struct PerSample<T: Scalar> {
            copies: Vec<Tensor3<T>>,
            transforms: Vec<SpatialTransform>,
            guessed_u: Option<GuessedLabel<T>>,
            guessed_ss: Option<GuessedLabel<T>>,
            warped: Vec<TransformedCopy<T>>,
        }

        let mut per_sample: Vec<PerSample<T>> = Vec::with_capacity(unlabeled.len());
        for (ui, sample) in unlabeled.iter().enumerate() {
            let mut rng = crate::rng::stream(
                self.train_cfg.seed,
                "unlabeled-aug",
                epoch as u64,
                ((step as u64) << 8) | ui as u64,
            );
            let copies = augment_k(&sample.image, k, AugmentMode::Unlabeled, &self.aug_cfg, &mut rng)?;
            let transforms: Vec<SpatialTransform> = if do_ss {
                (0..k).map(|_| sample_transform(&mut rng, &self.transform_cfg)).collect()
            } else {
                Vec::new()
            };
            per_sample.push(PerSample { copies, transforms, guessed_u: None, guessed_ss: None, warped: Vec::new() });
        }

        {
            let guess_model = match self.snapshot.as_mut() {
                Some(snap) => snap,
                None => &mut self.model,
            };
            for ps in per_sample.iter_mut() {
                if do_u {
                    ps.guessed_u = Some(ssld_from_copies(guess_model, &ps.copies)?);
                }
                if do_ss {
                    let (guessed, warped) = sslss_from_copies(guess_model, &ps.copies, &ps.transforms)?;
                    ps.guessed_ss = Some(guessed);
                    ps.warped = warped;
                }
            }
        }

        let mut l_u = 0.0;
        if do_u {
            let all: Vec<Tensor3<T>> = per_sample.iter().flat_map(|ps| ps.copies.iter().cloned()).collect();
            let count = all.len();
            let batch = stack_batch(&all);
            let mut pass = self.model.forward(&batch, Mode::Train)?;
            let fused = pass.graph.value(pass.fused_probs).clone();
            let mut seed = Tensor4::<T>::zeros(fused.dim());
            let scale = T::of(weights.lambda_u / count as f64);
            for (i, ps) in per_sample.iter().enumerate() {
                let target = &ps.guessed_u.as_ref().unwrap().probs;
                for j in 0..k {
                    let idx = i * k + j;
                    let probs = fused.index_axis(Axis(0), idx).to_owned();
                    let (mse, grad) = consistency_mse(&probs, target)?;
                    l_u += mse / count as f64;
                    seed.index_axis_mut(Axis(0), idx).assign(&grad.map(|&g| g * scale));
                }
            }
            let fused_id = pass.fused_probs;
            pass.graph.backward(vec![(fused_id, seed)], self.model.params_mut());
        }

        let mut l_ss = 0.0;
        if do_ss {
            let all: Vec<Tensor3<T>> =
                per_sample.iter().flat_map(|ps| ps.warped.iter().map(|c| c.image.clone())).collect();
            let count = all.len();
            let batch = stack_batch(&all);
            let mut pass = self.model.forward(&batch, Mode::Train)?;
            // Bring predictions back to the original frame before comparing.
            let grids: Vec<crate::transform::SamplingGrid> =
                per_sample.iter().flat_map(|ps| ps.warped.iter().map(|c| c.inverse.clone())).collect();
            let back_id = pass.graph.warp(pass.fused_probs, Rc::new(grids));
            let back = pass.graph.value(back_id).clone();
            let mut seed = Tensor4::<T>::zeros(back.dim());
            let scale = T::of(weights.lambda_ss / count as f64);
            for (i, ps) in per_sample.iter().enumerate() {
                let target = &ps.guessed_ss.as_ref().unwrap().probs;
                for j in 0..k {
                    let idx = i * k + j;
                    let probs = back.index_axis(Axis(0), idx).to_owned();
                    let validity = &ps.warped[j].round_trip_validity;
                    let (mse, grad) = masked_consistency_mse(&probs, target, validity)?;
                    l_ss += mse / count as f64;
                    seed.index_axis_mut(Axis(0), idx).assign(&grad.map(|&g| g * scale));
                }
            }
            pass.graph.backward(vec![(back_id, seed)], self.model.params_mut());
        }

        Ok((l_u, l_ss))
    }

    /// Runs the epoch loop. Writes checkpoints, the history file, and the
    /// per-step JSONL log into `out_dir` when given.
    pub fn train(
        &mut self,
        data: &DatasetSplit<T>,
        out_dir: Option<&Path>,
        mut step_log: Option<&mut dyn Write>,
    ) -> Result<()> {
        use rand::seq::SliceRandom;

        let labeled: Vec<&ImageSample<T>> = data.train_labeled.iter().collect();
        if labeled.is_empty() {
            return Err(Error::Data("training requires at least one labeled sample".into()));
        }
        let unlabeled: Vec<&ImageSample<T>> = match self.train_cfg.mode {
            TrainMode::Ssl => data.train_unlabeled.iter().collect(),
            TrainMode::SupervisedOnly => Vec::new(),
        };

        let lab_pb = self.train_cfg.labeled_per_batch.min(labeled.len());
        let unl_pb = self.train_cfg.unlabeled_per_batch.min(unlabeled.len().max(1));
        let lab_steps = labeled.len().div_ceil(lab_pb);
        let unl_steps = if unlabeled.is_empty() { 0 } else { unlabeled.len().div_ceil(unl_pb) };
        // Every unlabeled sample is visited each epoch; the smaller pool is
        // oversampled to match.
        let epoch_len = lab_steps.max(unl_steps).max(1);

        let input_size = self.model.config.input_size;
        for epoch in self.start_epoch..self.train_cfg.epochs {
            let weights = self.effective_weights(epoch);
            if self.train_cfg.ssld_target == SsldTarget::Snapshot
                && self.train_cfg.mode == TrainMode::Ssl
                && (weights.lambda_u > 0.0 || weights.lambda_ss > 0.0)
            {
                self.snapshot = Some(self.model.clone());
            } else {
                self.snapshot = None;
            }

            let mut lab_order: Vec<usize> = (0..labeled.len()).collect();
            lab_order.shuffle(&mut crate::rng::stream(self.train_cfg.seed, "order-labeled", epoch as u64, 0));
            let mut unl_order: Vec<usize> = (0..unlabeled.len()).collect();
            unl_order.shuffle(&mut crate::rng::stream(self.train_cfg.seed, "order-unlabeled", epoch as u64, 0));

            let mut sums = StepLosses::default();
            for step in 0..epoch_len {
                let lb: Vec<&ImageSample<T>> =
                    (0..lab_pb).map(|j| labeled[lab_order[(step * lab_pb + j) % lab_order.len()]]).collect();
                let ub: Vec<&ImageSample<T>> = if unlabeled.is_empty() {
                    Vec::new()
                } else {
                    (0..unl_pb).map(|j| unlabeled[unl_order[(step * unl_pb + j) % unl_order.len()]]).collect()
                };
                let losses = self.train_step(epoch, step, &lb, &ub, &weights)?;

                sums.l_s += losses.l_s;
                sums.weighted_ce += losses.weighted_ce;
                sums.dice += losses.dice;
                sums.surface += losses.surface;
                sums.side += losses.side;
                sums.l_u += losses.l_u;
                sums.l_ss += losses.l_ss;
                sums.total += losses.total;

                if let Some(log) = step_log.as_deref_mut() {
                    let record = StepRecord {
                        epoch,
                        step,
                        losses,
                        lambda_u: weights.lambda_u,
                        lambda_ss: weights.lambda_ss,
                    };
                    serde_json::to_writer(&mut *log, &record).map_err(|e| Error::Data(format!("step log: {e}")))?;
                    writeln!(log)?;
                }
            }

            let n = epoch_len as f64;
            let mean = StepLosses {
                l_s: sums.l_s / n,
                weighted_ce: sums.weighted_ce / n,
                dice: sums.dice / n,
                surface: sums.surface / n,
                side: sums.side / n,
                l_u: sums.l_u / n,
                l_ss: sums.l_ss / n,
                total: sums.total / n,
            };

            let (val_miou, val_f1) = if data.validation.is_empty() {
                (None, None)
            } else {
                let report = evaluate(&mut self.model, &data.validation, self.train_cfg.threshold, input_size)?;
                (Some(report.mean.iou), Some(report.mean.f1))
            };

            self.history.epochs.push(EpochRecord {
                epoch,
                losses: mean,
                val_miou,
                val_f1,
                alpha: weights.alpha,
                lambda_u: weights.lambda_u,
                lambda_ss: weights.lambda_ss,
            });

            if let Some(dir) = out_dir {
                std::fs::create_dir_all(dir)?;
                self.save_checkpoint(&dir.join(LAST_CHECKPOINT), epoch + 1)?;
                let improved = match (val_miou, self.best_miou) {
                    (Some(v), Some(best)) => v > best,
                    (Some(_), None) => true,
                    (None, _) => false,
                };
                if improved {
                    self.best_miou = val_miou;
                    self.save_checkpoint(&dir.join(BEST_CHECKPOINT), epoch + 1)?;
                } else if val_miou.is_none() {
                    // No validation set: best tracks last.
                    self.save_checkpoint(&dir.join(BEST_CHECKPOINT), epoch + 1)?;
                }
                self.history.save_json(&dir.join(HISTORY_FILE))?;
            } else if let Some(v) = val_miou {
                if self.best_miou.map_or(true, |b| v > b) {
                    self.best_miou = Some(v);
                }
            }
        }
        self.snapshot = None;
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path, completed_epochs: usize) -> Result<()> {
        let mut meta = CheckpointMeta::new(self.model.config, completed_epochs, self.train_cfg.seed);
        meta.best_val_miou = self.best_miou;
        meta.adam_step = Some(self.adam.step_count());
        meta.extra = self.meta_extra.clone();
        let state = self.adam.export_state(self.model.params());
        save_checkpoint(path, &self.model, &state, &meta)
    }

    pub fn best_val_miou(&self) -> Option<f64> {
        self.best_miou
    }
}

/// Standard run-directory path for a checkpoint name.
pub fn checkpoint_path(run_dir: &Path, which: &str) -> PathBuf {
    run_dir.join(which)
}
