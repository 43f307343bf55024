//! Training loops for the rotation estimator and the toy set predictor.
//! Single-threaded with named seed streams throughout, so a (seed, config)
//! pair reproduces checkpoints bit-for-bit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::rotest::{RotEstConfig, RotationEstimator};
use super::transformer::{raster_to_patches, SetPredictor, ToyTransformerConfig};
use super::{CheckpointData, ModelError, OptimizerBlob, ParamStore, CHECKPOINT_FORMAT_VERSION};
use crate::autodiff::{AdamWConfig, OptimizerState, Tape, Tensor, Var};
use crate::geometry::{geodesic_distance, rot6d_to_matrix, KeypointKind, PointCloud, Rot6D};
use crate::losses::{
    hungarian_loss, rot6d_to_matrix_vars, rot_loss_vars, LossBreakdown, LossError, LossWeights,
    PoseLossCtx,
};
use crate::matching::match_sets;
use crate::rng::SeedStream;
use crate::synth::{class_surface_cloud, RotationPair, SyntheticSample};

fn loss_error(e: ModelError) -> LossError {
    match e {
        ModelError::Tape(t) => LossError::Tape(t),
        ModelError::Loss(l) => l,
        _ => LossError::InvalidArgument("rotation head failed"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationLossKind {
    /// Mean L1 displacement of the reference cloud under the predicted vs
    /// groundtruth rotation (through the Gram–Schmidt map).
    PointDisplacement,
    /// Direct L1 on the 6D code.
    SixDL1,
}

impl RotationLossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RotationLossKind::PointDisplacement => "rot",
            RotationLossKind::SixDL1 => "l1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rot" => Some(RotationLossKind::PointDisplacement),
            "l1" => Some(RotationLossKind::SixDL1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotestTrainConfig {
    pub model: RotEstConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub loss: RotationLossKind,
    pub heldout_fraction: f64,
    /// Epoch at which the learning rate drops by `lr_decay_factor`.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
}

impl Default for RotestTrainConfig {
    fn default() -> Self {
        Self {
            model: RotEstConfig::default(),
            epochs: 40,
            batch_size: 64,
            optimizer: AdamWConfig::default(),
            loss: RotationLossKind::PointDisplacement,
            heldout_fraction: 0.1,
            lr_decay_epoch: None,
            lr_decay_factor: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotestEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Median geodesic error on the held-out split, radians.
    pub heldout_median: f64,
}

#[derive(Debug, Clone)]
pub struct RotestOutcome {
    pub model: RotationEstimator,
    pub store: ParamStore<f32>,
    pub optimizer: OptimizerState<f32>,
    pub log: Vec<RotestEpochLog>,
    pub heldout_median: f64,
    pub epochs_done: usize,
    pub shuffle_position: u64,
    pub dropout_position: u64,
}

/// Reference cloud for the displacement loss: the 8 unit-cuboid corners.
fn displacement_cloud() -> PointCloud {
    let c = crate::geometry::Cuboid::new(
        crate::linalg::Vec3::ZERO,
        crate::linalg::Vec3::new(0.5, 0.5, 0.5),
    )
    .expect("static cuboid");
    PointCloud::new(c.corners().to_vec()).expect("non-empty")
}

/// Median geodesic error (radians) of the estimator on pairs, eval mode.
pub fn rotest_heldout_median(
    model: &RotationEstimator,
    store: &ParamStore<f32>,
    pairs: &[RotationPair],
) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut errs = Vec::with_capacity(pairs.len());
    let mut drop = SeedStream::new(0, "eval-dropout");
    for chunk in pairs.chunks(256) {
        let mut tape: Tape<f32> = Tape::new();
        let params = store.inject(&mut tape);
        let flat: Vec<f64> = chunk.iter().flat_map(|p| p.input.iter().copied()).collect();
        let x = tape.leaf_f64(chunk.len(), model.cfg.input_dim, &flat);
        let out = model
            .forward(&mut tape, &params, x, false, &mut drop)
            .expect("shapes fixed");
        let values = tape.value(out);
        for (i, pair) in chunk.iter().enumerate() {
            let row = values.row(i);
            let r6 = Rot6D::new([
                row[0] as f64,
                row[1] as f64,
                row[2] as f64,
                row[3] as f64,
                row[4] as f64,
                row[5] as f64,
            ]);
            let err = match rot6d_to_matrix(r6) {
                Ok(r) => geodesic_distance(&r, &pair.rotation),
                Err(_) => core::f64::consts::PI,
            };
            errs.push(err);
        }
    }
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    errs[errs.len() / 2]
}

/// Supervised training of the rotation estimator on keypoint→rotation
/// pairs. The last `heldout_fraction` of the dataset is the evaluation
/// split. Resuming from a checkpoint continues the optimizer step counter
/// and the RNG stream positions.
pub fn train_rotest(
    pairs: &[RotationPair],
    cfg: &RotestTrainConfig,
    resume: Option<&CheckpointData>,
) -> Result<RotestOutcome, ModelError> {
    if pairs.len() < 10 {
        return Err(ModelError::InvalidConfig("need at least 10 pairs"));
    }
    let n_held = ((pairs.len() as f64) * cfg.heldout_fraction) as usize;
    let n_train = pairs.len() - n_held;
    let (train_pairs, held_pairs) = pairs.split_at(n_train);

    let mut store: ParamStore<f32> = ParamStore::new();
    let mut init_rng = SeedStream::new(cfg.seed, "init");
    let model = RotationEstimator::init(&mut store, &mut init_rng, "rotest", cfg.model)?;
    let mut optimizer = OptimizerState::new(cfg.optimizer, &store.shapes());
    let mut shuffle = SeedStream::new(cfg.seed, "rotest-shuffle");
    let mut dropout = SeedStream::new(cfg.seed, "rotest-dropout");
    let mut epoch_offset = 0usize;

    if let Some(data) = resume {
        if data.kind != "rotest" {
            return Err(ModelError::CheckpointMismatch(String::from(
                "checkpoint kind is not rotest",
            )));
        }
        store.load_values(&data.params)?;
        if let Some(blob) = &data.optimizer {
            restore_optimizer(&mut optimizer, &store, blob)?;
        }
        for (name, pos) in &data.rng_positions {
            match name.as_str() {
                "rotest-shuffle" => shuffle.set_position(*pos),
                "rotest-dropout" => dropout.set_position(*pos),
                _ => {}
            }
        }
        if let Some(done) = data.config_value("epochs_done") {
            epoch_offset = done.parse().unwrap_or(0);
        }
    }

    let cloud = displacement_cloud();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..n_train).collect();

    for epoch in 0..cfg.epochs {
        if Some(epoch_offset + epoch) == cfg.lr_decay_epoch {
            optimizer.cfg.lr *= cfg.lr_decay_factor;
        }
        shuffle.shuffle(&mut indices);
        let mut loss_acc = 0.0;
        let mut batches = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            let mut tape: Tape<f32> = Tape::new();
            let params = store.inject(&mut tape);
            let flat: Vec<f64> = batch
                .iter()
                .flat_map(|&i| train_pairs[i].input.iter().copied())
                .collect();
            let x = tape.leaf_f64(batch.len(), cfg.model.input_dim, &flat);
            let out = model.forward(&mut tape, &params, x, true, &mut dropout)?;

            let loss = match cfg.loss {
                RotationLossKind::SixDL1 => {
                    let gt: Vec<f64> = batch
                        .iter()
                        .flat_map(|&i| train_pairs[i].target_r6.iter().copied())
                        .collect();
                    let gtv = tape.leaf_f64(batch.len(), 6, &gt);
                    let diff = tape.sub(out, gtv)?;
                    let absd = tape.abs(diff);
                    let total = tape.sum(absd);
                    tape.scale(total, 1.0 / batch.len() as f64)
                }
                RotationLossKind::PointDisplacement => {
                    let mut acc = tape.scalar(0.0);
                    for (row, &i) in batch.iter().enumerate() {
                        let r6 = tape.gather_rows(out, &[row])?;
                        let term = match rot6d_to_matrix_vars(&mut tape, r6) {
                            Ok(rt) => rot_loss_vars(
                                &mut tape,
                                &train_pairs[i].rotation,
                                rt,
                                &cloud,
                                false,
                            )?,
                            Err(LossError::DegenerateInput(_)) => {
                                // fall back to the 6D L1 pull for this row
                                let gtv = tape.leaf_f64(1, 6, &train_pairs[i].target_r6);
                                let diff = tape.sub(r6, gtv)?;
                                let absd = tape.abs(diff);
                                tape.sum(absd)
                            }
                            Err(e) => return Err(ModelError::Loss(e)),
                        };
                        acc = tape.add(acc, term)?;
                    }
                    tape.scale(acc, 1.0 / batch.len() as f64)
                }
            };
            loss_acc += tape.value(loss).item() as f64;
            batches += 1;
            let grads = tape.backward(loss)?;
            let grad_list = store.collect_grads(&grads, &params);
            let mut tensors = store.tensors_mut();
            let mut slices: Vec<Tensor<f32>> =
                tensors.iter().map(|t| (**t).clone()).collect();
            optimizer.clip_and_step(&mut slices, &grad_list);
            for (dst, src) in tensors.iter_mut().zip(slices) {
                **dst = src;
            }
        }
        let heldout_median = rotest_heldout_median(&model, &store, held_pairs);
        log.push(RotestEpochLog {
            epoch: epoch_offset + epoch,
            train_loss: loss_acc / batches.max(1) as f64,
            heldout_median,
        });
    }

    let heldout_median = rotest_heldout_median(&model, &store, held_pairs);
    Ok(RotestOutcome {
        model,
        store,
        optimizer,
        log,
        heldout_median,
        epochs_done: epoch_offset + cfg.epochs,
        shuffle_position: shuffle.position(),
        dropout_position: dropout.position(),
    })
}

fn restore_optimizer(
    optimizer: &mut OptimizerState<f32>,
    store: &ParamStore<f32>,
    blob: &OptimizerBlob,
) -> Result<(), ModelError> {
    optimizer.step = blob.step;
    let fill = |dst: &mut Vec<Tensor<f32>>,
                src: &[(String, (usize, usize), Vec<f64>)]|
     -> Result<(), ModelError> {
        for (slot, (name, _)) in dst.iter_mut().zip(store.entries()) {
            let Some((_, shape, data)) = src.iter().find(|(n, _, _)| n == name) else {
                return Err(ModelError::CheckpointMismatch(format!(
                    "missing optimizer moment for {name}"
                )));
            };
            if *shape != slot.shape() {
                return Err(ModelError::CheckpointMismatch(format!(
                    "moment shape mismatch for {name}"
                )));
            }
            *slot = Tensor::from_f64(shape.0, shape.1, data);
        }
        Ok(())
    };
    fill(&mut optimizer.m, &blob.first_moments)?;
    fill(&mut optimizer.v, &blob.second_moments)
}

fn moments_blob(
    store: &ParamStore<f32>,
    optimizer: &OptimizerState<f32>,
) -> OptimizerBlob {
    let named = |tensors: &[Tensor<f32>]| -> Vec<(String, (usize, usize), Vec<f64>)> {
        store
            .entries()
            .zip(tensors)
            .map(|((name, _), t)| (String::from(name), t.shape(), t.to_f64_vec()))
            .collect()
    };
    OptimizerBlob {
        step: optimizer.step,
        first_moments: named(&optimizer.m),
        second_moments: named(&optimizer.v),
    }
}

/// Packs a rotation-estimator training outcome into checkpoint form.
pub fn rotest_checkpoint(outcome: &RotestOutcome, cfg: &RotestTrainConfig) -> CheckpointData {
    let mut config = vec![
        (String::from("input_dim"), format!("{}", cfg.model.input_dim)),
        (String::from("hidden_dim"), format!("{}", cfg.model.hidden_dim)),
        (String::from("layers"), format!("{}", cfg.model.layers)),
        (String::from("dropout"), format!("{}", cfg.model.dropout)),
        (String::from("loss"), String::from(cfg.loss.as_str())),
        (String::from("lr"), format!("{}", cfg.optimizer.lr)),
        (String::from("weight_decay"), format!("{}", cfg.optimizer.weight_decay)),
        (String::from("clip_norm"), format!("{}", cfg.optimizer.clip_norm)),
        (String::from("batch_size"), format!("{}", cfg.batch_size)),
        (String::from("seed"), format!("{}", cfg.seed)),
        (String::from("epochs_done"), format!("{}", outcome.epochs_done)),
    ];
    config.sort();
    CheckpointData {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: String::from("rotest"),
        config,
        params: outcome
            .store
            .entries()
            .map(|(n, t)| (String::from(n), t.shape(), t.to_f64_vec()))
            .collect(),
        optimizer: Some(moments_blob(&outcome.store, &outcome.optimizer)),
        rng_positions: vec![
            (String::from("rotest-shuffle"), outcome.shuffle_position),
            (String::from("rotest-dropout"), outcome.dropout_position),
        ],
    }
}

/// Rebuilds a rotation estimator (and its store) from a checkpoint.
pub fn rotest_from_checkpoint(
    data: &CheckpointData,
) -> Result<(RotEstConfig, RotationEstimator, ParamStore<f32>), ModelError> {
    if data.kind != "rotest" {
        return Err(ModelError::CheckpointMismatch(String::from(
            "checkpoint kind is not rotest",
        )));
    }
    let get_usize = |key: &str| -> Result<usize, ModelError> {
        data.config_value(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ModelError::CheckpointMismatch(format!("bad config key {key}")))
    };
    let get_f64 = |key: &str| -> Result<f64, ModelError> {
        data.config_value(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ModelError::CheckpointMismatch(format!("bad config key {key}")))
    };
    let cfg = RotEstConfig {
        input_dim: get_usize("input_dim")?,
        hidden_dim: get_usize("hidden_dim")?,
        layers: get_usize("layers")?,
        dropout: get_f64("dropout")?,
    };
    let mut store: ParamStore<f32> = ParamStore::new();
    let mut rng = SeedStream::new(0, "init");
    let model = RotationEstimator::init(&mut store, &mut rng, "rotest", cfg)?;
    store.load_values(&data.params)?;
    Ok((cfg, model, store))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTrainConfig {
    pub model: ToyTransformerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub weights: LossWeights,
    pub heldout_fraction: f64,
    /// Epoch at which the learning rate drops by `lr_decay_factor`.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay_factor: f64,
    /// Epochs with the cross-ratio weight held at zero. Early predictions
    /// cluster keypoints, where the cross-ratio's gradients blow up like
    /// 1/spacing and drown every other term; the consistency loss joins
    /// once the layout is roughly organized.
    pub cr_warmup_epochs: usize,
    /// Include the pose term (rotation head + translation decode).
    pub pose_term: bool,
    /// Grid density of the per-class surface clouds in the pose term.
    pub cloud_grid: usize,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            model: ToyTransformerConfig::default(),
            epochs: 25,
            batch_size: 16,
            optimizer: AdamWConfig {
                lr: 1e-3,
                ..AdamWConfig::default()
            },
            weights: LossWeights::default(),
            heldout_fraction: 0.1,
            lr_decay_epoch: None,
            lr_decay_factor: 0.1,
            cr_warmup_epochs: 10,
            pose_term: true,
            cloud_grid: 4,
            seed: 0,
        }
    }
}

/// Held-out set-prediction quality: class accuracy and mean keypoint L1
/// (sum of coordinate errors over a point count) across matched pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetMetrics {
    pub class_accuracy: f64,
    pub keypoint_l1: f64,
    pub matched: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub class_loss: f64,
    pub box_loss: f64,
    pub keypoint_loss: f64,
    pub pose_loss: f64,
    pub heldout: SetMetrics,
}

#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub model: SetPredictor,
    pub store: ParamStore<f32>,
    pub optimizer: OptimizerState<f32>,
    pub log: Vec<ToyEpochLog>,
    pub heldout: SetMetrics,
    pub epochs_done: usize,
    pub shuffle_position: u64,
    pub dropout_position: u64,
}

/// Matched-pair quality of the predictor on samples, eval mode.
pub fn toy_set_metrics(
    model: &SetPredictor,
    store: &ParamStore<f32>,
    samples: &[SyntheticSample],
) -> SetMetrics {
    let mut correct = 0usize;
    let mut matched = 0usize;
    let mut kp_acc = 0.0;
    let k = model.cfg.keypoints.point_count();
    for sample in samples {
        let mut tape: Tape<f32> = Tape::new();
        let params = store.inject(&mut tape);
        let patches = raster_to_patches(&sample.raster, model.cfg.patch_size);
        let p = tape.leaf_f64(model.cfg.tokens(), model.cfg.patch_dim(), &patches);
        let Ok(preds) = model.forward(&mut tape, &params, p, None) else {
            continue;
        };
        let tuples = model.tuples_from_vars(&tape, &preds);
        let Ok(assignment) = match_sets(&tuples, &sample.targets) else {
            continue;
        };
        for (t, &pidx) in assignment.target_to_pred.iter().enumerate() {
            if pidx == usize::MAX {
                continue;
            }
            matched += 1;
            if tuples[pidx].predicted_class() == sample.targets[t].class_id {
                correct += 1;
            }
            let gt = sample.targets[t].geometry.as_ref().unwrap().keypoints.flatten();
            let pr = tuples[pidx].keypoints.flatten();
            let l1: f64 = gt.iter().zip(&pr).map(|(a, b)| (a - b).abs()).sum();
            kp_acc += l1 / k as f64;
        }
    }
    SetMetrics {
        class_accuracy: if matched == 0 {
            0.0
        } else {
            correct as f64 / matched as f64
        },
        keypoint_l1: if matched == 0 { 0.0 } else { kp_acc / matched as f64 },
        matched,
    }
}

/// End-to-end training of the set predictor: forward, bipartite matching on
/// detached values, the Hungarian loss (with the pose term unless
/// disabled), backward, clipped AdamW step.
pub fn train_toy(
    samples: &[SyntheticSample],
    cfg: &ToyTrainConfig,
    resume: Option<&CheckpointData>,
) -> Result<ToyOutcome, ModelError> {
    if samples.len() < 10 {
        return Err(ModelError::InvalidConfig("need at least 10 samples"));
    }
    let n_held = ((samples.len() as f64) * cfg.heldout_fraction) as usize;
    let n_train = samples.len() - n_held;
    let (train_samples, held_samples) = samples.split_at(n_train);

    let mut store: ParamStore<f32> = ParamStore::new();
    let mut init_rng = SeedStream::new(cfg.seed, "init");
    let model = SetPredictor::init(&mut store, &mut init_rng, cfg.model)?;
    let mut optimizer = OptimizerState::new(cfg.optimizer, &store.shapes());
    let mut shuffle = SeedStream::new(cfg.seed, "toy-shuffle");
    let mut dropout = SeedStream::new(cfg.seed, "toy-dropout");
    let mut epoch_offset = 0usize;

    if let Some(data) = resume {
        if data.kind != "toy" {
            return Err(ModelError::CheckpointMismatch(String::from(
                "checkpoint kind is not toy",
            )));
        }
        store.load_values(&data.params)?;
        if let Some(blob) = &data.optimizer {
            restore_optimizer(&mut optimizer, &store, blob)?;
        }
        for (name, pos) in &data.rng_positions {
            match name.as_str() {
                "toy-shuffle" => shuffle.set_position(*pos),
                "toy-dropout" => dropout.set_position(*pos),
                _ => {}
            }
        }
        if let Some(done) = data.config_value("epochs_done") {
            epoch_offset = done.parse().unwrap_or(0);
        }
    }

    let clouds: Vec<PointCloud> = (0..cfg.model.classes)
        .map(|k| class_surface_cloud(k, cfg.cloud_grid))
        .collect();
    let symmetric = vec![false; cfg.model.classes];

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..n_train).collect();

    for epoch in 0..cfg.epochs {
        if Some(epoch_offset + epoch) == cfg.lr_decay_epoch {
            optimizer.cfg.lr *= cfg.lr_decay_factor;
        }
        let epoch_weights = if epoch_offset + epoch < cfg.cr_warmup_epochs {
            LossWeights {
                delta: 0.0,
                ..cfg.weights
            }
        } else {
            cfg.weights
        };
        shuffle.shuffle(&mut indices);
        let mut sums = LossBreakdown {
            class_loss: 0.0,
            box_loss: 0.0,
            keypoint_loss: 0.0,
            pose_loss: 0.0,
            total: 0.0,
        };
        let mut n_samples = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            let mut tape: Tape<f32> = Tape::new();
            let params = store.inject(&mut tape);
            let mut batch_total = tape.scalar(0.0);
            for &i in batch {
                let sample = &train_samples[i];
                let patches = raster_to_patches(&sample.raster, cfg.model.patch_size);
                let p = tape.leaf_f64(cfg.model.tokens(), cfg.model.patch_dim(), &patches);
                let preds = model.forward(&mut tape, &params, p, None)?;
                let tuples = model.tuples_from_vars(&tape, &preds);
                let assignment = match_sets(&tuples, &sample.targets)
                    .map_err(|_| ModelError::InvalidConfig("matching failed"))?;

                let ctx = PoseLossCtx {
                    cam: &sample.cam,
                    models: &clouds,
                    symmetric: &symmetric,
                };
                let lv = if cfg.pose_term {
                    let mut head = |tape: &mut Tape<f32>,
                                    kp_row: Var|
                     -> Result<Var, LossError> {
                        let r6 = model
                            .rotation_head
                            .forward(tape, &params, kp_row, true, &mut dropout)
                            .map_err(loss_error)?;
                        rot6d_to_matrix_vars(tape, r6)
                    };
                    match hungarian_loss(
                        &mut tape,
                        &preds,
                        &sample.targets,
                        &assignment,
                        &epoch_weights,
                        Some((&ctx, &mut head)),
                    ) {
                        Ok(lv) => lv,
                        // a degenerate 6D code mid-training drops the pose
                        // term for this sample rather than the whole run
                        Err(LossError::DegenerateInput(_)) => hungarian_loss(
                            &mut tape,
                            &preds,
                            &sample.targets,
                            &assignment,
                            &epoch_weights,
                            None,
                        )?,
                        Err(e) => return Err(ModelError::Loss(e)),
                    }
                } else {
                    hungarian_loss(
                        &mut tape,
                        &preds,
                        &sample.targets,
                        &assignment,
                        &epoch_weights,
                        None,
                    )?
                };
                let b = lv.snapshot(&tape);
                sums.class_loss += b.class_loss;
                sums.box_loss += b.box_loss;
                sums.keypoint_loss += b.keypoint_loss;
                sums.pose_loss += b.pose_loss;
                sums.total += b.total;
                n_samples += 1;
                batch_total = tape.add(batch_total, lv.total)?;
            }
            let batch_loss = tape.scale(batch_total, 1.0 / batch.len() as f64);
            let grads = tape.backward(batch_loss)?;
            let grad_list = store.collect_grads(&grads, &params);
            let mut tensors = store.tensors_mut();
            let mut slices: Vec<Tensor<f32>> = tensors.iter().map(|t| (**t).clone()).collect();
            optimizer.clip_and_step(&mut slices, &grad_list);
            for (dst, src) in tensors.iter_mut().zip(slices) {
                **dst = src;
            }
        }
        let inv = 1.0 / n_samples.max(1) as f64;
        let heldout = toy_set_metrics(&model, &store, held_samples);
        log.push(ToyEpochLog {
            epoch: epoch_offset + epoch,
            train_loss: sums.total * inv,
            class_loss: sums.class_loss * inv,
            box_loss: sums.box_loss * inv,
            keypoint_loss: sums.keypoint_loss * inv,
            pose_loss: sums.pose_loss * inv,
            heldout,
        });
    }

    let heldout = toy_set_metrics(&model, &store, held_samples);
    Ok(ToyOutcome {
        model,
        store,
        optimizer,
        log,
        heldout,
        epochs_done: epoch_offset + cfg.epochs,
        shuffle_position: shuffle.position(),
        dropout_position: dropout.position(),
    })
}

/// Packs a set-predictor training outcome into checkpoint form.
pub fn toy_checkpoint(outcome: &ToyOutcome, cfg: &ToyTrainConfig) -> CheckpointData {
    let m = &cfg.model;
    let mut config = vec![
        (String::from("raster_size"), format!("{}", m.raster_size)),
        (String::from("patch_size"), format!("{}", m.patch_size)),
        (String::from("embed_dim"), format!("{}", m.embed_dim)),
        (String::from("encoder_layers"), format!("{}", m.encoder_layers)),
        (String::from("decoder_layers"), format!("{}", m.decoder_layers)),
        (String::from("heads"), format!("{}", m.heads)),
        (String::from("queries"), format!("{}", m.queries)),
        (String::from("classes"), format!("{}", m.classes)),
        (String::from("head_hidden"), format!("{}", m.head_hidden)),
        (String::from("ffn_dim"), format!("{}", m.ffn_dim)),
        (String::from("keypoints"), String::from(m.keypoints.as_str())),
        (String::from("rotest_hidden"), format!("{}", m.rotest.hidden_dim)),
        (String::from("rotest_layers"), format!("{}", m.rotest.layers)),
        (String::from("rotest_dropout"), format!("{}", m.rotest.dropout)),
        (String::from("lr"), format!("{}", cfg.optimizer.lr)),
        (String::from("batch_size"), format!("{}", cfg.batch_size)),
        (String::from("seed"), format!("{}", cfg.seed)),
        (String::from("epochs_done"), format!("{}", outcome.epochs_done)),
    ];
    config.sort();
    CheckpointData {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: String::from("toy"),
        config,
        params: outcome
            .store
            .entries()
            .map(|(n, t)| (String::from(n), t.shape(), t.to_f64_vec()))
            .collect(),
        optimizer: Some(moments_blob(&outcome.store, &outcome.optimizer)),
        rng_positions: vec![
            (String::from("toy-shuffle"), outcome.shuffle_position),
            (String::from("toy-dropout"), outcome.dropout_position),
        ],
    }
}

/// Rebuilds a set predictor (and its store) from a checkpoint.
pub fn toy_from_checkpoint(
    data: &CheckpointData,
) -> Result<(ToyTransformerConfig, SetPredictor, ParamStore<f32>), ModelError> {
    if data.kind != "toy" {
        return Err(ModelError::CheckpointMismatch(String::from(
            "checkpoint kind is not toy",
        )));
    }
    let get_usize = |key: &str| -> Result<usize, ModelError> {
        data.config_value(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ModelError::CheckpointMismatch(format!("bad config key {key}")))
    };
    let get_f64 = |key: &str| -> Result<f64, ModelError> {
        data.config_value(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ModelError::CheckpointMismatch(format!("bad config key {key}")))
    };
    let keypoints = data
        .config_value("keypoints")
        .and_then(KeypointKind::parse)
        .ok_or_else(|| ModelError::CheckpointMismatch(String::from("bad keypoint kind")))?;
    let cfg = ToyTransformerConfig {
        raster_size: get_usize("raster_size")?,
        patch_size: get_usize("patch_size")?,
        embed_dim: get_usize("embed_dim")?,
        encoder_layers: get_usize("encoder_layers")?,
        decoder_layers: get_usize("decoder_layers")?,
        heads: get_usize("heads")?,
        queries: get_usize("queries")?,
        classes: get_usize("classes")?,
        head_hidden: get_usize("head_hidden")?,
        ffn_dim: get_usize("ffn_dim")?,
        keypoints,
        rotest: RotEstConfig {
            input_dim: keypoints.point_count() * 2,
            hidden_dim: get_usize("rotest_hidden")?,
            layers: get_usize("rotest_layers")?,
            dropout: get_f64("rotest_dropout")?,
        },
    };
    let mut store: ParamStore<f32> = ParamStore::new();
    let mut rng = SeedStream::new(0, "init");
    let model = SetPredictor::init(&mut store, &mut rng, cfg)?;
    store.load_values(&data.params)?;
    Ok((cfg, model, store))
}
