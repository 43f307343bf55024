//! `train-rotest`: supervised training of the keypoint-to-rotation module
//! on synthetic keypoint/rotation pairs, either derived from a dataset
//! directory or generated in memory.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pose6d::autodiff::AdamWConfig;
use pose6d::models::train::{
    rotest_checkpoint, train_rotest, RotationLossKind, RotestTrainConfig,
};
use pose6d::models::RotEstConfig;
use pose6d::synth::{generate_rotation_pairs, RotationPair, RotationPairConfig};

use crate::run_config::{self, KvConfig};
use crate::{checkpoint_io, config_entries, dataset};

#[derive(Debug, Args)]
pub struct TrainRotestArgs {
    /// Dataset directory; pairs derive from its annotated objects. When
    /// absent, pairs are generated in memory (see --pairs).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of in-memory pairs when no dataset is given.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Gaussian pixel noise on the generated keypoints.
    #[arg(long)]
    pub noise_px: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden width of the fully connected layers.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Dropout probability after each hidden activation.
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training objective.
    #[arg(long, value_parser = ["rot", "l1"])]
    pub loss: Option<String>,
    /// Epoch at which the learning rate decays by 10×.
    #[arg(long)]
    pub decay_epoch: Option<usize>,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Keypoint/rotation pairs from a dataset's annotated objects: exact
/// projections of each object's interpolated box, plus pixel noise.
fn pairs_from_dataset(
    root: &std::path::Path,
    noise_px: f64,
    seed: u64,
) -> anyhow::Result<Vec<RotationPair>> {
    use pose6d::geometry::{generate_ibb, matrix_to_rot6d, project_keypoints};
    let (_, samples) = dataset::load_dataset(root)?;
    let mut noise = pose6d::rng::SeedStream::new(seed, "pair-noise");
    let mut out = Vec::new();
    for sample in &samples {
        for t in &sample.targets {
            let g = t.geometry.as_ref().expect("real target");
            let cuboid = pose6d::synth::class_cuboid(t.class_id);
            let set = generate_ibb(&cuboid);
            let Ok(px) = project_keypoints(&set, &g.pose, &sample.cam) else {
                continue;
            };
            let mut input = Vec::with_capacity(64);
            for p in px.points() {
                input.push((p[0] + noise_px * noise.normal()) / sample.cam.width);
                input.push((p[1] + noise_px * noise.normal()) / sample.cam.height);
            }
            out.push(RotationPair {
                input,
                target_r6: matrix_to_rot6d(&g.pose.rotation).v,
                rotation: g.pose.rotation,
            });
        }
    }
    Ok(out)
}

pub fn run(args: TrainRotestArgs) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(p) => KvConfig::load(p).context("reading config file")?,
        None => KvConfig::default(),
    };
    let seed = run_config::resolve(args.seed, &file, "seed", 0u64);
    let noise_px = run_config::resolve(args.noise_px, &file, "noise_px", 1.0);
    let n_pairs = run_config::resolve(args.pairs, &file, "pairs", 20_000usize);
    let loss = args
        .loss
        .or_else(|| file.get("loss"))
        .and_then(|s| RotationLossKind::parse(&s))
        .unwrap_or(RotationLossKind::PointDisplacement);

    let cfg = RotestTrainConfig {
        model: RotEstConfig {
            hidden_dim: run_config::resolve(args.hidden, &file, "hidden", 128),
            dropout: run_config::resolve(args.dropout, &file, "dropout", 0.5),
            ..RotEstConfig::default()
        },
        epochs: run_config::resolve(args.epochs, &file, "epochs", 40),
        batch_size: run_config::resolve(args.batch_size, &file, "batch_size", 64),
        optimizer: AdamWConfig {
            lr: run_config::resolve(args.lr, &file, "lr", 2e-4),
            ..AdamWConfig::default()
        },
        loss,
        heldout_fraction: 0.1,
        lr_decay_epoch: args.decay_epoch.or_else(|| file.get("decay_epoch")),
        lr_decay_factor: 0.1,
        seed,
    };

    let pairs = match &args.data {
        Some(root) => pairs_from_dataset(root, noise_px, seed)?,
        None => generate_rotation_pairs(
            seed,
            n_pairs,
            &RotationPairConfig {
                noise_px,
                ..RotationPairConfig::default()
            },
        ),
    };
    anyhow::ensure!(pairs.len() >= 10, "dataset yields too few pairs");

    let resume = match &args.resume {
        Some(path) => Some(checkpoint_io::read_checkpoint(path)?),
        None => None,
    };
    let out_dir = run_config::out_dir(args.out, "train-rotest");
    std::fs::create_dir_all(&out_dir)?;

    let outcome = train_rotest(&pairs, &cfg, resume.as_ref())
        .map_err(|e| anyhow::anyhow!("training failed: {e}"))?;

    let ckpt = rotest_checkpoint(&outcome, &cfg);
    checkpoint_io::write_checkpoint(&out_dir.join("rotest.ckpt"), &ckpt)?;
    let mut log_csv = String::from("epoch,train_loss,heldout_median_deg\n");
    for e in &outcome.log {
        log_csv.push_str(&format!(
            "{},{:.6},{:.4}\n",
            e.epoch,
            e.train_loss,
            e.heldout_median.to_degrees()
        ));
    }
    crate::write_atomic(&out_dir.join("metrics.csv"), log_csv.as_bytes())?;
    run_config::echo_config(
        &out_dir,
        &config_entries![
            "command" => "train-rotest",
            "seed" => seed,
            "pairs" => pairs.len(),
            "noise_px" => noise_px,
            "hidden" => cfg.model.hidden_dim,
            "dropout" => cfg.model.dropout,
            "epochs" => cfg.epochs,
            "batch_size" => cfg.batch_size,
            "lr" => cfg.optimizer.lr,
            "loss" => cfg.loss.as_str(),
            "decay_epoch" => cfg.lr_decay_epoch.map(|e| e.to_string()).unwrap_or_else(|| "none".into()),
        ],
    )?;
    println!(
        "trained {} epochs; held-out median rotation error {:.3} deg; checkpoint at {}",
        cfg.epochs,
        outcome.heldout_median.to_degrees(),
        out_dir.join("rotest.ckpt").display()
    );
    Ok(())
}
