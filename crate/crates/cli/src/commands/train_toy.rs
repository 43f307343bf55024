//! `train-toy`: end-to-end training of the set predictor on a synthetic
//! dataset directory.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pose6d::autodiff::AdamWConfig;
use pose6d::models::train::{toy_checkpoint, train_toy, ToyTrainConfig};
use pose6d::models::{RotEstConfig, ToyTransformerConfig};

use crate::run_config::{self, KvConfig};
use crate::{checkpoint_io, config_entries, dataset};

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Dataset directory from gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Embedding width of the encoder/decoder.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Hidden width of the prediction heads.
    #[arg(long)]
    pub head_hidden: Option<usize>,
    /// Set cardinality (object queries).
    #[arg(long)]
    pub queries: Option<usize>,
    /// Epoch at which the learning rate decays by 10×.
    #[arg(long)]
    pub decay_epoch: Option<usize>,
    /// Drop the pose term from the objective.
    #[arg(long)]
    pub no_pose_term: bool,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: TrainToyArgs) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(p) => KvConfig::load(p).context("reading config file")?,
        None => KvConfig::default(),
    };
    let (manifest, samples) = dataset::load_dataset(&args.data)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    let seed = run_config::resolve(args.seed, &file, "seed", 0u64);

    let model = ToyTransformerConfig {
        raster_size: manifest.raster_size,
        classes: manifest.classes,
        embed_dim: run_config::resolve(args.embed_dim, &file, "embed_dim", 64),
        head_hidden: run_config::resolve(args.head_hidden, &file, "head_hidden", 64),
        queries: run_config::resolve(args.queries, &file, "queries", 20),
        rotest: RotEstConfig {
            dropout: 0.0,
            ..RotEstConfig::default()
        },
        ..ToyTransformerConfig::default()
    };
    let cfg = ToyTrainConfig {
        model,
        epochs: run_config::resolve(args.epochs, &file, "epochs", 60),
        batch_size: run_config::resolve(args.batch_size, &file, "batch_size", 16),
        optimizer: AdamWConfig {
            lr: run_config::resolve(args.lr, &file, "lr", 2e-4),
            ..AdamWConfig::default()
        },
        lr_decay_epoch: args.decay_epoch.or_else(|| file.get("decay_epoch")),
        pose_term: !args.no_pose_term,
        seed,
        ..ToyTrainConfig::default()
    };

    let resume = match &args.resume {
        Some(path) => Some(checkpoint_io::read_checkpoint(path)?),
        None => None,
    };
    let out_dir = run_config::out_dir(args.out, "train-toy");
    std::fs::create_dir_all(&out_dir)?;

    let outcome = train_toy(&samples, &cfg, resume.as_ref())
        .map_err(|e| anyhow::anyhow!("training failed: {e}"))?;

    let ckpt = toy_checkpoint(&outcome, &cfg);
    checkpoint_io::write_checkpoint(&out_dir.join("toy.ckpt"), &ckpt)?;
    let mut log_csv = String::from(
        "epoch,train_loss,class_loss,box_loss,keypoint_loss,pose_loss,heldout_class_acc,heldout_keypoint_l1\n",
    );
    for e in &outcome.log {
        log_csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.5}\n",
            e.epoch,
            e.train_loss,
            e.class_loss,
            e.box_loss,
            e.keypoint_loss,
            e.pose_loss,
            e.heldout.class_accuracy,
            e.heldout.keypoint_l1
        ));
    }
    crate::write_atomic(&out_dir.join("metrics.csv"), log_csv.as_bytes())?;
    run_config::echo_config(
        &out_dir,
        &config_entries![
            "command" => "train-toy",
            "data" => args.data.display(),
            "seed" => seed,
            "epochs" => cfg.epochs,
            "batch_size" => cfg.batch_size,
            "lr" => cfg.optimizer.lr,
            "embed_dim" => cfg.model.embed_dim,
            "head_hidden" => cfg.model.head_hidden,
            "queries" => cfg.model.queries,
            "pose_term" => cfg.pose_term,
            "decay_epoch" => cfg.lr_decay_epoch.map(|e| e.to_string()).unwrap_or_else(|| "none".into()),
        ],
    )?;
    println!(
        "trained {} epochs; held-out class accuracy {:.3}, keypoint L1 {:.4}; checkpoint at {}",
        cfg.epochs,
        outcome.heldout.class_accuracy,
        outcome.heldout.keypoint_l1,
        out_dir.join("toy.ckpt").display()
    );
    Ok(())
}
