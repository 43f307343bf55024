//! `gen-data`: write a synthetic dataset in the BOP-layout directory.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pose6d::synth::SceneConfig;

use crate::run_config::{self, KvConfig};
use crate::{config_entries, dataset};

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Root seed for the dataset.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of images to generate.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum object count per image.
    #[arg(long)]
    pub max_objects: Option<usize>,
    /// Number of object classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Square raster edge in pixels.
    #[arg(long)]
    pub raster_size: Option<usize>,
    /// Synthetic camera focal length in pixels.
    #[arg(long)]
    pub focal: Option<f64>,
    /// Optional key=value config file; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: GenDataArgs) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(p) => KvConfig::load(p).context("reading config file")?,
        None => KvConfig::default(),
    };
    let seed = run_config::resolve(args.seed, &file, "seed", 0u64);
    let samples = run_config::resolve(args.samples, &file, "samples", 100usize);
    let cfg = SceneConfig {
        classes: run_config::resolve(args.classes, &file, "classes", 5),
        max_objects: run_config::resolve(args.max_objects, &file, "max_objects", 3),
        raster_size: run_config::resolve(args.raster_size, &file, "raster_size", 32),
        focal: run_config::resolve(args.focal, &file, "focal", 35.0),
        z_range: SceneConfig::default().z_range,
    };
    let out = run_config::out_dir(args.out, "gen-data");

    let written = dataset::write_dataset(&out, seed, samples, &cfg)
        .with_context(|| format!("writing dataset to {}", out.display()))?;
    run_config::echo_config(
        &out,
        &config_entries![
            "command" => "gen-data",
            "seed" => seed,
            "samples" => samples,
            "classes" => cfg.classes,
            "max_objects" => cfg.max_objects,
            "raster_size" => cfg.raster_size,
            "focal" => cfg.focal,
        ],
    )?;
    let objects: usize = written.iter().map(|s| s.targets.len()).sum();
    println!(
        "wrote {samples} samples ({objects} objects) to {}",
        out.display()
    );
    Ok(())
}
