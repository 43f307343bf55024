//! `dump-attention`: run one dataset sample through a trained set predictor
//! and export the encoder self-attention and decoder cross-attention maps
//! as CSV (one row per query position, row-stochastic weights).

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pose6d::autodiff::Tape;
use pose6d::models::train::toy_from_checkpoint;
use pose6d::models::{raster_to_patches, AttentionMap, AttentionStage};

use crate::run_config::{self};
use crate::{checkpoint_io, config_entries, dataset};

#[derive(Debug, Args)]
pub struct DumpAttentionArgs {
    /// Trained set-predictor checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory to take the sample from.
    #[arg(long)]
    pub data: PathBuf,
    /// Image index of the sample.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn maps_to_csv(maps: &[AttentionMap], stage: AttentionStage) -> String {
    let mut out = String::from("stage,layer,head,row,weights\n");
    for m in maps.iter().filter(|m| m.stage == stage) {
        for r in 0..m.rows {
            let ws: Vec<String> = m.weights[r * m.cols..(r + 1) * m.cols]
                .iter()
                .map(|w| format!("{w:.6e}"))
                .collect();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.stage.as_str(),
                m.layer,
                m.head,
                r,
                ws.join(" ")
            ));
        }
    }
    out
}

pub fn run(args: DumpAttentionArgs) -> anyhow::Result<()> {
    let ckpt = checkpoint_io::read_checkpoint(&args.checkpoint)
        .with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let (cfg, model, store) =
        toy_from_checkpoint(&ckpt).map_err(|e| anyhow::anyhow!("loading model: {e}"))?;
    let (_, samples) = dataset::load_dataset(&args.data)?;
    let sample = samples
        .get(args.sample)
        .ok_or_else(|| anyhow::anyhow!("sample {} out of range", args.sample))?;

    let mut tape: Tape<f32> = Tape::new();
    let params = store.inject(&mut tape);
    let patches = raster_to_patches(&sample.raster, cfg.patch_size);
    let p = tape.leaf_f64(cfg.tokens(), cfg.patch_dim(), &patches);
    let mut maps = Vec::new();
    let _ = model
        .forward(&mut tape, &params, p, Some(&mut maps))
        .map_err(|e| anyhow::anyhow!("forward failed: {e}"))?;

    let out_dir = run_config::out_dir(args.out, "dump-attention");
    std::fs::create_dir_all(&out_dir)?;
    crate::write_atomic(
        &out_dir.join("encoder_self_attention.csv"),
        maps_to_csv(&maps, AttentionStage::EncoderSelf).as_bytes(),
    )?;
    crate::write_atomic(
        &out_dir.join("decoder_cross_attention.csv"),
        maps_to_csv(&maps, AttentionStage::DecoderCross).as_bytes(),
    )?;
    run_config::echo_config(
        &out_dir,
        &config_entries![
            "command" => "dump-attention",
            "checkpoint" => args.checkpoint.display(),
            "data" => args.data.display(),
            "sample" => args.sample,
        ],
    )?;
    println!(
        "exported {} attention maps to {}",
        maps.len(),
        out_dir.display()
    );
    Ok(())
}
