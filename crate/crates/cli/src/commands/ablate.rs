//! `ablate`: the keypoint-representation × pose-recovery grid on synthetic
//! data, emitting a table-shaped CSV (one row per method).

use std::path::PathBuf;

use clap::Args;
use pose6d::ablation::{ablation_csv, run_ablation, AblationConfig};
use pose6d::autodiff::AdamWConfig;
use pose6d::models::train::RotestTrainConfig;
use pose6d::models::RotEstConfig;

use crate::run_config::{self};
use crate::config_entries;

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of evaluation seeds.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Pose trials per seed.
    #[arg(long, default_value_t = 300)]
    pub trials: usize,
    /// Gaussian pixel noise on every projected keypoint.
    #[arg(long, default_value_t = 3.0)]
    pub noise_px: f64,
    /// Training epochs of the learned rotation module.
    #[arg(long, default_value_t = 30)]
    pub rotest_epochs: usize,
    /// Training pairs of the learned rotation module.
    #[arg(long, default_value_t = 20000)]
    pub rotest_pairs: usize,
}

pub fn ablation_config(args: &AblateArgs) -> AblationConfig {
    AblationConfig {
        seeds: (1..=args.seeds as u64).collect(),
        trials_per_seed: args.trials,
        noise_px: args.noise_px,
        rotest_pairs: args.rotest_pairs,
        rotest: RotestTrainConfig {
            model: RotEstConfig {
                dropout: 0.1,
                ..RotEstConfig::default()
            },
            epochs: args.rotest_epochs,
            optimizer: AdamWConfig {
                lr: 1e-3,
                ..AdamWConfig::default()
            },
            lr_decay_epoch: Some(args.rotest_epochs * 3 / 4),
            seed: 9000,
            ..RotestTrainConfig::default()
        },
        ..AblationConfig::default()
    }
}

pub fn run(args: AblateArgs) -> anyhow::Result<()> {
    let cfg = ablation_config(&args);
    let out_dir = run_config::out_dir(args.out.clone(), "ablate");
    std::fs::create_dir_all(&out_dir)?;

    let outcome = run_ablation(&cfg).map_err(|e| anyhow::anyhow!("ablation failed: {e}"))?;
    let csv = ablation_csv(&outcome);
    crate::write_atomic(&out_dir.join("ablation.csv"), csv.as_bytes())?;

    // per-seed detail for reproducibility checks
    let mut detail = String::from(
        "seed,method,auc_add_s,ar_add_s_0.1d,median_rotation_deg,median_translation_m,failures\n",
    );
    for m in &outcome.per_seed {
        detail.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.6},{}\n",
            m.seed,
            m.method.label(),
            m.auc_add_s,
            m.ar_01d,
            m.median_rotation_deg,
            m.median_translation_m,
            m.failures
        ));
    }
    crate::write_atomic(&out_dir.join("ablation_per_seed.csv"), detail.as_bytes())?;

    run_config::echo_config(
        &out_dir,
        &config_entries![
            "command" => "ablate",
            "seeds" => args.seeds,
            "trials" => args.trials,
            "noise_px" => args.noise_px,
            "trans_noise_px" => cfg.trans_noise_px,
            "trans_noise_z_frac" => cfg.trans_noise_z_frac,
            "rotest_epochs" => args.rotest_epochs,
            "rotest_pairs" => args.rotest_pairs,
            "rotest_heldout_median_deg" => format!("{:.3}", outcome.rotest_heldout_median_deg),
        ],
    )?;
    print!("{csv}");
    println!("written to {}", out_dir.join("ablation.csv").display());
    Ok(())
}
