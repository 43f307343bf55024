//! `eval`: score a results CSV against dataset groundtruth and emit the
//! per-class metric report (CSV, JSON, SVG).

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pose6d::geometry::{fps_sample, PointCloud};
use pose6d::metrics::{evaluate, EvalRecord};

use crate::run_config::{self};
use crate::{bop, config_entries, dataset, ply, report_io, results_io};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Results CSV to score.
    #[arg(long)]
    pub results: PathBuf,
    /// Dataset directory carrying the groundtruth annotations.
    #[arg(long)]
    pub gt: PathBuf,
    /// Models directory (PLY + models_info.json); defaults to `<gt>/models`.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Plain-text file with one symmetric class id per line.
    #[arg(long)]
    pub sym_list: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const METRIC_SUBSAMPLE: usize = 1500;

pub fn load_sym_list(path: &std::path::Path) -> anyhow::Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let id: usize = line
            .parse()
            .with_context(|| format!("{}:{}: bad class id", path.display(), idx + 1))?;
        out.push(id);
    }
    Ok(out)
}

pub fn run(args: EvalArgs) -> anyhow::Result<()> {
    let records = results_io::read_results(&args.results)
        .with_context(|| format!("reading {}", args.results.display()))?;
    let annotations = dataset::load_annotations(&args.gt)
        .with_context(|| format!("loading groundtruth {}", args.gt.display()))?;
    let models_dir = args.models.clone().unwrap_or_else(|| args.gt.join("models"));
    let infos = bop::load_models_info(&models_dir.join("models_info.json"))?;
    let symmetric = match &args.sym_list {
        Some(p) => load_sym_list(p)?,
        None => Vec::new(),
    };

    // model clouds subsampled to the metric budget
    let max_class = infos.iter().map(|i| i.class_id).max().unwrap_or(0);
    let mut clouds: Vec<Option<PointCloud>> = vec![None; max_class + 1];
    for info in &infos {
        let path = models_dir.join(format!("obj_{:06}.ply", info.class_id + 1));
        let cloud = ply::load_ply(&path, true)?;
        let cloud = if cloud.len() > METRIC_SUBSAMPLE {
            fps_sample(&cloud, METRIC_SUBSAMPLE, 0).map_err(|e| anyhow::anyhow!("{e}"))?
        } else {
            cloud
        };
        clouds[info.class_id] = Some(cloud);
    }
    let cloud_list: Vec<PointCloud> = clouds
        .iter()
        .map(|c| {
            c.clone().unwrap_or_else(|| {
                PointCloud::new(vec![pose6d::linalg::Vec3::ZERO]).expect("non-empty")
            })
        })
        .collect();

    let mut eval_records = Vec::new();
    for r in &records {
        let class_id = (r.obj_id - 1) as usize;
        let Some(ann) = annotations
            .iter()
            .find(|a| a.scene_id == r.scene_id && a.image_id == r.image_id)
        else {
            anyhow::bail!(
                "no groundtruth for scene {} image {}",
                r.scene_id,
                r.image_id
            );
        };
        let Some(obj) = ann.objects.iter().find(|o| o.class_id == class_id) else {
            anyhow::bail!(
                "no groundtruth object of class {class_id} in scene {} image {}",
                r.scene_id,
                r.image_id
            );
        };
        let Some(info) = infos.iter().find(|i| i.class_id == class_id) else {
            anyhow::bail!("unknown class {class_id}: no model info");
        };
        eval_records.push(EvalRecord {
            scene_id: r.scene_id,
            image_id: r.image_id,
            class_id,
            estimate: r.pose,
            score: r.score,
            groundtruth: obj.pose,
            model: class_id,
            diameter: info.diameter_m,
        });
    }

    let report = evaluate(&eval_records, &cloud_list, &symmetric)
        .map_err(|e| anyhow::anyhow!("evaluation failed: {e}"))?;
    let out_dir = run_config::out_dir(args.out, "eval");
    std::fs::create_dir_all(&out_dir)?;
    report_io::write_report(&out_dir, &report)?;
    run_config::echo_config(
        &out_dir,
        &config_entries![
            "command" => "eval",
            "results" => args.results.display(),
            "gt" => args.gt.display(),
            "records" => eval_records.len(),
            "symmetric_classes" => format!("{symmetric:?}"),
        ],
    )?;
    println!(
        "scored {} records: mean AUC(ADD) {:.4}, AUC(ADD-S) {:.4}, AUC(ADD(-S)) {:.4}, AR@0.1d {:.4}",
        eval_records.len(),
        report.mean.auc_add,
        report.mean.auc_adds,
        report.mean.auc_add_s,
        report.mean.ar_01d
    );
    println!("report written to {}", out_dir.display());
    Ok(())
}
