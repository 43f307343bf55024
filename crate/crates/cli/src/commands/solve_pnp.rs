//! `solve-pnp`: recover poses from 2D keypoints and the per-class 3D
//! keypoint model. Keypoints come from a CSV file, or are derived from the
//! dataset groundtruth with optional pixel noise (writing the derived file
//! alongside the results for inspection).

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use pose6d::geometry::{
    fps_sample, generate_bb8, generate_ibb, project_keypoints, Cuboid, KeypointKind,
    KeypointSet3D,
};
use pose6d::linalg::Vec3;
use pose6d::pnp::{epnp, ransac_pnp, Correspondences, RansacConfig};
use pose6d::rng::SeedStream;

use crate::run_config::{self};
use crate::{bop, config_entries, dataset, results_io, IoFormatError};

#[derive(Debug, Args)]
pub struct SolvePnpArgs {
    /// Keypoint CSV (`scene_id,im_id,obj_id,points` with space-separated
    /// u v pixel pairs). When absent, keypoints derive from --gt.
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// Keypoint representation.
    #[arg(long, value_parser = ["bb8", "fps8", "ibb32"], default_value = "ibb32")]
    pub variant: String,
    /// Pose recovery method.
    #[arg(long, value_parser = ["epnp", "ransac"], default_value = "ransac")]
    pub method: String,
    /// Dataset directory with groundtruth + cameras.
    #[arg(long)]
    pub gt: PathBuf,
    /// Gaussian pixel noise when deriving keypoints from groundtruth.
    #[arg(long, default_value_t = 0.0)]
    pub noise_px: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RANSAC iteration count.
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    /// RANSAC inlier threshold in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub threshold_px: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const KEYPOINTS_HEADER: &str = "scene_id,im_id,obj_id,points";

#[derive(Debug, Clone)]
pub struct KeypointRow {
    pub scene_id: u32,
    pub image_id: u32,
    pub obj_id: u32,
    pub points: Vec<[f64; 2]>,
}

pub fn write_keypoints(path: &Path, rows: &[KeypointRow]) -> Result<(), IoFormatError> {
    let mut out = String::from(KEYPOINTS_HEADER);
    out.push('\n');
    for row in rows {
        let pts: Vec<String> = row
            .points
            .iter()
            .map(|p| format!("{} {}", p[0], p[1]))
            .collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.scene_id,
            row.image_id,
            row.obj_id,
            pts.join(" ")
        ));
    }
    crate::write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn read_keypoints(path: &Path) -> Result<Vec<KeypointRow>, IoFormatError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(IoFormatError::parse(path, 1, "empty keypoints file"));
    };
    if header.trim() != KEYPOINTS_HEADER {
        return Err(IoFormatError::parse(path, 1, format!("bad header: {header}")));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, ',').collect();
        if fields.len() != 4 {
            return Err(IoFormatError::parse(path, line_no, "expected 4 fields"));
        }
        let vals: Vec<f64> = fields[3]
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| IoFormatError::parse(path, line_no, "bad coordinate"))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() % 2 != 0 || vals.is_empty() {
            return Err(IoFormatError::parse(path, line_no, "odd coordinate count"));
        }
        out.push(KeypointRow {
            scene_id: fields[0].trim().parse().map_err(|_| {
                IoFormatError::parse(path, line_no, "bad scene id")
            })?,
            image_id: fields[1].trim().parse().map_err(|_| {
                IoFormatError::parse(path, line_no, "bad image id")
            })?,
            obj_id: fields[2].trim().parse().map_err(|_| {
                IoFormatError::parse(path, line_no, "bad object id")
            })?,
            points: vals.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        });
    }
    Ok(out)
}

/// The per-class 3D keypoint model for a representation, from the model
/// cloud and its bounding cuboid.
pub fn model_keypoints(
    kind: KeypointKind,
    cloud: &pose6d::geometry::PointCloud,
) -> anyhow::Result<KeypointSet3D> {
    let mut min = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut max = Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in cloud.points() {
        min = Vec3::new(min.x.min(p.x), min.y.min(p.y), min.z.min(p.z));
        max = Vec3::new(max.x.max(p.x), max.y.max(p.y), max.z.max(p.z));
    }
    let cuboid = Cuboid::new(
        (min + max) * 0.5,
        Vec3::new(
            ((max.x - min.x) / 2.0).max(1e-6),
            ((max.y - min.y) / 2.0).max(1e-6),
            ((max.z - min.z) / 2.0).max(1e-6),
        ),
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(match kind {
        KeypointKind::Bb8 => generate_bb8(&cuboid),
        KeypointKind::Ibb32 => generate_ibb(&cuboid),
        KeypointKind::Fps8 => {
            let sampled = fps_sample(cloud, 8, 0).map_err(|e| anyhow::anyhow!("{e}"))?;
            KeypointSet3D::from_parts(KeypointKind::Fps8, sampled.points().to_vec(), vec![])
        }
    })
}

pub fn run(args: SolvePnpArgs) -> anyhow::Result<()> {
    let kind = KeypointKind::parse(&args.variant).expect("clap validated");
    let annotations = dataset::load_annotations(&args.gt)
        .with_context(|| format!("loading groundtruth {}", args.gt.display()))?;
    let models_dir = args.gt.join("models");
    let infos = bop::load_models_info(&models_dir.join("models_info.json"))?;
    let out_dir = run_config::out_dir(args.out, "solve-pnp");
    std::fs::create_dir_all(&out_dir)?;

    // 3D keypoint model per class
    let mut keypoint_models: Vec<Option<KeypointSet3D>> = Vec::new();
    for info in &infos {
        let path = models_dir.join(format!("obj_{:06}.ply", info.class_id + 1));
        let cloud = crate::ply::load_ply(&path, true)?;
        while keypoint_models.len() <= info.class_id {
            keypoint_models.push(None);
        }
        keypoint_models[info.class_id] = Some(model_keypoints(kind, &cloud)?);
    }

    // observed keypoints: from file, or derived from groundtruth + noise
    let rows: Vec<KeypointRow> = match &args.keypoints {
        Some(path) => read_keypoints(path)?,
        None => {
            let mut noise = SeedStream::new(args.seed, "solve-pnp-noise");
            let mut rows = Vec::new();
            for ann in &annotations {
                for obj in &ann.objects {
                    let Some(Some(set)) = keypoint_models.get(obj.class_id) else {
                        continue;
                    };
                    let Ok(px) = project_keypoints(set, &obj.pose, &ann.cam) else {
                        continue;
                    };
                    rows.push(KeypointRow {
                        scene_id: ann.scene_id,
                        image_id: ann.image_id,
                        obj_id: (obj.class_id + 1) as u32,
                        points: px
                            .points()
                            .iter()
                            .map(|p| {
                                [
                                    p[0] + args.noise_px * noise.normal(),
                                    p[1] + args.noise_px * noise.normal(),
                                ]
                            })
                            .collect(),
                    });
                }
            }
            write_keypoints(&out_dir.join("keypoints.csv"), &rows)?;
            rows
        }
    };

    let mut results = Vec::new();
    let mut failures = 0usize;
    for (row_idx, row) in rows.iter().enumerate() {
        let class_id = (row.obj_id - 1) as usize;
        let Some(Some(set)) = keypoint_models.get(class_id) else {
            anyhow::bail!("no model for class {class_id}");
        };
        if row.points.len() != set.points().len() {
            anyhow::bail!(
                "row {}: {} keypoints given, variant {} expects {}",
                row_idx + 2,
                row.points.len(),
                args.variant,
                set.points().len()
            );
        }
        let Some(ann) = annotations
            .iter()
            .find(|a| a.scene_id == row.scene_id && a.image_id == row.image_id)
        else {
            anyhow::bail!("no camera for scene {} image {}", row.scene_id, row.image_id);
        };
        let corr = Correspondences::new(set.points().to_vec(), row.points.clone())
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let solved = match args.method.as_str() {
            "epnp" => epnp(&corr, &ann.cam),
            _ => {
                let cfg = RansacConfig {
                    iterations: args.iterations,
                    threshold_px: args.threshold_px,
                    seed: args.seed ^ ((row_idx as u64) << 16),
                };
                ransac_pnp(&corr, &ann.cam, &cfg).map(|(p, _)| p)
            }
        };
        match solved {
            Ok(pose) => results.push(results_io::ResultRecord {
                scene_id: row.scene_id,
                image_id: row.image_id,
                obj_id: row.obj_id,
                score: 1.0,
                pose,
                time_s: -1.0,
            }),
            Err(_) => failures += 1,
        }
    }

    let results_path = out_dir.join("results.csv");
    results_io::write_results(&results_path, &results)?;
    run_config::echo_config(
        &out_dir,
        &config_entries![
            "command" => "solve-pnp",
            "variant" => args.variant,
            "method" => args.method,
            "noise_px" => args.noise_px,
            "seed" => args.seed,
            "iterations" => args.iterations,
            "threshold_px" => args.threshold_px,
            "rows" => rows.len(),
            "failures" => failures,
        ],
    )?;
    println!(
        "solved {}/{} poses ({} failures); results at {}",
        results.len(),
        rows.len(),
        failures,
        results_path.display()
    );
    Ok(())
}
