//! The synthetic dataset directory: a manifest, BOP-layout annotations in
//! one scene, raster blobs per image, and per-class models (vertex PLY in
//! millimeters plus `models_info.json`).
//!
//! ```text
//! root/
//!   dataset.json
//!   models/models_info.json
//!   models/obj_000001.ply
//!   train/000000/scene_gt.json
//!   train/000000/scene_camera.json
//!   train/000000/raster/000000.rast
//! ```

use std::path::{Path, PathBuf};

use pose6d::geometry::PointCloud;
use pose6d::synth::{
    class_cuboid, class_surface_cloud, generate_scene, SceneConfig, SyntheticSample,
};
use serde::{Deserialize, Serialize};

use crate::bop::{self, ModelInfo, ObjectAnnotation, SceneAnnotation};
use crate::{raster_io, IoFormatError};

pub const SCENE_ID: u32 = 0;
pub const MODEL_CLOUD_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub samples: usize,
    pub classes: usize,
    pub max_objects: usize,
    pub raster_size: usize,
    pub focal: f64,
    pub z_range: (f64, f64),
}

impl DatasetManifest {
    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            classes: self.classes,
            max_objects: self.max_objects,
            raster_size: self.raster_size,
            focal: self.focal,
            z_range: self.z_range,
        }
    }
}

fn scene_dir(root: &Path) -> PathBuf {
    root.join("train").join(format!("{SCENE_ID:06}"))
}

fn raster_path(root: &Path, image_id: u32) -> PathBuf {
    scene_dir(root).join("raster").join(format!("{image_id:06}.rast"))
}

pub fn model_ply_path(root: &Path, class_id: usize) -> PathBuf {
    root.join("models").join(format!("obj_{:06}.ply", class_id + 1))
}

/// Derives the per-sample generation seed from the dataset seed.
pub fn sample_seed(dataset_seed: u64, index: usize) -> u64 {
    pose6d::rng::SeedStream::new(dataset_seed, "dataset")
        .substream(index as u64)
        .next_u64()
}

/// Generates and writes the full dataset; returns the samples it wrote.
pub fn write_dataset(
    root: &Path,
    seed: u64,
    samples: usize,
    cfg: &SceneConfig,
) -> Result<Vec<SyntheticSample>, IoFormatError> {
    let manifest = DatasetManifest {
        format_version: 1,
        seed,
        samples,
        classes: cfg.classes,
        max_objects: cfg.max_objects,
        raster_size: cfg.raster_size,
        focal: cfg.focal,
        z_range: cfg.z_range,
    };
    std::fs::create_dir_all(scene_dir(root).join("raster"))?;
    std::fs::create_dir_all(root.join("models"))?;
    crate::write_atomic(
        &root.join("dataset.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;

    let infos: Vec<ModelInfo> = (0..cfg.classes)
        .map(|k| {
            let c = class_cuboid(k);
            ModelInfo {
                class_id: k,
                diameter_m: c.diameter(),
                size_m: [
                    2.0 * c.half_extents.x,
                    2.0 * c.half_extents.y,
                    2.0 * c.half_extents.z,
                ],
            }
        })
        .collect();
    bop::write_models_info(&root.join("models").join("models_info.json"), &infos)?;
    for k in 0..cfg.classes {
        let cloud = class_surface_cloud(k, MODEL_CLOUD_GRID);
        crate::ply::write_ply_binary(&model_ply_path(root, k), &cloud, true)?;
    }

    let mut out = Vec::with_capacity(samples);
    let mut annotations = Vec::with_capacity(samples);
    for i in 0..samples {
        let sample = generate_scene(sample_seed(seed, i), cfg);
        raster_io::write_raster(&raster_path(root, i as u32), &sample.raster)?;
        annotations.push(SceneAnnotation {
            scene_id: SCENE_ID,
            image_id: i as u32,
            cam: sample.cam,
            objects: sample
                .targets
                .iter()
                .map(|t| ObjectAnnotation {
                    class_id: t.class_id,
                    pose: t.geometry.as_ref().expect("real target").pose,
                })
                .collect(),
        });
        out.push(sample);
    }
    bop::write_scene_dir(&scene_dir(root), &annotations)?;
    Ok(out)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest, IoFormatError> {
    let path = root.join("dataset.json");
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| IoFormatError::parse(&path, e.line(), e.to_string()))
}

/// Loads annotations (poses + cameras) without rasters or target
/// reconstruction; works on any BOP-layout scene directory tree.
pub fn load_annotations(root: &Path) -> Result<Vec<SceneAnnotation>, IoFormatError> {
    let fallback = read_manifest(root)
        .ok()
        .map(|m| (m.raster_size as f64, m.raster_size as f64));
    let train = root.join("train");
    let mut scene_dirs: Vec<(u32, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&train)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            if let Some(id) = entry
                .file_name()
                .to_str()
                .and_then(|s| s.parse::<u32>().ok())
            {
                scene_dirs.push((id, entry.path()));
            }
        }
    }
    scene_dirs.sort();
    let mut out = Vec::new();
    for (scene_id, dir) in scene_dirs {
        out.extend(bop::load_scene_dir(&dir, scene_id, fallback)?);
    }
    Ok(out)
}

/// Full dataset load: annotations plus rasters, with targets reconstructed
/// from the poses and the per-class cuboids (keypoints, boxes, translation
/// codes re-derived through the same projection used at generation time).
pub fn load_dataset(root: &Path) -> Result<(DatasetManifest, Vec<SyntheticSample>), IoFormatError> {
    use pose6d::geometry::{generate_ibb, project_keypoints, BoxCxcywh, TranslationCode};
    use pose6d::matching::{TargetGeometry, TargetTuple};

    let manifest = read_manifest(root)?;
    let annotations = load_annotations(root)?;
    let infos = bop::load_models_info(&root.join("models").join("models_info.json"))?;
    let cuboid_of = |class_id: usize| -> Result<pose6d::geometry::Cuboid, IoFormatError> {
        let info = infos
            .iter()
            .find(|i| i.class_id == class_id)
            .ok_or_else(|| IoFormatError::Validation {
                image_id: 0,
                msg: format!("no model info for class {class_id}"),
            })?;
        pose6d::geometry::Cuboid::new(
            pose6d::linalg::Vec3::ZERO,
            pose6d::linalg::Vec3::new(
                info.size_m[0] / 2.0,
                info.size_m[1] / 2.0,
                info.size_m[2] / 2.0,
            ),
        )
        .map_err(|e| IoFormatError::Validation {
            image_id: 0,
            msg: format!("bad model extents: {e}"),
        })
    };

    let mut samples = Vec::with_capacity(annotations.len());
    for ann in annotations {
        let raster = raster_io::read_raster(&raster_path(root, ann.image_id))?;
        let mut targets = Vec::with_capacity(ann.objects.len());
        for obj in &ann.objects {
            let cuboid = cuboid_of(obj.class_id)?;
            let set = generate_ibb(&cuboid);
            let px = project_keypoints(&set, &obj.pose, &ann.cam).map_err(|e| {
                IoFormatError::Validation {
                    image_id: ann.image_id,
                    msg: format!("stored pose does not project: {e}"),
                }
            })?;
            let norm = px.scaled(1.0 / ann.cam.width, 1.0 / ann.cam.height);
            let corners: Vec<[f64; 2]> = norm.points()[..8].to_vec();
            let bbox = BoxCxcywh::hull_of(&corners).clamped_unit();
            let translation = TranslationCode::encode(obj.pose.translation, &ann.cam)
                .map_err(|e| IoFormatError::Validation {
                    image_id: ann.image_id,
                    msg: format!("stored pose has invalid depth: {e}"),
                })?;
            targets.push(TargetTuple::object(
                obj.class_id,
                TargetGeometry {
                    bbox,
                    translation,
                    keypoints: norm,
                    pose: obj.pose,
                    model: obj.class_id,
                },
            ));
        }
        samples.push(SyntheticSample {
            raster,
            targets,
            cam: ann.cam,
            seed: sample_seed(manifest.seed, ann.image_id as usize),
        });
    }
    Ok((manifest, samples))
}

/// Loads the per-class model clouds referenced by a dataset or models dir.
pub fn load_model_clouds(
    models_dir: &Path,
    classes: usize,
) -> Result<Vec<PointCloud>, IoFormatError> {
    (0..classes)
        .map(|k| {
            let path = models_dir.join(format!("obj_{:06}.ply", k + 1));
            crate::ply::load_ply(&path, true)
        })
        .collect()
}
