//! BOP-layout annotation files: per-scene `scene_gt.json` (groundtruth
//! poses, millimeter translations, row-major rotation blocks) and
//! `scene_camera.json` (intrinsics). Object ids are 1-based on disk and
//! 0-based class ids in memory.

use std::collections::BTreeMap;
use std::path::Path;

use pose6d::geometry::{CameraIntrinsics, Pose, Rotation};
use pose6d::linalg::{Mat3, Vec3};
use serde::{Deserialize, Serialize};

use crate::IoFormatError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct GtEntry {
    cam_R_m2c: Vec<f64>,
    cam_t_m2c: Vec<f64>,
    obj_id: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct CameraEntry {
    cam_K: Vec<f64>,
    depth_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    im_size: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAnnotation {
    /// 0-based class id (`obj_id − 1` on disk).
    pub class_id: usize,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub scene_id: u32,
    pub image_id: u32,
    pub cam: CameraIntrinsics,
    pub objects: Vec<ObjectAnnotation>,
}

const ROTATION_LOAD_TOL: f64 = 1e-4;

fn rotation_from_block(block: &[f64], image_id: u32) -> Result<Rotation, IoFormatError> {
    if block.len() != 9 {
        return Err(IoFormatError::Validation {
            image_id,
            msg: format!("rotation block has {} entries, expected 9", block.len()),
        });
    }
    let m = Mat3 {
        m: [
            [block[0], block[1], block[2]],
            [block[3], block[4], block[5]],
            [block[6], block[7], block[8]],
        ],
    };
    if m.det() < 0.0 {
        return Err(IoFormatError::Validation {
            image_id,
            msg: "rotation block has negative determinant".into(),
        });
    }
    let rtr = m.transposed().mat_mul(&m);
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            if (rtr.m[i][j] - id).abs() > ROTATION_LOAD_TOL {
                return Err(IoFormatError::Validation {
                    image_id,
                    msg: "rotation block is not orthonormal within 1e-4".into(),
                });
            }
        }
    }
    // already-exact blocks load bitwise; merely-approximate ones snap onto
    // SO(3) via the polar factor
    Rotation::new(m)
        .or_else(|_| Rotation::project(m))
        .map_err(|e| IoFormatError::Validation {
            image_id,
            msg: format!("rotation block rejected: {e}"),
        })
}

/// Loads one scene directory (`scene_gt.json` + `scene_camera.json`),
/// yielding annotations ordered by image id. Millimeter translations are
/// converted to meters. `fallback_size` supplies the image extent when the
/// camera file carries no `im_size`.
pub fn load_scene_dir(
    dir: &Path,
    scene_id: u32,
    fallback_size: Option<(f64, f64)>,
) -> Result<Vec<SceneAnnotation>, IoFormatError> {
    let gt_path = dir.join("scene_gt.json");
    let cam_path = dir.join("scene_camera.json");
    let gt_text = std::fs::read_to_string(&gt_path)?;
    let gt: BTreeMap<String, Vec<GtEntry>> = serde_json::from_str(&gt_text)
        .map_err(|e| IoFormatError::parse(&gt_path, e.line(), e.to_string()))?;
    let cam_text = std::fs::read_to_string(&cam_path)?;
    let cams: BTreeMap<String, CameraEntry> = serde_json::from_str(&cam_text)
        .map_err(|e| IoFormatError::parse(&cam_path, e.line(), e.to_string()))?;

    let mut image_ids: Vec<u32> = Vec::new();
    for key in gt.keys() {
        let id: u32 = key
            .parse()
            .map_err(|_| IoFormatError::parse(&gt_path, 0, format!("bad image id {key}")))?;
        image_ids.push(id);
    }
    image_ids.sort_unstable();

    let mut out = Vec::with_capacity(image_ids.len());
    for image_id in image_ids {
        let key = image_id.to_string();
        let cam_entry = cams.get(&key).ok_or_else(|| IoFormatError::Validation {
            image_id,
            msg: "missing camera entry".into(),
        })?;
        if cam_entry.cam_K.len() != 9 {
            return Err(IoFormatError::Validation {
                image_id,
                msg: "camera matrix must have 9 entries".into(),
            });
        }
        let (width, height) = cam_entry
            .im_size
            .map(|s| (s[0], s[1]))
            .or(fallback_size)
            .unwrap_or((640.0, 480.0));
        let k = &cam_entry.cam_K;
        let cam = CameraIntrinsics::new(k[0], k[4], k[2], k[5], width, height).map_err(|e| {
            IoFormatError::Validation {
                image_id,
                msg: format!("bad intrinsics: {e}"),
            }
        })?;
        let mut objects = Vec::new();
        for entry in &gt[&key] {
            if entry.obj_id == 0 {
                return Err(IoFormatError::Validation {
                    image_id,
                    msg: "object ids are 1-based".into(),
                });
            }
            if entry.cam_t_m2c.len() != 3 {
                return Err(IoFormatError::Validation {
                    image_id,
                    msg: "translation block must have 3 entries".into(),
                });
            }
            let rotation = rotation_from_block(&entry.cam_R_m2c, image_id)?;
            let translation = Vec3::new(
                entry.cam_t_m2c[0] / 1000.0,
                entry.cam_t_m2c[1] / 1000.0,
                entry.cam_t_m2c[2] / 1000.0,
            );
            objects.push(ObjectAnnotation {
                class_id: (entry.obj_id - 1) as usize,
                pose: Pose::new(rotation, translation),
            });
        }
        out.push(SceneAnnotation {
            scene_id,
            image_id,
            cam,
            objects,
        });
    }
    Ok(out)
}

/// Writes one scene directory in the BOP layout (atomic per file).
pub fn write_scene_dir(dir: &Path, annotations: &[SceneAnnotation]) -> Result<(), IoFormatError> {
    let mut gt: BTreeMap<String, Vec<GtEntry>> = BTreeMap::new();
    let mut cams: BTreeMap<String, CameraEntry> = BTreeMap::new();
    for ann in annotations {
        let key = ann.image_id.to_string();
        // store millimeters at nanometer precision; the raw ×1000 product
        // is not bitwise invertible, the quantized one round-trips exactly
        let mm = |x: f64| (x * 1e3 * 1e6).round() / 1e6;
        let entries: Vec<GtEntry> = ann
            .objects
            .iter()
            .map(|o| GtEntry {
                cam_R_m2c: o.pose.rotation.to_row_major().to_vec(),
                cam_t_m2c: vec![
                    mm(o.pose.translation.x),
                    mm(o.pose.translation.y),
                    mm(o.pose.translation.z),
                ],
                obj_id: (o.class_id + 1) as u32,
            })
            .collect();
        gt.insert(key.clone(), entries);
        cams.insert(
            key,
            CameraEntry {
                cam_K: vec![
                    ann.cam.fx, 0.0, ann.cam.cx, 0.0, ann.cam.fy, ann.cam.cy, 0.0, 0.0, 1.0,
                ],
                depth_scale: 1.0,
                im_size: Some([ann.cam.width, ann.cam.height]),
            },
        );
    }
    crate::write_atomic(
        &dir.join("scene_gt.json"),
        serde_json::to_string_pretty(&gt)?.as_bytes(),
    )?;
    crate::write_atomic(
        &dir.join("scene_camera.json"),
        serde_json::to_string_pretty(&cams)?.as_bytes(),
    )?;
    Ok(())
}

/// Per-class model descriptors (`models_info.json`), millimeter units on
/// disk as in the BOP layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub class_id: usize,
    pub diameter_m: f64,
    pub size_m: [f64; 3],
}

pub fn write_models_info(path: &Path, infos: &[ModelInfo]) -> Result<(), IoFormatError> {
    let mut map: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    for info in infos {
        map.insert(
            (info.class_id + 1).to_string(),
            serde_json::json!({
                "diameter": info.diameter_m * 1000.0,
                "size_x": info.size_m[0] * 1000.0,
                "size_y": info.size_m[1] * 1000.0,
                "size_z": info.size_m[2] * 1000.0,
            }),
        );
    }
    crate::write_atomic(path, serde_json::to_string_pretty(&map)?.as_bytes())?;
    Ok(())
}

pub fn load_models_info(path: &Path) -> Result<Vec<ModelInfo>, IoFormatError> {
    let text = std::fs::read_to_string(path)?;
    let map: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| IoFormatError::parse(path, e.line(), e.to_string()))?;
    let mut out = Vec::new();
    for (key, value) in map {
        let obj_id: usize = key
            .parse()
            .map_err(|_| IoFormatError::parse(path, 0, format!("bad object id {key}")))?;
        let get = |k: &str| -> Result<f64, IoFormatError> {
            value
                .get(k)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| IoFormatError::parse(path, 0, format!("missing field {k}")))
        };
        out.push(ModelInfo {
            class_id: obj_id - 1,
            diameter_m: get("diameter")? / 1000.0,
            size_m: [
                get("size_x")? / 1000.0,
                get("size_y")? / 1000.0,
                get("size_z")? / 1000.0,
            ],
        });
    }
    Ok(out)
}
