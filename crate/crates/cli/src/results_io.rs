//! Pose-result CSV exchange: `scene_id,im_id,obj_id,score,R,t,time` with
//! the rotation as 9 space-separated row-major values and the translation
//! in millimeters. Floats serialize in shortest-round-trip form, so
//! write→read is lossless and the identity rotation renders as
//! `1 0 0 0 1 0 0 0 1`.

use std::path::Path;

use pose6d::geometry::{Pose, Rotation};
use pose6d::linalg::Vec3;

use crate::IoFormatError;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub scene_id: u32,
    pub image_id: u32,
    /// 1-based object id as in the BOP layout.
    pub obj_id: u32,
    pub score: f64,
    pub pose: Pose,
    /// Wall-clock seconds spent on this estimate; −1 when unknown.
    pub time_s: f64,
}

pub const RESULTS_HEADER: &str = "scene_id,im_id,obj_id,score,R,t,time";

pub fn results_to_string(records: &[ResultRecord]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        let rot = r.pose.rotation.to_row_major();
        let rot_s: Vec<String> = rot.iter().map(|v| format!("{v}")).collect();
        let t = r.pose.translation;
        out.push_str(&format!(
            "{},{},{},{},{},{} {} {},{}\n",
            r.scene_id,
            r.image_id,
            r.obj_id,
            r.score,
            rot_s.join(" "),
            t.x * 1000.0,
            t.y * 1000.0,
            t.z * 1000.0,
            r.time_s
        ));
    }
    out
}

pub fn write_results(path: &Path, records: &[ResultRecord]) -> Result<(), IoFormatError> {
    crate::write_atomic(path, results_to_string(records).as_bytes())?;
    Ok(())
}

pub fn parse_results(path: &Path, text: &str) -> Result<Vec<ResultRecord>, IoFormatError> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(IoFormatError::parse(path, 1, "empty results file"));
    };
    if header.trim() != RESULTS_HEADER {
        return Err(IoFormatError::parse(
            path,
            1,
            format!("bad header: {header}"),
        ));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(IoFormatError::parse(
                path,
                line_no,
                format!("expected 7 fields, got {}", fields.len()),
            ));
        }
        let parse_u32 = |s: &str, what: &str| -> Result<u32, IoFormatError> {
            s.trim()
                .parse()
                .map_err(|_| IoFormatError::parse(path, line_no, format!("bad {what}: {s}")))
        };
        let parse_f64 = |s: &str, what: &str| -> Result<f64, IoFormatError> {
            s.trim()
                .parse()
                .map_err(|_| IoFormatError::parse(path, line_no, format!("bad {what}: {s}")))
        };
        let rot_vals: Vec<f64> = fields[4]
            .split_whitespace()
            .map(|t| parse_f64(t, "rotation entry"))
            .collect::<Result<_, _>>()?;
        if rot_vals.len() != 9 {
            return Err(IoFormatError::parse(
                path,
                line_no,
                "rotation must have 9 values",
            ));
        }
        let mut block = [0.0; 9];
        block.copy_from_slice(&rot_vals);
        let rotation = Rotation::from_row_major(&block).map_err(|e| {
            IoFormatError::parse(path, line_no, format!("invalid rotation: {e}"))
        })?;
        let t_vals: Vec<f64> = fields[5]
            .split_whitespace()
            .map(|t| parse_f64(t, "translation entry"))
            .collect::<Result<_, _>>()?;
        if t_vals.len() != 3 {
            return Err(IoFormatError::parse(
                path,
                line_no,
                "translation must have 3 values",
            ));
        }
        out.push(ResultRecord {
            scene_id: parse_u32(fields[0], "scene id")?,
            image_id: parse_u32(fields[1], "image id")?,
            obj_id: parse_u32(fields[2], "object id")?,
            score: parse_f64(fields[3], "score")?,
            pose: Pose::new(
                rotation,
                Vec3::new(t_vals[0] / 1000.0, t_vals[1] / 1000.0, t_vals[2] / 1000.0),
            ),
            time_s: parse_f64(fields[6], "time")?,
        });
    }
    Ok(out)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>, IoFormatError> {
    let text = std::fs::read_to_string(path)?;
    parse_results(path, &text)
}
