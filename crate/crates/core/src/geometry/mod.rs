//! Rotation representations, perspective projection, keypoint-set
//! construction, and cross-ratio computation. Pure functions over immutable
//! inputs; all angles in radians, lengths in meters, pixels for image
//! coordinates.

mod boxes;
mod camera;
mod cloud;
mod keypoints;
mod rotation;

pub use boxes::{giou, BoxCxcywh};
pub use camera::{
    project_keypoints, project_points, CameraIntrinsics, Pose, TranslationCode, MIN_CAMERA_DEPTH,
};
pub use cloud::{fps_sample, PointCloud};
pub use keypoints::{
    cross_ratio_sq, generate_bb8, generate_ibb, ibb_tuples, Cuboid, KeypointKind, KeypointSet2D,
    KeypointSet3D, CROSS_RATIO_SQ_TARGET,
};
pub use rotation::{geodesic_distance, matrix_to_rot6d, rot6d_to_matrix, Rot6D, Rotation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}
