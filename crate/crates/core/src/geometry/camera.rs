//! Pinhole camera model, rigid poses, perspective projection, and the
//! normalized translation code (projected object center + depth).

use alloc::vec::Vec;

use super::keypoints::{KeypointSet2D, KeypointSet3D};
use super::{GeometryError, Rotation};
use crate::linalg::Vec3;

pub const MIN_CAMERA_DEPTH: f64 = 1e-6;

/// Pinhole intrinsics. Focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidArgument("focal lengths must be > 0"));
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(GeometryError::InvalidArgument("image size must be > 0"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects one camera-frame point; caller guarantees `p.z > 0`.
    pub fn project_camera_point(&self, p: Vec3) -> [f64; 2] {
        [
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ]
    }
}

/// Rigid transform of an object in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn transform(&self, p: Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }
}

/// Projects model-frame points into pixels. Order preserved; fails if any
/// transformed point lies at or behind the camera plane.
pub fn project_points(
    points: &[Vec3],
    pose: &Pose,
    cam: &CameraIntrinsics,
) -> Result<Vec<[f64; 2]>, GeometryError> {
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let c = pose.transform(*p);
        if c.z <= MIN_CAMERA_DEPTH {
            return Err(GeometryError::BehindCamera { z: c.z });
        }
        out.push(cam.project_camera_point(c));
    }
    Ok(out)
}

/// Projects a tagged keypoint set, carrying the representation tag and the
/// collinear-tuple index table over to the 2D set.
pub fn project_keypoints(
    set: &KeypointSet3D,
    pose: &Pose,
    cam: &CameraIntrinsics,
) -> Result<KeypointSet2D, GeometryError> {
    let points = project_points(set.points(), pose, cam)?;
    Ok(KeypointSet2D::from_parts(
        set.kind(),
        points,
        set.tuples().to_vec(),
    ))
}

/// Translation represented as the normalized projected object center plus
/// its depth: `(u/width, v/height, tz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationCode {
    pub u_norm: f64,
    pub v_norm: f64,
    pub tz: f64,
}

impl TranslationCode {
    pub fn new(u_norm: f64, v_norm: f64, tz: f64) -> Self {
        Self { u_norm, v_norm, tz }
    }

    /// Exact inverse of [`TranslationCode::decode`].
    pub fn encode(t: Vec3, cam: &CameraIntrinsics) -> Result<Self, GeometryError> {
        if t.z <= 0.0 {
            return Err(GeometryError::InvalidArgument("tz must be > 0"));
        }
        let u = cam.fx * t.x / t.z + cam.cx;
        let v = cam.fy * t.y / t.z + cam.cy;
        Ok(Self {
            u_norm: u / cam.width,
            v_norm: v / cam.height,
            tz: t.z,
        })
    }

    pub fn decode(&self, cam: &CameraIntrinsics) -> Result<Vec3, GeometryError> {
        if self.tz <= 0.0 {
            return Err(GeometryError::InvalidArgument("tz must be > 0"));
        }
        let u = self.u_norm * cam.width;
        let v = self.v_norm * cam.height;
        Ok(Vec3::new(
            (u - cam.cx) * self.tz / cam.fx,
            (v - cam.cy) * self.tz / cam.fy,
            self.tz,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap()
    }

    #[test]
    fn origin_projects_to_principal_point() {
        let pose = Pose::new(Rotation::IDENTITY, Vec3::new(0.0, 0.0, 1.0));
        let px = project_points(&[Vec3::ZERO], &pose, &cam()).unwrap();
        assert_eq!(px[0], [320.0, 240.0]);
    }

    #[test]
    fn offset_point_projects_by_similar_triangles() {
        let pose = Pose::new(Rotation::IDENTITY, Vec3::new(0.0, 0.0, 1.0));
        let px = project_points(&[Vec3::new(0.1, 0.0, 0.0)], &pose, &cam()).unwrap();
        assert!((px[0][0] - 370.0).abs() < 1e-12);
        assert!((px[0][1] - 240.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let pose = Pose::new(Rotation::IDENTITY, Vec3::new(0.0, 0.0, -1.0));
        let err = project_points(&[Vec3::ZERO], &pose, &cam()).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera { .. }));
    }

    #[test]
    fn principal_point_shift_is_equivariant() {
        let mut s = SeedStream::new(5, "cam-shift");
        let pose = Pose::new(Rotation::about_y(0.3), Vec3::new(0.05, -0.02, 1.5));
        let pts: Vec<Vec3> = (0..20)
            .map(|_| {
                Vec3::new(
                    s.range(-0.1, 0.1),
                    s.range(-0.1, 0.1),
                    s.range(-0.1, 0.1),
                )
            })
            .collect();
        let base = cam();
        let delta = 13.5;
        let shifted =
            CameraIntrinsics::new(base.fx, base.fy, base.cx + delta, base.cy, 640.0, 480.0)
                .unwrap();
        let a = project_points(&pts, &pose, &base).unwrap();
        let b = project_points(&pts, &pose, &shifted).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert!((pb[0] - pa[0] - delta).abs() < 1e-12);
            assert!((pb[1] - pa[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_code_examples() {
        let c = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap();
        // center at principal point, tz = 1
        let code = TranslationCode::new(320.0 / 640.0, 240.0 / 480.0, 1.0);
        let t = code.decode(&c).unwrap();
        assert!((t - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        // u_norm = 1 → x = (640 − 320)·2/500
        let code = TranslationCode::new(1.0, 0.5, 2.0);
        let t = code.decode(&c).unwrap();
        assert!((t.x - 1.28).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_is_identity() {
        let c = cam();
        let mut s = SeedStream::new(77, "code-roundtrip");
        for _ in 0..500 {
            let t = Vec3::new(s.range(-0.5, 0.5), s.range(-0.4, 0.4), s.range(0.1, 10.0));
            let code = TranslationCode::encode(t, &c).unwrap();
            let back = code.decode(&c).unwrap();
            assert!((back - t).norm() < 1e-12);
        }
    }

    #[test]
    fn nonpositive_depth_is_rejected() {
        let c = cam();
        assert!(TranslationCode::new(0.5, 0.5, 0.0).decode(&c).is_err());
        assert!(TranslationCode::encode(Vec3::new(0.0, 0.0, -1.0), &c).is_err());
    }
}
