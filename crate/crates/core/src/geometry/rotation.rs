//! Rotation matrices, the continuous 6D rotation representation, and the
//! geodesic distance on SO(3).

use super::GeometryError;
use crate::linalg::{polar_rotation, Mat3, Vec3};

const ORTHONORMALITY_TOL: f64 = 1e-9;

/// A proper rotation: orthonormal 3×3 matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: Mat3,
}

impl Rotation {
    pub const IDENTITY: Self = Self { m: Mat3::IDENTITY };

    /// Validates orthonormality (`‖RᵀR − I‖∞ < 1e-9`) and `det = +1`.
    pub fn new(m: Mat3) -> Result<Self, GeometryError> {
        let rtr = m.transposed().mat_mul(&m);
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                if (rtr.m[i][j] - id).abs() > ORTHONORMALITY_TOL {
                    return Err(GeometryError::DegenerateInput("matrix is not orthonormal"));
                }
            }
        }
        if (m.det() - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(GeometryError::DegenerateInput("determinant is not +1"));
        }
        Ok(Self { m })
    }

    /// Projects an approximately-orthonormal matrix onto SO(3) via the polar
    /// factor. Fails only if the polar factor itself is not a rotation.
    pub fn project(m: Mat3) -> Result<Self, GeometryError> {
        Self::new(polar_rotation(&m))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.m.mul_vec(p)
    }

    pub fn inverse(&self) -> Self {
        Self {
            m: self.m.transposed(),
        }
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self {
            m: self.m.mat_mul(&other.m),
        }
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Self {
            m: Mat3 {
                m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
            },
        }
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Self {
            m: Mat3 {
                m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            },
        }
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Self {
            m: Mat3 {
                m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            },
        }
    }

    /// Rotation from a (not necessarily normalized) quaternion `(w, x, y, z)`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = libm::sqrt(w * w + x * x + y * y + z * z);
        if n < 1e-12 {
            return Err(GeometryError::DegenerateInput("zero quaternion"));
        }
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        let m = Mat3 {
            m: [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ],
        };
        Self::new(m)
    }

    /// Row-major flattening, `[r00, r01, r02, r10, …]`.
    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] = self.m.m[i][j];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, GeometryError> {
        Self::new(Mat3 {
            m: [
                [v[0], v[1], v[2]],
                [v[3], v[4], v[5]],
                [v[6], v[7], v[8]],
            ],
        })
    }
}

/// First two columns of a rotation matrix, before orthonormalization.
/// Any 6-vector with non-degenerate columns is a valid input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D {
    pub v: [f64; 6],
}

impl Rot6D {
    pub fn new(v: [f64; 6]) -> Self {
        Self { v }
    }

    pub fn col_a(&self) -> Vec3 {
        Vec3::new(self.v[0], self.v[1], self.v[2])
    }

    pub fn col_b(&self) -> Vec3 {
        Vec3::new(self.v[3], self.v[4], self.v[5])
    }
}

/// Gram–Schmidt map from the 6D representation onto SO(3):
/// `b1 = a1/‖a1‖`, `b2 = normalize(a2 − (b1·a2) b1)`, `b3 = b1 × b2`,
/// with `b1, b2, b3` the columns of the result.
pub fn rot6d_to_matrix(r: Rot6D) -> Result<Rotation, GeometryError> {
    let a1 = r.col_a();
    let a2 = r.col_b();
    if a1.norm() < 1e-12 || a2.norm() < 1e-12 {
        return Err(GeometryError::DegenerateInput("zero column in 6D input"));
    }
    let b1 = a1.normalized();
    let a2_perp = a2 - b1 * b1.dot(a2);
    if a2_perp.norm() < 1e-12 {
        return Err(GeometryError::DegenerateInput("parallel columns in 6D input"));
    }
    let b2 = a2_perp.normalized();
    let b3 = b1.cross(b2);
    Rotation::new(Mat3::from_cols(b1, b2, b3))
}

/// First two columns of `R`; exact right inverse of [`rot6d_to_matrix`].
pub fn matrix_to_rot6d(r: &Rotation) -> Rot6D {
    let c0 = r.matrix().col(0);
    let c1 = r.matrix().col(1);
    Rot6D::new([c0.x, c0.y, c0.z, c1.x, c1.y, c1.z])
}

/// Angle of the relative rotation, `arccos((tr(RaᵀRb) − 1)/2) ∈ [0, π]`.
pub fn geodesic_distance(ra: &Rotation, rb: &Rotation) -> f64 {
    let rel = ra.matrix().transposed().mat_mul(rb.matrix());
    let arg = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    libm::acos(arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use core::f64::consts::PI;

    pub(crate) fn random_rotation(s: &mut SeedStream) -> Rotation {
        // Haar-uniform via normalized Gaussian quaternion.
        loop {
            let q = [s.normal(), s.normal(), s.normal(), s.normal()];
            if let Ok(r) = Rotation::from_quaternion(q[0], q[1], q[2], q[3]) {
                return r;
            }
        }
    }

    #[test]
    fn identity_6d_maps_to_identity() {
        let r = rot6d_to_matrix(Rot6D::new([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(r, Rotation::IDENTITY);
    }

    #[test]
    fn scaling_is_invariant_under_normalization() {
        let r = rot6d_to_matrix(Rot6D::new([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((r.matrix().m[i][j] - id).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn swapped_axes_give_negative_determinant_completion() {
        // Hand Gram–Schmidt: b1=(0,1,0), b2=(1,0,0), b3=b1×b2=(0,0,−1).
        let r = rot6d_to_matrix(Rot6D::new([0.0, 1.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
        let m = r.matrix();
        assert!((m.col(0) - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((m.col(1) - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((m.col(2) - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        assert!((m.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            rot6d_to_matrix(Rot6D::new([0.0, 0.0, 0.0, 0.0, 1.0, 0.0])),
            Err(GeometryError::DegenerateInput(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(Rot6D::new([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
            Err(GeometryError::DegenerateInput(_))
        ));
    }

    #[test]
    fn matrix_to_rot6d_returns_first_two_columns() {
        let r = Rotation::about_z(PI / 2.0);
        let six = matrix_to_rot6d(&r);
        assert!((six.col_a() - r.matrix().col(0)).norm() < 1e-15);
        assert!((six.col_b() - r.matrix().col(1)).norm() < 1e-15);
    }

    #[test]
    fn round_trip_over_seeded_rotations() {
        let mut s = SeedStream::new(100, "rot-roundtrip");
        for _ in 0..1000 {
            let r = random_rotation(&mut s);
            let back = rot6d_to_matrix(matrix_to_rot6d(&r)).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((back.matrix().m[i][j] - r.matrix().m[i][j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn gram_schmidt_output_is_orthonormal() {
        let mut s = SeedStream::new(101, "rot-gs");
        for _ in 0..1000 {
            let v = [
                s.range(-2.0, 2.0),
                s.range(-2.0, 2.0),
                s.range(-2.0, 2.0),
                s.range(-2.0, 2.0),
                s.range(-2.0, 2.0),
                s.range(-2.0, 2.0),
            ];
            match rot6d_to_matrix(Rot6D::new(v)) {
                Ok(r) => {
                    let rtr = r.matrix().transposed().mat_mul(r.matrix());
                    for i in 0..3 {
                        for j in 0..3 {
                            let id = if i == j { 1.0 } else { 0.0 };
                            assert!((rtr.m[i][j] - id).abs() < 1e-9);
                        }
                    }
                    assert!((r.matrix().det() - 1.0).abs() < 1e-9);
                }
                Err(_) => {} // degenerate draw, allowed
            }
        }
    }

    #[test]
    fn geodesic_examples() {
        let r = Rotation::about_z(0.7);
        assert_eq!(geodesic_distance(&r, &r), 0.0);
        let half_turn = Rotation::about_x(PI);
        assert!((geodesic_distance(&Rotation::IDENTITY, &half_turn) - PI).abs() < 1e-12);
        // trace of a 90° turn is 1 ⇒ arccos(0) = π/2
        let quarter = Rotation::about_z(PI / 2.0);
        assert!((geodesic_distance(&Rotation::IDENTITY, &quarter) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn geodesic_matches_sampled_angle() {
        let mut s = SeedStream::new(17, "rot-angle");
        for _ in 0..200 {
            let angle = s.range(0.0, PI);
            let r = Rotation::about_y(angle);
            assert!((geodesic_distance(&Rotation::IDENTITY, &r) - angle).abs() < 1e-9);
        }
    }
}
