//! Cuboid keypoint sets: plain 3D bounding-box corners and the interpolated
//! variant with two interior points per edge, whose collinear 4-tuples have
//! a projection-invariant cross-ratio of 4/3 (16/9 squared).

use alloc::vec;
use alloc::vec::Vec;

use super::GeometryError;
use crate::linalg::Vec3;

/// Squared groundtruth cross-ratio of a (corner, 1/3, 2/3, corner) tuple.
pub const CROSS_RATIO_SQ_TARGET: f64 = 16.0 / 9.0;

/// Axis-aligned cuboid in the model frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub center: Vec3,
    pub half_extents: Vec3,
}

impl Cuboid {
    pub fn new(center: Vec3, half_extents: Vec3) -> Result<Self, GeometryError> {
        if half_extents.x <= 0.0 || half_extents.y <= 0.0 || half_extents.z <= 0.0 {
            return Err(GeometryError::InvalidArgument("half-extents must be > 0"));
        }
        Ok(Self {
            center,
            half_extents,
        })
    }

    /// Corners in lexicographic sign order over (±x, ±y, ±z) with `−`
    /// first: index = 4·(x is +) + 2·(y is +) + (z is +).
    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents;
        let mut out = [Vec3::ZERO; 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let sx = if i & 4 != 0 { 1.0 } else { -1.0 };
            let sy = if i & 2 != 0 { 1.0 } else { -1.0 };
            let sz = if i & 1 != 0 { 1.0 } else { -1.0 };
            *corner = self.center + Vec3::new(sx * h.x, sy * h.y, sz * h.z);
        }
        out
    }

    /// Full-diagonal length; the BOP-style object diameter.
    pub fn diameter(&self) -> f64 {
        self.half_extents.norm() * 2.0
    }
}

/// The 12 cube edges in a fixed enumeration: x-axis edges first (other-axis
/// signs in lexicographic order), then y, then z. Each pair is (− endpoint
/// corner index, + endpoint corner index).
pub(crate) const CUBOID_EDGES: [(usize, usize); 12] = [
    // axis x: indices differ by 4
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
    // axis y: indices differ by 2
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    // axis z: indices differ by 1
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeypointKind {
    /// Eight bounding-box corners.
    Bb8,
    /// Eight farthest-point-sampled surface points.
    Fps8,
    /// 32-point interpolated bounding box: corners plus 1/3 and 2/3 points
    /// per edge, with the collinear 4-tuple index table.
    Ibb32,
}

impl KeypointKind {
    pub fn point_count(self) -> usize {
        match self {
            KeypointKind::Bb8 | KeypointKind::Fps8 => 8,
            KeypointKind::Ibb32 => 32,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KeypointKind::Bb8 => "bb8",
            KeypointKind::Fps8 => "fps8",
            KeypointKind::Ibb32 => "ibb32",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bb8" => Some(KeypointKind::Bb8),
            "fps8" => Some(KeypointKind::Fps8),
            "ibb32" => Some(KeypointKind::Ibb32),
            _ => None,
        }
    }
}

/// Ordered 3D keypoints with a representation tag; the interpolated variant
/// additionally carries its collinear 4-tuples (each listed exactly once).
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet3D {
    kind: KeypointKind,
    points: Vec<Vec3>,
    tuples: Vec<[usize; 4]>,
}

impl KeypointSet3D {
    pub fn from_parts(kind: KeypointKind, points: Vec<Vec3>, tuples: Vec<[usize; 4]>) -> Self {
        debug_assert_eq!(points.len(), kind.point_count());
        Self {
            kind,
            points,
            tuples,
        }
    }

    pub fn kind(&self) -> KeypointKind {
        self.kind
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn tuples(&self) -> &[[usize; 4]] {
        &self.tuples
    }
}

/// Ordered 2D keypoints (pixels, or image-normalized units) mirroring
/// [`KeypointSet3D`].
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet2D {
    kind: KeypointKind,
    points: Vec<[f64; 2]>,
    tuples: Vec<[usize; 4]>,
}

impl KeypointSet2D {
    pub fn from_parts(kind: KeypointKind, points: Vec<[f64; 2]>, tuples: Vec<[usize; 4]>) -> Self {
        debug_assert_eq!(points.len(), kind.point_count());
        Self {
            kind,
            points,
            tuples,
        }
    }

    pub fn kind(&self) -> KeypointKind {
        self.kind
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn tuples(&self) -> &[[usize; 4]] {
        &self.tuples
    }

    /// Flat `[u0, v0, u1, v1, …]` layout used by the regression heads.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 2);
        for p in &self.points {
            out.push(p[0]);
            out.push(p[1]);
        }
        out
    }

    pub fn from_flat(kind: KeypointKind, flat: &[f64], tuples: Vec<[usize; 4]>) -> Self {
        debug_assert_eq!(flat.len(), kind.point_count() * 2);
        let points = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Self {
            kind,
            points,
            tuples,
        }
    }

    /// Rescales every point, e.g. pixels → normalized units.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            kind: self.kind,
            points: self.points.iter().map(|p| [p[0] * sx, p[1] * sy]).collect(),
            tuples: self.tuples.clone(),
        }
    }
}

/// Canonical index table of the interpolated bounding box: tuple `k` is
/// (− corner, 1/3 point, 2/3 point, + corner) of edge `k`, with interior
/// points stored at positions `8 + 2k` and `8 + 2k + 1`.
pub fn ibb_tuples() -> Vec<[usize; 4]> {
    CUBOID_EDGES
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| [a, 8 + 2 * k, 8 + 2 * k + 1, b])
        .collect()
}

/// 32-point interpolated bounding box of a cuboid: the 8 corners followed by
/// the 1/3 and 2/3 interior points of each edge (fractions measured from the
/// `−` endpoint), in the fixed edge enumeration.
pub fn generate_ibb(c: &Cuboid) -> KeypointSet3D {
    let corners = c.corners();
    let mut points = Vec::with_capacity(32);
    points.extend_from_slice(&corners);
    for &(a, b) in CUBOID_EDGES.iter() {
        let pa = corners[a];
        let pb = corners[b];
        points.push(pa + (pb - pa) * (1.0 / 3.0));
        points.push(pa + (pb - pa) * (2.0 / 3.0));
    }
    KeypointSet3D::from_parts(KeypointKind::Ibb32, points, ibb_tuples())
}

/// Corners-only keypoint set (empty tuple table).
pub fn generate_bb8(c: &Cuboid) -> KeypointSet3D {
    KeypointSet3D::from_parts(KeypointKind::Bb8, c.corners().to_vec(), vec![])
}

/// Squared cross-ratio `(‖c−a‖²·‖d−b‖²)/(‖c−b‖²·‖d−a‖²)` of four points of
/// any dimension, computed via inner products.
pub fn cross_ratio_sq<const N: usize>(
    a: [f64; N],
    b: [f64; N],
    c: [f64; N],
    d: [f64; N],
) -> Result<f64, GeometryError> {
    fn dist_sq<const N: usize>(p: [f64; N], q: [f64; N]) -> f64 {
        let mut acc = 0.0;
        for i in 0..N {
            let d = p[i] - q[i];
            acc += d * d;
        }
        acc
    }
    let cb = dist_sq(c, b);
    let da = dist_sq(d, a);
    if cb <= 1e-18 || da <= 1e-18 {
        return Err(GeometryError::DegenerateInput(
            "coincident points in cross-ratio denominator",
        ));
    }
    Ok(dist_sq(c, a) * dist_sq(d, b) / (cb * da))
}
