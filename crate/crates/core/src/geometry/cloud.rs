//! Point clouds and greedy farthest point sampling.

use alloc::vec;
use alloc::vec::Vec;

use super::GeometryError;
use crate::linalg::Vec3;

/// Non-empty list of 3D points (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::InvalidArgument("empty point cloud"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = Vec3::ZERO;
        for p in &self.points {
            c = c + *p;
        }
        c * (1.0 / self.points.len() as f64)
    }
}

/// Greedy farthest-point subset of size `k` starting from `seed_index`.
/// Deterministic: distance ties keep the lowest index; the output order is
/// the selection order, so a size-`k'` sample is a prefix of a size-`k` one.
pub fn fps_sample(
    cloud: &PointCloud,
    k: usize,
    seed_index: usize,
) -> Result<PointCloud, GeometryError> {
    let pts = cloud.points();
    let n = pts.len();
    if k == 0 || k > n {
        return Err(GeometryError::InvalidArgument(
            "sample size must be in 1..=|points|",
        ));
    }
    if seed_index >= n {
        return Err(GeometryError::InvalidArgument("seed index out of range"));
    }

    let mut selected = Vec::with_capacity(k);
    selected.push(seed_index);
    // squared distance to the nearest selected point
    let mut dist = vec![f64::INFINITY; n];
    let mut last = seed_index;
    while selected.len() < k {
        let mut best = 0usize;
        let mut best_dist = -1.0f64;
        for (i, p) in pts.iter().enumerate() {
            let d = (*p - pts[last]).norm_sq();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best_dist {
                best_dist = dist[i];
                best = i;
            }
        }
        selected.push(best);
        last = best;
    }
    PointCloud::new(selected.into_iter().map(|i| pts[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_cloud() -> PointCloud {
        PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn k_one_returns_seed() {
        let c = line_cloud();
        let s = fps_sample(&c, 1, 2).unwrap();
        assert_eq!(s.points(), &[Vec3::new(2.0, 0.0, 0.0)]);
    }

    #[test]
    fn farthest_point_is_selected_second() {
        let c = line_cloud();
        let s = fps_sample(&c, 2, 0).unwrap();
        assert_eq!(
            s.points(),
            &[Vec3::new(0.0, 0.0, 0.0), Vec3::new(10.0, 0.0, 0.0)]
        );
    }

    #[test]
    fn full_sample_is_selection_ordered() {
        let c = line_cloud();
        let s = fps_sample(&c, 4, 0).unwrap();
        // 0, then 10 (farthest), then the midpoint-ish ties resolve low index
        assert_eq!(s.len(), 4);
        assert_eq!(s.points()[0], Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(s.points()[1], Vec3::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn prefix_property_holds() {
        let c = PointCloud::new(
            (0..40)
                .map(|i| {
                    let t = i as f64 * 0.37;
                    Vec3::new(libm::cos(t), libm::sin(1.7 * t), 0.1 * t)
                })
                .collect(),
        )
        .unwrap();
        let full = fps_sample(&c, 12, 3).unwrap();
        for k in 1..=12 {
            let sub = fps_sample(&c, k, 3).unwrap();
            assert_eq!(sub.points(), &full.points()[..k]);
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let c = line_cloud();
        assert!(fps_sample(&c, 5, 0).is_err());
        assert!(fps_sample(&c, 0, 0).is_err());
        assert!(fps_sample(&c, 2, 9).is_err());
        assert!(PointCloud::new(vec![]).is_err());
    }
}
