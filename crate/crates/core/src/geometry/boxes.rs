//! 2D bounding boxes in center/size form and the generalized IoU.

use super::GeometryError;

/// Axis-aligned box as (center-x, center-y, width, height), in whatever
/// units the caller fixes (the set predictor uses image-normalized units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCxcywh {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxCxcywh {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Tight hull of a point set.
    pub fn hull_of(points: &[[f64; 2]]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Self {
            cx: 0.5 * (min[0] + max[0]),
            cy: 0.5 * (min[1] + max[1]),
            w: max[0] - min[0],
            h: max[1] - min[1],
        }
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Clamps the box region to `[0,1]²` (for normalized coordinates).
    pub fn clamped_unit(&self) -> Self {
        let (x1, y1, x2, y2) = self.corners();
        let x1 = x1.clamp(0.0, 1.0);
        let y1 = y1.clamp(0.0, 1.0);
        let x2 = x2.clamp(0.0, 1.0);
        let y2 = y2.clamp(0.0, 1.0);
        Self {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    /// Sum of absolute coordinate differences.
    pub fn l1_to(&self, o: &BoxCxcywh) -> f64 {
        (self.cx - o.cx).abs()
            + (self.cy - o.cy).abs()
            + (self.w - o.w).abs()
            + (self.h - o.h).abs()
    }
}

/// Generalized IoU: `IoU − (enclosing − union)/enclosing`, in `(−1, 1]`.
pub fn giou(a: &BoxCxcywh, b: &BoxCxcywh) -> Result<f64, GeometryError> {
    if a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0 {
        return Err(GeometryError::InvalidArgument(
            "boxes must have positive extents",
        ));
    }
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let ew = ax2.max(bx2) - ax1.min(bx1);
    let eh = ay2.max(by2) - ay1.min(by1);
    let enclosing = ew * eh;
    Ok(inter / union - (enclosing - union) / enclosing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_boxes_have_giou_one() {
        let b = BoxCxcywh::new(0.4, 0.6, 0.2, 0.3);
        assert!((giou(&b, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_disjoint_unit_boxes() {
        // IoU 0, union 2, enclosing 4 → −0.5
        let a = BoxCxcywh::new(0.5, 0.5, 1.0, 1.0);
        let b = BoxCxcywh::new(1.5, 1.5, 1.0, 1.0);
        assert!((giou(&a, &b).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn contained_half_area_box() {
        // b inside a with half the area: IoU = 0.5, enclosing = a → GIoU = 0.5
        let a = BoxCxcywh::new(0.0, 0.0, 1.0, 1.0);
        let b = BoxCxcywh::new(0.0, 0.25, 1.0, 0.5);
        assert!((giou(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_extent_is_rejected() {
        let a = BoxCxcywh::new(0.0, 0.0, 1.0, 0.0);
        let b = BoxCxcywh::new(0.0, 0.0, 1.0, 1.0);
        assert!(giou(&a, &b).is_err());
    }

    #[test]
    fn hull_is_tight() {
        let pts = [[0.1, 0.9], [0.4, 0.2], [0.3, 0.5]];
        let h = BoxCxcywh::hull_of(&pts);
        assert!((h.cx - 0.25).abs() < 1e-15);
        assert!((h.w - 0.3).abs() < 1e-15);
        assert!((h.h - 0.7).abs() < 1e-15);
    }
}
