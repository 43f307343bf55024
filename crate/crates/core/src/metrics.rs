//! Pose-accuracy metrics: mean model-point displacement (plain and
//! closest-point variants), area under the accuracy-threshold curve, recall
//! at fixed thresholds, and per-class report assembly.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::geometry::{PointCloud, Pose};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("unknown class id {0}")]
    UnknownClass(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// One pose estimate to score: identifiers, estimate with detection score,
/// groundtruth, and the class model (cloud index plus diameter).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub scene_id: u32,
    pub image_id: u32,
    pub class_id: usize,
    pub estimate: Pose,
    pub score: f64,
    pub groundtruth: Pose,
    /// Index into the model-cloud registry handed to [`evaluate`].
    pub model: usize,
    /// Object diameter in meters (> 0).
    pub diameter: f64,
}

/// Mean L2 distance between the model points placed at the groundtruth and
/// estimated poses, paired point-by-point.
pub fn add_error(gt: &Pose, pred: &Pose, model: &PointCloud) -> f64 {
    let mut acc = 0.0;
    for x in model.points() {
        acc += (gt.transform(*x) - pred.transform(*x)).norm();
    }
    acc / model.len() as f64
}

/// Closest-point variant for symmetric objects: each groundtruth-placed
/// point is matched to its nearest estimated-placed point.
pub fn adds_error(gt: &Pose, pred: &Pose, model: &PointCloud) -> f64 {
    let placed: Vec<_> = model.points().iter().map(|x| pred.transform(*x)).collect();
    let mut acc = 0.0;
    for x in model.points() {
        let g = gt.transform(*x);
        let mut best = f64::INFINITY;
        for p in &placed {
            let d = (g - *p).norm_sq();
            if d < best {
                best = d;
            }
        }
        acc += libm::sqrt(best);
    }
    acc / model.len() as f64
}

/// Area under the accuracy-threshold curve up to `max_threshold`, via the
/// closed form `mean(max(0, 1 − e/max_threshold))` — exactly the normalized
/// integral of the empirical accuracy curve, with no bin-count knob.
pub fn auc(errors: &[f64], max_threshold: f64) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if max_threshold <= 0.0 {
        return Err(MetricsError::InvalidArgument("threshold must be > 0"));
    }
    let mut acc = 0.0;
    for &e in errors {
        acc += (1.0 - e / max_threshold).max(0.0);
    }
    Ok(acc / errors.len() as f64)
}

/// Fraction of records whose error beats its per-record threshold.
pub fn recall_at(errors: &[f64], thresholds: &[f64]) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if errors.len() != thresholds.len() {
        return Err(MetricsError::InvalidArgument(
            "one threshold per error expected",
        ));
    }
    let hits = errors
        .iter()
        .zip(thresholds)
        .filter(|(e, t)| *e < *t)
        .count();
    Ok(hits as f64 / errors.len() as f64)
}

/// Aggregates for one class (or the unweighted mean row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub class_id: Option<usize>,
    pub count: usize,
    /// AUC of the plain displacement error.
    pub auc_add: f64,
    /// AUC of the closest-point error.
    pub auc_adds: f64,
    /// AUC of the symmetry-aware combination (closest-point for symmetric
    /// classes, plain otherwise).
    pub auc_add_s: f64,
    /// Recall of the combined error below 0.1 m.
    pub ar_01m: f64,
    /// Recall of the combined error below 0.1 × object diameter.
    pub ar_01d: f64,
}

/// Per-class rows plus the unweighted mean over the classes present.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    pub mean: ClassMetrics,
}

pub const AUC_MAX_THRESHOLD_M: f64 = 0.1;
pub const AR_FIXED_THRESHOLD_M: f64 = 0.1;
pub const AR_DIAMETER_FACTOR: f64 = 0.1;

/// Scores every record and assembles per-class rows (ascending class id)
/// plus their unweighted mean. The symmetry-aware error dispatches to the
/// closest-point variant for classes in `symmetric_classes`.
pub fn evaluate(
    records: &[EvalRecord],
    models: &[PointCloud],
    symmetric_classes: &[usize],
) -> Result<MetricReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    struct Bucket {
        add: Vec<f64>,
        adds: Vec<f64>,
        combined: Vec<f64>,
        diam_thresholds: Vec<f64>,
    }
    let mut per_class: BTreeMap<usize, Bucket> = BTreeMap::new();
    for r in records {
        if r.diameter <= 0.0 {
            return Err(MetricsError::InvalidArgument("diameter must be > 0"));
        }
        let model = models
            .get(r.model)
            .ok_or(MetricsError::UnknownClass(r.class_id))?;
        let add = add_error(&r.groundtruth, &r.estimate, model);
        let adds = adds_error(&r.groundtruth, &r.estimate, model);
        let combined = if symmetric_classes.contains(&r.class_id) {
            adds
        } else {
            add
        };
        let bucket = per_class.entry(r.class_id).or_insert_with(|| Bucket {
            add: Vec::new(),
            adds: Vec::new(),
            combined: Vec::new(),
            diam_thresholds: Vec::new(),
        });
        bucket.add.push(add);
        bucket.adds.push(adds);
        bucket.combined.push(combined);
        bucket.diam_thresholds.push(AR_DIAMETER_FACTOR * r.diameter);
    }

    let mut rows = Vec::new();
    for (class_id, b) in &per_class {
        let fixed: Vec<f64> = core::iter::repeat(AR_FIXED_THRESHOLD_M)
            .take(b.combined.len())
            .collect();
        rows.push(ClassMetrics {
            class_id: Some(*class_id),
            count: b.combined.len(),
            auc_add: auc(&b.add, AUC_MAX_THRESHOLD_M)?,
            auc_adds: auc(&b.adds, AUC_MAX_THRESHOLD_M)?,
            auc_add_s: auc(&b.combined, AUC_MAX_THRESHOLD_M)?,
            ar_01m: recall_at(&b.combined, &fixed)?,
            ar_01d: recall_at(&b.combined, &b.diam_thresholds)?,
        });
    }
    let n = rows.len() as f64;
    let mean = ClassMetrics {
        class_id: None,
        count: records.len(),
        auc_add: rows.iter().map(|r| r.auc_add).sum::<f64>() / n,
        auc_adds: rows.iter().map(|r| r.auc_adds).sum::<f64>() / n,
        auc_add_s: rows.iter().map(|r| r.auc_add_s).sum::<f64>() / n,
        ar_01m: rows.iter().map(|r| r.ar_01m).sum::<f64>() / n,
        ar_01d: rows.iter().map(|r| r.ar_01d).sum::<f64>() / n,
    };
    Ok(MetricReport {
        per_class: rows,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Cuboid, Rotation};
    use crate::linalg::Vec3;
    use crate::rng::SeedStream;

    fn cube_cloud() -> PointCloud {
        let c = Cuboid::new(Vec3::ZERO, Vec3::new(0.5, 0.5, 0.5)).unwrap();
        PointCloud::new(c.corners().to_vec()).unwrap()
    }

    fn pose(t: Vec3) -> Pose {
        Pose::new(Rotation::IDENTITY, t)
    }

    #[test]
    fn identical_poses_have_zero_error() {
        let p = pose(Vec3::new(0.0, 0.0, 1.0));
        let m = cube_cloud();
        assert_eq!(add_error(&p, &p, &m), 0.0);
        assert_eq!(adds_error(&p, &p, &m), 0.0);
    }

    #[test]
    fn pure_translation_shift_is_exact() {
        let gt = pose(Vec3::new(0.0, 0.0, 1.0));
        let pr = pose(Vec3::new(0.01, 0.0, 1.0));
        let m = cube_cloud();
        assert!((add_error(&gt, &pr, &m) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn half_turn_displacement_matches_hand_computation() {
        // unit-cube corners rotated 180° about z move 2·√(x²+y²) = 2·√0.5
        let gt = pose(Vec3::new(0.0, 0.0, 1.0));
        let pr = Pose::new(
            Rotation::about_z(core::f64::consts::PI),
            Vec3::new(0.0, 0.0, 1.0),
        );
        let m = cube_cloud();
        let expect = 2.0 * libm::sqrt(0.5);
        assert!((add_error(&gt, &pr, &m) - expect).abs() < 1e-12);
    }

    #[test]
    fn closest_point_error_vanishes_for_a_symmetric_turn() {
        let pts: Vec<Vec3> = (0..8)
            .map(|k| {
                let a = k as f64 * core::f64::consts::PI / 4.0;
                Vec3::new(0.2 * libm::cos(a), 0.2 * libm::sin(a), 0.0)
            })
            .collect();
        let circle = PointCloud::new(pts).unwrap();
        let gt = pose(Vec3::new(0.0, 0.0, 1.0));
        let pr = Pose::new(
            Rotation::about_z(core::f64::consts::PI / 4.0),
            Vec3::new(0.0, 0.0, 1.0),
        );
        assert!(adds_error(&gt, &pr, &circle) < 1e-12);
        assert!(add_error(&gt, &pr, &circle) > 0.01);
    }

    #[test]
    fn closest_point_never_exceeds_paired_error() {
        let mut s = SeedStream::new(3, "adds-vs-add");
        let m = cube_cloud();
        for _ in 0..100 {
            let r = loop {
                if let Ok(r) = Rotation::from_quaternion(
                    s.normal(),
                    s.normal(),
                    s.normal(),
                    s.normal(),
                ) {
                    break r;
                }
            };
            let gt = pose(Vec3::new(0.0, 0.0, 1.0));
            let pr = Pose::new(r, Vec3::new(s.range(-0.1, 0.1), 0.0, 1.0));
            assert!(adds_error(&gt, &pr, &m) <= add_error(&gt, &pr, &m) + 1e-12);
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0, 0.0], 0.1).unwrap(), 1.0);
        let v = auc(&[0.0, 0.05, 0.2], 0.1).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(auc(&[0.15, 0.3], 0.1).unwrap(), 0.0);
        assert!(auc(&[], 0.1).is_err());
    }

    #[test]
    fn auc_is_monotone_and_permutation_invariant() {
        let mut s = SeedStream::new(5, "auc-prop");
        for _ in 0..100 {
            let mut errs: Vec<f64> = (0..10).map(|_| s.range(0.0, 0.2)).collect();
            let base = auc(&errs, 0.1).unwrap();
            let k = s.below(10);
            let bumped = {
                let mut e = errs.clone();
                e[k] += 0.01;
                auc(&e, 0.1).unwrap()
            };
            assert!(bumped <= base + 1e-15);
            s.shuffle(&mut errs);
            assert!((auc(&errs, 0.1).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at(&[0.0, 0.0], &[0.1, 0.1]).unwrap(), 1.0);
        assert_eq!(recall_at(&[0.05, 0.2], &[0.1, 0.1]).unwrap(), 0.5);
        // diameter rule: 0.015 < 0.1·0.2
        assert_eq!(recall_at(&[0.015], &[0.02]).unwrap(), 1.0);
        assert!(recall_at(&[], &[]).is_err());
    }

    #[test]
    fn single_perfect_record_scores_one_everywhere() {
        let m = cube_cloud();
        let p = pose(Vec3::new(0.0, 0.0, 1.0));
        let rec = EvalRecord {
            scene_id: 0,
            image_id: 0,
            class_id: 2,
            estimate: p,
            score: 1.0,
            groundtruth: p,
            model: 0,
            diameter: 0.3,
        };
        let report = evaluate(&[rec], core::slice::from_ref(&m), &[]).unwrap();
        assert_eq!(report.per_class.len(), 1);
        let row = report.per_class[0];
        assert_eq!(row.auc_add, 1.0);
        assert_eq!(row.auc_adds, 1.0);
        assert_eq!(row.auc_add_s, 1.0);
        assert_eq!(row.ar_01m, 1.0);
        assert_eq!(row.ar_01d, 1.0);
        assert_eq!(report.mean.auc_add_s, 1.0);
    }

    #[test]
    fn symmetric_toggle_never_lowers_combined_auc() {
        let mut s = SeedStream::new(9, "sym-toggle");
        let m = cube_cloud();
        let records: Vec<EvalRecord> = (0..50)
            .map(|i| {
                let r = loop {
                    if let Ok(r) = Rotation::from_quaternion(
                        s.normal(),
                        s.normal(),
                        s.normal(),
                        s.normal(),
                    ) {
                        break r;
                    }
                };
                EvalRecord {
                    scene_id: 0,
                    image_id: i,
                    class_id: 1,
                    estimate: Pose::new(r, Vec3::new(0.0, 0.0, 1.0)),
                    score: 1.0,
                    groundtruth: pose(Vec3::new(0.0, 0.0, 1.0)),
                    model: 0,
                    diameter: 1.7,
                }
            })
            .collect();
        let plain = evaluate(&records, core::slice::from_ref(&m), &[]).unwrap();
        let toggled = evaluate(&records, core::slice::from_ref(&m), &[1]).unwrap();
        assert!(toggled.mean.auc_add_s >= plain.mean.auc_add_s - 1e-15);
    }

    #[test]
    fn unknown_model_is_reported() {
        let p = pose(Vec3::new(0.0, 0.0, 1.0));
        let rec = EvalRecord {
            scene_id: 0,
            image_id: 0,
            class_id: 7,
            estimate: p,
            score: 1.0,
            groundtruth: p,
            model: 3,
            diameter: 0.3,
        };
        assert!(matches!(
            evaluate(&[rec], &[], &[]),
            Err(MetricsError::UnknownClass(7))
        ));
    }

    #[test]
    fn evaluate_matches_naive_recomputation() {
        // independent oracle: recompute every aggregate with plain loops
        let mut s = SeedStream::new(21, "metrics-oracle");
        let m = cube_cloud();
        let models = [m];
        let mut records = Vec::new();
        for i in 0..200 {
            let r = loop {
                if let Ok(r) = Rotation::from_quaternion(
                    s.normal(),
                    s.normal(),
                    s.normal(),
                    s.normal(),
                ) {
                    break r;
                }
            };
            records.push(EvalRecord {
                scene_id: 0,
                image_id: i,
                class_id: (i % 3) as usize,
                estimate: Pose::new(
                    r,
                    Vec3::new(s.range(-0.02, 0.02), s.range(-0.02, 0.02), 1.0),
                ),
                score: 1.0,
                groundtruth: pose(Vec3::new(0.0, 0.0, 1.0)),
                model: 0,
                diameter: s.range(0.2, 1.5),
            });
        }
        let sym = [1usize];
        let report = evaluate(&records, &models, &sym).unwrap();

        for class in 0..3usize {
            let subset: Vec<&EvalRecord> =
                records.iter().filter(|r| r.class_id == class).collect();
            let mut auc_acc = 0.0;
            let mut hits_m = 0usize;
            let mut hits_d = 0usize;
            for r in &subset {
                let add = add_error(&r.groundtruth, &r.estimate, &models[0]);
                let adds = adds_error(&r.groundtruth, &r.estimate, &models[0]);
                let combined = if sym.contains(&r.class_id) { adds } else { add };
                auc_acc += (1.0 - combined / 0.1).max(0.0);
                if combined < 0.1 {
                    hits_m += 1;
                }
                if combined < 0.1 * r.diameter {
                    hits_d += 1;
                }
            }
            let row = report
                .per_class
                .iter()
                .find(|r| r.class_id == Some(class))
                .unwrap();
            assert!((row.auc_add_s - auc_acc / subset.len() as f64).abs() < 1e-12);
            assert!((row.ar_01m - hits_m as f64 / subset.len() as f64).abs() < 1e-12);
            assert!((row.ar_01d - hits_d as f64 / subset.len() as f64).abs() < 1e-12);
        }
    }
}
