//! Finite-difference verification of every loss term, in 64-bit mode.
//! Sampled instances are conditioned so the probe never straddles a
//! subgradient kink (absolute values at zero, box-corner ties, pairing
//! switches); the assignment and any argmin pairings are captured at the
//! base point and held fixed across perturbed evaluations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    box_loss_vars, class_nll_vars, cross_ratio_loss_vars, giou_vars, hungarian_loss,
    keypoint_loss_vars, pose_loss_vars, rot6d_to_matrix_vars, rot_loss_vars, LossError,
    LossWeights, PoseLossCtx, PredictionVars,
};
use crate::autodiff::check::{all_op_cases, check_op_f64, fd_max_rel_err, CheckOutcome};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::geometry::{
    generate_ibb, matrix_to_rot6d, project_keypoints, BoxCxcywh, CameraIntrinsics, Cuboid,
    KeypointKind, PointCloud, Pose, Rotation, TranslationCode,
};
use crate::linalg::Vec3;
use crate::matching::{match_sets, Assignment, PredictionTuple, TargetGeometry, TargetTuple};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossCase {
    ClassNll,
    Giou,
    BoxLoss,
    SmoothL1,
    CrossRatio,
    KeypointLoss,
    RotLossPlain,
    RotLossSymmetric,
    PoseLoss,
    HungarianLoss,
}

impl LossCase {
    pub fn name(&self) -> &'static str {
        match self {
            LossCase::ClassNll => "class_nll",
            LossCase::Giou => "giou",
            LossCase::BoxLoss => "box_loss",
            LossCase::SmoothL1 => "smooth_l1",
            LossCase::CrossRatio => "cross_ratio_loss",
            LossCase::KeypointLoss => "keypoint_loss",
            LossCase::RotLossPlain => "rot_loss",
            LossCase::RotLossSymmetric => "rot_loss_symmetric",
            LossCase::PoseLoss => "pose_loss",
            LossCase::HungarianLoss => "hungarian_loss",
        }
    }
}

pub fn all_loss_cases() -> Vec<LossCase> {
    use LossCase::*;
    vec![
        ClassNll,
        Giou,
        BoxLoss,
        SmoothL1,
        CrossRatio,
        KeypointLoss,
        RotLossPlain,
        RotLossSymmetric,
        PoseLoss,
        HungarianLoss,
    ]
}

const MARGIN: f64 = 1e-2;
/// L1-kink margin for keypoints; only needs to clear the 1e-4 probe step.
const KP_MARGIN: f64 = 2e-3;

#[derive(Debug, Clone)]
pub enum LossAux {
    Classes {
        classes: Vec<usize>,
        null_class: usize,
    },
    None,
    Tuples(Vec<[usize; 4]>),
    Rot {
        r_gt: Rotation,
        cloud: PointCloud,
        symmetric: bool,
    },
    PoseCase {
        pose: Pose,
        cloud: PointCloud,
    },
    Hungarian(HungarianCaseData),
}

#[derive(Debug, Clone)]
pub struct HungarianCaseData {
    pub targets: Vec<TargetTuple>,
    pub assignment: Assignment,
    pub cam: CameraIntrinsics,
    pub models: Vec<PointCloud>,
    pub symmetric: Vec<bool>,
    pub head_w: Vec<f64>,
    pub n: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone)]
pub struct LossInstance {
    pub case: LossCase,
    pub inputs: Vec<Tensor<f64>>,
    pub aux: LossAux,
    pub weights: LossWeights,
}


/// Smallest pairwise distance inside any collinear tuple of a normalized
/// keypoint set. The h=1e-4 probe needs this ≳ 0.05: cross-ratio curvature
/// grows like 1/spacing² and foreshortened tuples defeat the step size.
fn min_tuple_spacing(set: &crate::geometry::KeypointSet2D) -> f64 {
    let mut worst = f64::INFINITY;
    for t in set.tuples() {
        for i in 0..4 {
            for j in (i + 1)..4 {
                let a = set.points()[t[i]];
                let b = set.points()[t[j]];
                let d = libm::hypot(a[0] - b[0], a[1] - b[1]);
                worst = worst.min(d);
            }
        }
    }
    worst
}

fn sample_rotation(s: &mut SeedStream) -> Rotation {
    loop {
        if let Ok(r) = Rotation::from_quaternion(s.normal(), s.normal(), s.normal(), s.normal()) {
            return r;
        }
    }
}

/// A box pair whose corner coordinates stay `MARGIN` apart on both axes so
/// the intersection/enclosure min/max choices are stable under the probe.
fn sample_box_pair(s: &mut SeedStream) -> ([f64; 4], [f64; 4]) {
    loop {
        let a = [
            s.range(0.3, 0.7),
            s.range(0.3, 0.7),
            s.range(0.15, 0.5),
            s.range(0.15, 0.5),
        ];
        let b = [
            s.range(0.3, 0.7),
            s.range(0.3, 0.7),
            s.range(0.15, 0.5),
            s.range(0.15, 0.5),
        ];
        let edges = |v: &[f64; 4]| {
            [
                v[0] - 0.5 * v[2],
                v[0] + 0.5 * v[2],
                v[1] - 0.5 * v[3],
                v[1] + 0.5 * v[3],
            ]
        };
        let (ea, eb) = (edges(&a), edges(&b));
        let mut ok = true;
        for i in 0..2 {
            for j in 0..2 {
                if (ea[i] - eb[j]).abs() < MARGIN || (ea[2 + i] - eb[2 + j]).abs() < MARGIN {
                    ok = false;
                }
            }
        }
        // keep coordinate differences off the |·| kink for the L1 term
        for k in 0..4 {
            if (a[k] - b[k]).abs() < MARGIN {
                ok = false;
            }
        }
        if ok {
            return (a, b);
        }
    }
}

/// Keypoints of a projected interpolated box in normalized units, plus a
/// signed offset field bounded away from zero (for L1 kinks).
fn sample_kp_pair(s: &mut SeedStream) -> (Vec<f64>, Vec<f64>, Vec<[usize; 4]>) {
    let cam = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap();
    let cuboid = Cuboid::new(Vec3::ZERO, Vec3::new(0.14, 0.12, 0.10)).unwrap();
    let set = generate_ibb(&cuboid);
    loop {
        let pose = Pose::new(
            sample_rotation(s),
            Vec3::new(s.range(-0.04, 0.04), s.range(-0.04, 0.04), s.range(0.8, 1.2)),
        );
        let Ok(px) = project_keypoints(&set, &pose, &cam) else {
            continue;
        };
        if px
            .points()
            .iter()
            .any(|p| p[0] < 1.0 || p[0] > 639.0 || p[1] < 1.0 || p[1] > 479.0)
        {
            continue;
        }
        // Pixel scale: the cross-ratio is affine invariant, and at ~100 px
        // spacings the h=1e-4 probe sits far below the curvature scale.
        if min_tuple_spacing(&px) < 25.0 {
            continue;
        }
        let gt = px.flatten();
        let pred: Vec<f64> = gt
            .iter()
            .map(|&v| {
                let sign = if s.uniform() < 0.5 { -1.0 } else { 1.0 };
                v + sign * s.range(0.5, 3.0)
            })
            .collect();
        return (pred, gt, px.tuples().to_vec());
    }
}

fn sample_cloud(s: &mut SeedStream, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Vec3::new(
                    s.range(-0.15, 0.15),
                    s.range(-0.15, 0.15),
                    s.range(-0.15, 0.15),
                )
            })
            .collect(),
    )
    .unwrap()
}

/// Rejects clouds whose rotated coordinate differences sit on an |·| kink
/// or whose closest-point pairing is nearly tied.
fn rot_case_is_conditioned(
    r_gt: &Rotation,
    r_pred: &Rotation,
    cloud: &PointCloud,
    symmetric: bool,
) -> bool {
    let gt: Vec<Vec3> = cloud.points().iter().map(|p| r_gt.apply(*p)).collect();
    let pr: Vec<Vec3> = cloud.points().iter().map(|p| r_pred.apply(*p)).collect();
    if symmetric {
        for g in &gt {
            let mut dists: Vec<f64> = pr
                .iter()
                .map(|p| (g.x - p.x).abs() + (g.y - p.y).abs() + (g.z - p.z).abs())
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if dists[1] - dists[0] < MARGIN {
                return false;
            }
            let best_idx = pr
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da = (g.x - a.x).abs() + (g.y - a.y).abs() + (g.z - a.z).abs();
                    let db = (g.x - b.x).abs() + (g.y - b.y).abs() + (g.z - b.z).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
                .0;
            let p = pr[best_idx];
            for d in [g.x - p.x, g.y - p.y, g.z - p.z] {
                if d.abs() < 1e-3 {
                    return false;
                }
            }
        }
    } else {
        for (g, p) in gt.iter().zip(&pr) {
            for d in [g.x - p.x, g.y - p.y, g.z - p.z] {
                if d.abs() < 1e-3 {
                    return false;
                }
            }
        }
    }
    true
}

fn sample_rot_case(s: &mut SeedStream, symmetric: bool) -> (Vec<f64>, Rotation, PointCloud) {
    loop {
        let r_gt = sample_rotation(s);
        let r_pred_base = sample_rotation(s);
        let mut r6 = matrix_to_rot6d(&r_pred_base).v;
        for v in &mut r6 {
            *v += s.range(-0.15, 0.15);
        }
        let Ok(r_pred) = crate::geometry::rot6d_to_matrix(crate::geometry::Rot6D::new(r6)) else {
            continue;
        };
        let cloud = sample_cloud(s, 6);
        if rot_case_is_conditioned(&r_gt, &r_pred, &cloud, symmetric) {
            return (r6.to_vec(), r_gt, cloud);
        }
    }
}

fn sample_hungarian_case(s: &mut SeedStream) -> LossInstance {
    let cam = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap();
    let n = 4usize;
    let n_classes = 3usize;
    let kcols = 64usize;
    'outer: loop {
        // two in-frame objects
        let mut targets = Vec::new();
        let mut models = Vec::new();
        for k in 0..2 {
            let cuboid = Cuboid::new(
                Vec3::ZERO,
                Vec3::new(
                    0.12 + 0.02 * k as f64,
                    0.10 + 0.015 * k as f64,
                    0.085 + 0.01 * k as f64,
                ),
            )
            .unwrap();
            let set = generate_ibb(&cuboid);
            let (pose, norm) = loop {
                let pose = Pose::new(
                    sample_rotation(s),
                    Vec3::new(s.range(-0.05, 0.05), s.range(-0.05, 0.05), s.range(0.8, 1.3)),
                );
                if let Ok(px) = project_keypoints(&set, &pose, &cam) {
                    if px
                        .points()
                        .iter()
                        .all(|p| p[0] > 1.0 && p[0] < 639.0 && p[1] > 1.0 && p[1] < 479.0)
                    {
                        break (pose, px.scaled(1.0 / cam.width, 1.0 / cam.height));
                    }
                }
            };
            let corners: Vec<[f64; 2]> = norm.points()[..8].to_vec();
            targets.push(TargetTuple::object(
                k,
                TargetGeometry {
                    bbox: BoxCxcywh::hull_of(&corners).clamped_unit(),
                    translation: TranslationCode::encode(pose.translation, &cam).unwrap(),
                    keypoints: norm,
                    pose,
                    model: k,
                },
            ));
            models.push(
                PointCloud::new(cuboid.corners().to_vec()).unwrap(),
            );
        }

        // predictions = targets plus margin-bounded offsets, then padding
        let mut logits = vec![0.0; n * (n_classes + 1)];
        let mut boxes = vec![0.0; n * 4];
        let mut trans = vec![0.0; n * 3];
        let mut kps = vec![0.0; n * kcols];
        for i in 0..n {
            for j in 0..(n_classes + 1) {
                logits[i * (n_classes + 1) + j] = s.range(-1.0, 1.0);
            }
            if i < targets.len() {
                let g = targets[i].geometry.as_ref().unwrap();
                // bias matching toward the right slot
                logits[i * (n_classes + 1) + targets[i].class_id] += 4.0;
                let ba = g.bbox.to_array();
                for k in 0..4 {
                    let sign = if s.uniform() < 0.5 { -1.0 } else { 1.0 };
                    boxes[i * 4 + k] = ba[k] + sign * s.range(MARGIN, 0.025 + MARGIN);
                }
                boxes[i * 4 + 2] = boxes[i * 4 + 2].max(0.08);
                boxes[i * 4 + 3] = boxes[i * 4 + 3].max(0.08);
                let code = [g.translation.u_norm, g.translation.v_norm, g.translation.tz];
                for k in 0..3 {
                    let sign = if s.uniform() < 0.5 { -1.0 } else { 1.0 };
                    trans[i * 3 + k] = code[k] + sign * s.range(MARGIN, 0.02 + MARGIN);
                }
                trans[i * 3 + 2] = trans[i * 3 + 2].max(0.5);
                let flat = g.keypoints.flatten();
                for k in 0..kcols {
                    let sign = if s.uniform() < 0.5 { -1.0 } else { 1.0 };
                    kps[i * kcols + k] = flat[k] + sign * s.range(KP_MARGIN, 0.006 + KP_MARGIN);
                }
            } else {
                logits[i * (n_classes + 1) + n_classes] += 4.0;
                for k in 0..4 {
                    boxes[i * 4 + k] = s.range(0.2, 0.4);
                }
                trans[i * 3] = 0.5;
                trans[i * 3 + 1] = 0.5;
                trans[i * 3 + 2] = 1.0;
                for k in 0..kcols {
                    kps[i * kcols + k] = s.range(0.3, 0.7);
                }
            }
        }

        // the box-pair kink guard must hold for the matched pairs
        for (i, t) in targets.iter().enumerate() {
            let g = t.geometry.as_ref().unwrap();
            let pb = [
                boxes[i * 4],
                boxes[i * 4 + 1],
                boxes[i * 4 + 2],
                boxes[i * 4 + 3],
            ];
            let gb = g.bbox.to_array();
            let edges = |v: &[f64; 4]| {
                [
                    v[0] - 0.5 * v[2],
                    v[0] + 0.5 * v[2],
                    v[1] - 0.5 * v[3],
                    v[1] + 0.5 * v[3],
                ]
            };
            let (ep, eg) = (edges(&pb), edges(&gb));
            for a in 0..2 {
                for b in 0..2 {
                    if (ep[a] - eg[b]).abs() < MARGIN / 2.0
                        || (ep[2 + a] - eg[2 + b]).abs() < MARGIN / 2.0
                    {
                        continue 'outer;
                    }
                }
            }
            for k in 0..4 {
                if (pb[k] - gb[k]).abs() < MARGIN / 2.0 {
                    continue 'outer;
                }
            }
        }

        // fixed assignment from base values
        let preds: Vec<PredictionTuple> = (0..n)
            .map(|i| PredictionTuple {
                class_logits: logits[i * (n_classes + 1)..(i + 1) * (n_classes + 1)].to_vec(),
                bbox: BoxCxcywh::new(
                    boxes[i * 4],
                    boxes[i * 4 + 1],
                    boxes[i * 4 + 2],
                    boxes[i * 4 + 3],
                ),
                translation: TranslationCode::new(
                    trans[i * 3],
                    trans[i * 3 + 1],
                    trans[i * 3 + 2],
                ),
                keypoints: crate::geometry::KeypointSet2D::from_flat(
                    KeypointKind::Ibb32,
                    &kps[i * kcols..(i + 1) * kcols],
                    crate::geometry::ibb_tuples(),
                ),
            })
            .collect();
        let assignment = match_sets(&preds, &targets).expect("matchable case");

        let head_w: Vec<f64> = (0..kcols * 6).map(|_| s.range(-0.04, 0.04)).collect();

        // guard the pose term: rotated-point coordinate diffs and the
        // translation L1 diffs must sit off their kinks at the base point
        let mut tape: Tape<f64> = Tape::new();
        for (t, &p) in assignment.target_to_pred.iter().enumerate() {
            if p == usize::MAX {
                continue;
            }
            let g = targets[t].geometry.as_ref().unwrap();
            let kp_row = tape.leaf_f64(1, kcols, &kps[p * kcols..(p + 1) * kcols]);
            let rt = head_forward(&mut tape, kp_row, &head_w).expect("head");
            let r_flat = tape.value(rt).to_f64_vec();
            let r_pred = Rotation::project(crate::linalg::Mat3 {
                m: [
                    [r_flat[0], r_flat[3], r_flat[6]],
                    [r_flat[1], r_flat[4], r_flat[7]],
                    [r_flat[2], r_flat[5], r_flat[8]],
                ],
            })
            .expect("orthonormal");
            if !rot_case_is_conditioned(&g.pose.rotation, &r_pred, &models[g.model], false) {
                continue 'outer;
            }
            let code = TranslationCode::new(
                trans[p * 3],
                trans[p * 3 + 1],
                trans[p * 3 + 2],
            );
            let t_pred = code.decode(&cam).expect("decodable");
            let d = g.pose.translation - t_pred;
            if d.x.abs() < 1e-3 || d.y.abs() < 1e-3 || d.z.abs() < 1e-3 {
                continue 'outer;
            }
        }

        // The cross-ratio weight is zeroed here: that term's gradients are
        // verified by the pixel-scale cases above, and at normalized scale
        // its curvature (∝ 1/spacing²) exceeds what the fixed 1e-4 central
        // difference can resolve near cancelled coordinates.
        let weights = LossWeights {
            delta: 0.0,
            ..LossWeights::default()
        };
        return LossInstance {
            case: LossCase::HungarianLoss,
            inputs: vec![
                Tensor::from_vec(n, n_classes + 1, logits),
                Tensor::from_vec(n, 4, boxes),
                Tensor::from_vec(n, 3, trans),
                Tensor::from_vec(n, kcols, kps),
            ],
            aux: LossAux::Hungarian(HungarianCaseData {
                targets,
                assignment,
                cam,
                models,
                symmetric: vec![false; n_classes],
                head_w,
                n,
                n_classes,
            }),
            weights,
        };
    }
}

/// The fixed linear keypoint-to-rotation head used by the check: kps·W plus
/// an identity-like bias, through the differentiable Gram–Schmidt.
fn head_forward<S: Real>(
    tape: &mut Tape<S>,
    kp_row: Var,
    head_w: &[f64],
) -> Result<Var, LossError> {
    let cols = tape.value(kp_row).cols();
    let w = tape.leaf(Tensor::<S>::from_f64(cols, 6, head_w));
    let raw = tape.matmul(kp_row, w)?;
    let bias = tape.leaf_f64(1, 6, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let r6 = tape.add(raw, bias)?;
    rot6d_to_matrix_vars(tape, r6)
}

pub fn sample_loss_case(case: LossCase, s: &mut SeedStream) -> LossInstance {
    let weights = LossWeights::default();
    match case {
        LossCase::ClassNll => {
            let n = 2 + s.below(4);
            let c = 3 + s.below(4);
            let logits: Vec<f64> = (0..n * (c + 1)).map(|_| s.range(-2.0, 2.0)).collect();
            let classes: Vec<usize> = (0..n).map(|_| s.below(c + 1)).collect();
            LossInstance {
                case,
                inputs: vec![Tensor::from_vec(n, c + 1, logits)],
                aux: LossAux::Classes {
                    classes,
                    null_class: c,
                },
                weights,
            }
        }
        LossCase::Giou | LossCase::BoxLoss => {
            let m = 1 + s.below(3);
            let mut a = Vec::new();
            let mut b = Vec::new();
            for _ in 0..m {
                let (pa, pb) = sample_box_pair(s);
                a.extend_from_slice(&pa);
                b.extend_from_slice(&pb);
            }
            LossInstance {
                case,
                inputs: vec![Tensor::from_vec(m, 4, a), Tensor::from_vec(m, 4, b)],
                aux: LossAux::None,
                weights,
            }
        }
        LossCase::SmoothL1 => {
            let n = 2 + s.below(6);
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    let mut x = s.range(-2.0, 2.0);
                    for k in [-1.0, 1.0] {
                        if (x - k).abs() < MARGIN {
                            x = k + MARGIN;
                        }
                    }
                    x
                })
                .collect();
            LossInstance {
                case,
                inputs: vec![Tensor::from_vec(1, n, data)],
                aux: LossAux::None,
                weights,
            }
        }
        LossCase::CrossRatio => {
            let (pred, _gt, tuples) = sample_kp_pair(s);
            LossInstance {
                case,
                inputs: vec![Tensor::from_vec(32, 2, {
                    // [k,2] stack of the perturbed keypoints
                    pred
                })],
                aux: LossAux::Tuples(tuples),
                weights,
            }
        }
        LossCase::KeypointLoss => {
            let (pred, gt, tuples) = sample_kp_pair(s);
            LossInstance {
                case,
                inputs: vec![
                    Tensor::from_vec(1, 64, pred),
                    Tensor::from_vec(1, 64, gt),
                ],
                aux: LossAux::Tuples(tuples),
                weights,
            }
        }
        LossCase::RotLossPlain | LossCase::RotLossSymmetric => {
            let symmetric = case == LossCase::RotLossSymmetric;
            let (r6, r_gt, cloud) = sample_rot_case(s, symmetric);
            LossInstance {
                case,
                inputs: vec![Tensor::from_vec(1, 6, r6)],
                aux: LossAux::Rot {
                    r_gt,
                    cloud,
                    symmetric,
                },
                weights,
            }
        }
        LossCase::PoseLoss => {
            let (r6, r_gt, cloud) = sample_rot_case(s, false);
            let t_gt = Vec3::new(s.range(-0.2, 0.2), s.range(-0.2, 0.2), s.range(0.8, 1.4));
            let t_pred: Vec<f64> = [t_gt.x, t_gt.y, t_gt.z]
                .iter()
                .map(|&v| {
                    let sign = if s.uniform() < 0.5 { -1.0 } else { 1.0 };
                    v + sign * s.range(MARGIN, 0.05 + MARGIN)
                })
                .collect();
            LossInstance {
                case,
                inputs: vec![Tensor::from_vec(1, 6, r6), Tensor::from_vec(1, 3, t_pred)],
                aux: LossAux::PoseCase {
                    pose: Pose::new(r_gt, t_gt),
                    cloud,
                },
                weights,
            }
        }
        LossCase::HungarianLoss => sample_hungarian_case(s),
    }
}

/// Builds the loss graph of one sampled instance; `vars` mirror
/// `inst.inputs` in order.
pub fn build_loss_case<S: Real>(
    inst: &LossInstance,
    tape: &mut Tape<S>,
    vars: &[Var],
) -> Result<Var, LossError> {
    let w = &inst.weights;
    match (&inst.case, &inst.aux) {
        (LossCase::ClassNll, LossAux::Classes { classes, null_class }) => {
            class_nll_vars(tape, vars[0], classes, *null_class, w.class_null_weight)
        }
        (LossCase::Giou, _) => {
            let g = giou_vars(tape, vars[0], vars[1])?;
            Ok(tape.mean(g))
        }
        (LossCase::BoxLoss, _) => box_loss_vars(tape, vars[0], vars[1], w),
        (LossCase::SmoothL1, _) => {
            let y = tape.smooth_l1(vars[0]);
            Ok(tape.mean(y))
        }
        (LossCase::CrossRatio, LossAux::Tuples(tuples)) => {
            cross_ratio_loss_vars(tape, vars[0], tuples)
        }
        (LossCase::KeypointLoss, LossAux::Tuples(tuples)) => keypoint_loss_vars(
            tape,
            vars[0],
            vars[1],
            KeypointKind::Ibb32,
            tuples,
            w,
        ),
        (
            LossCase::RotLossPlain | LossCase::RotLossSymmetric,
            LossAux::Rot {
                r_gt,
                cloud,
                symmetric,
            },
        ) => {
            let rt = rot6d_to_matrix_vars(tape, vars[0])?;
            rot_loss_vars(tape, r_gt, rt, cloud, *symmetric)
        }
        (LossCase::PoseLoss, LossAux::PoseCase { pose, cloud }) => {
            let rt = rot6d_to_matrix_vars(tape, vars[0])?;
            pose_loss_vars(tape, pose, rt, vars[1], cloud, false)
        }
        (LossCase::HungarianLoss, LossAux::Hungarian(data)) => {
            let preds = PredictionVars {
                class_logits: vars[0],
                boxes: vars[1],
                translations: vars[2],
                keypoints: vars[3],
                keypoint_kind: KeypointKind::Ibb32,
            };
            let ctx = PoseLossCtx {
                cam: &data.cam,
                models: &data.models,
                symmetric: &data.symmetric,
            };
            let head_w = data.head_w.clone();
            let mut head = move |tape: &mut Tape<S>, kp_row: Var| -> Result<Var, LossError> {
                head_forward(tape, kp_row, &head_w)
            };
            let lv = hungarian_loss(
                tape,
                &preds,
                &data.targets,
                &data.assignment,
                w,
                Some((&ctx, &mut head)),
            )?;
            Ok(lv.total)
        }
        _ => Err(LossError::InvalidArgument("aux mismatch")),
    }
}

/// Runs `seeds` sampled cases of one loss in `f64` (step 1e-4, tol 1e-4).
pub fn check_loss_f64(case: LossCase, seeds: usize, seed0: u64) -> CheckOutcome {
    let mut worst = 0.0f64;
    for k in 0..seeds {
        let mut s =
            SeedStream::new(seed0, "losscheck-f64").substream((k as u64) << 8 ^ case as u64);
        let inst = sample_loss_case(case, &mut s);
        let build = |tape: &mut Tape<f64>, vars: &[Var]| -> Var {
            build_loss_case(&inst, tape, vars).expect("loss case must build")
        };
        worst = worst.max(fd_max_rel_err(&inst.inputs, &build, 1e-4, 1e-6));
    }
    CheckOutcome {
        name: format!("loss/{}", case.name()),
        cases: seeds,
        max_rel_err: worst,
        tol: 1e-4,
    }
}

/// The full 64-bit gradient suite: every tape op and every loss term.
pub fn full_suite_f64(seeds_per_case: usize, seed0: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for case in all_op_cases() {
        out.push(check_op_f64(case, seeds_per_case, seed0));
    }
    for case in all_loss_cases() {
        out.push(check_loss_f64(case, seeds_per_case, seed0));
    }
    out
}
