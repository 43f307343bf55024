use super::*;
use crate::geometry::{
    cross_ratio_sq, generate_bb8, generate_ibb, project_keypoints, BoxCxcywh, Cuboid, Pose,
    TranslationCode,
};
use crate::linalg::Vec3;
use crate::matching::{match_sets, PredictionTuple, TargetGeometry};
use crate::autodiff::Tensor;
use crate::rng::SeedStream;

fn cam() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap()
}

fn sample_rotation(s: &mut SeedStream) -> Rotation {
    loop {
        if let Ok(r) = Rotation::from_quaternion(s.normal(), s.normal(), s.normal(), s.normal()) {
            return r;
        }
    }
}

/// One in-frame object with exact projected targets.
struct Fixture {
    cam: CameraIntrinsics,
    target: TargetTuple,
    model: PointCloud,
}

fn fixture(seed: u64) -> Fixture {
    let cam = cam();
    let mut s = SeedStream::new(seed, "loss-fixture");
    let cuboid = Cuboid::new(Vec3::ZERO, Vec3::new(0.1, 0.07, 0.05)).unwrap();
    let set3d = generate_ibb(&cuboid);
    loop {
        let rotation = sample_rotation(&mut s);
        let t = Vec3::new(s.range(-0.1, 0.1), s.range(-0.1, 0.1), s.range(0.8, 1.5));
        let pose = Pose::new(rotation, t);
        let Ok(px) = project_keypoints(&set3d, &pose, &cam) else {
            continue;
        };
        if px
            .points()
            .iter()
            .any(|p| p[0] < 1.0 || p[0] > 639.0 || p[1] < 1.0 || p[1] > 479.0)
        {
            continue;
        }
        let norm = px.scaled(1.0 / cam.width, 1.0 / cam.height);
        let corners: Vec<[f64; 2]> = norm.points()[..8].to_vec();
        let bbox = BoxCxcywh::hull_of(&corners).clamped_unit();
        let translation = TranslationCode::encode(t, &cam).unwrap();
        let geometry = TargetGeometry {
            bbox,
            translation,
            keypoints: norm,
            pose,
            model: 0,
        };
        let model = PointCloud::new(cuboid.corners().to_vec()).unwrap();
        return Fixture {
            cam,
            target: TargetTuple::object(2, geometry),
            model,
        };
    }
}

#[test]
fn perfect_one_hot_class_nll_is_zero() {
    let mut logits = vec![vec![0.0; 22]; 4];
    let classes = [3usize, 7, 0, 21];
    for (row, &c) in logits.iter_mut().zip(classes.iter()) {
        row[c] = 20.0;
    }
    let nll = class_nll(&logits, &classes, 21, 0.4).unwrap();
    assert!(nll < 1e-6, "{nll}");
}

#[test]
fn uniform_logits_give_log_class_count() {
    let logits = vec![vec![0.0; 22]; 5];
    let classes = [1usize, 2, 3, 4, 5];
    let nll = class_nll(&logits, &classes, 21, 0.4).unwrap();
    assert!((nll - libm::log(22.0)).abs() < 1e-12);
}

#[test]
fn null_weight_cancels_in_normalized_mean() {
    // a single no-object row: 0.4·ln22 / 0.4 = ln22
    let logits = vec![vec![0.0; 22]];
    let nll = class_nll(&logits, &[21], 21, 0.4).unwrap();
    assert!((nll - libm::log(22.0)).abs() < 1e-12);
}

#[test]
fn mixed_null_weighting_matches_hand_computation() {
    // two perfect rows (0 loss) + one uniform null row
    let mut logits = vec![vec![0.0; 5]; 3];
    logits[0][1] = 30.0;
    logits[1][2] = 30.0;
    let nll = class_nll(&logits, &[1, 2, 4], 4, 0.4).unwrap();
    let expect = 0.4 * libm::log(5.0) / (1.0 + 1.0 + 0.4);
    assert!((nll - expect).abs() < 1e-9, "{nll} vs {expect}");
}

#[test]
fn tape_giou_matches_scalar_giou() {
    let mut s = SeedStream::new(5, "giou-xcheck");
    for _ in 0..200 {
        let a = BoxCxcywh::new(
            s.range(0.2, 0.8),
            s.range(0.2, 0.8),
            s.range(0.05, 0.5),
            s.range(0.05, 0.5),
        );
        let b = BoxCxcywh::new(
            s.range(0.2, 0.8),
            s.range(0.2, 0.8),
            s.range(0.05, 0.5),
            s.range(0.05, 0.5),
        );
        let expect = crate::geometry::giou(&a, &b).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let av = tape.leaf_f64(1, 4, &a.to_array());
        let bv = tape.leaf_f64(1, 4, &b.to_array());
        let g = giou_vars(&mut tape, av, bv).unwrap();
        assert!((tape.value(g).item() - expect).abs() < 1e-12);
    }
}

#[test]
fn box_loss_examples() {
    let w = LossWeights::default();
    let b = BoxCxcywh::new(0.5, 0.5, 0.2, 0.3);
    assert!(box_loss(&b, &b, &w).unwrap().abs() < 1e-15);

    // disjoint unit boxes: L1 = 2.0, GIoU = −0.5 → 5·2 + 2·1.5 = 13
    let a = BoxCxcywh::new(0.5, 0.5, 1.0, 1.0);
    let c = BoxCxcywh::new(1.5, 1.5, 1.0, 1.0);
    assert!((box_loss(&a, &c, &w).unwrap() - 13.0).abs() < 1e-12);

    // weighted-formula cross-check on a generic pair
    let d = BoxCxcywh::new(0.52, 0.47, 0.25, 0.31);
    let e = BoxCxcywh::new(0.5, 0.5, 0.2, 0.3);
    let expect = 5.0 * d.l1_to(&e) + 2.0 * (1.0 - crate::geometry::giou(&d, &e).unwrap());
    assert!((box_loss(&d, &e, &w).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn smooth_l1_examples() {
    assert_eq!(smooth_l1(0.0), 0.0);
    assert!((smooth_l1(0.5) - 0.125).abs() < 1e-15);
    assert!((smooth_l1(2.0) - 1.5).abs() < 1e-15);
    assert!((smooth_l1(-2.0) - 1.5).abs() < 1e-15);
}

#[test]
fn exact_projection_has_zero_cross_ratio_loss() {
    for seed in 0..20 {
        let f = fixture(seed);
        let kps = &f.target.geometry.as_ref().unwrap().keypoints;
        let loss = cross_ratio_loss(kps).unwrap();
        assert!(loss < 1e-10, "seed {seed}: {loss}");
    }
}

#[test]
fn corner_only_sets_have_zero_loss_by_convention() {
    let cuboid = Cuboid::new(Vec3::ZERO, Vec3::new(0.1, 0.1, 0.1)).unwrap();
    let set = generate_bb8(&cuboid);
    let pose = Pose::new(Rotation::IDENTITY, Vec3::new(0.0, 0.0, 1.0));
    let px = project_keypoints(&set, &pose, &cam()).unwrap();
    assert_eq!(cross_ratio_loss(&px).unwrap(), 0.0);
}

#[test]
fn cross_ratio_loss_matches_scalar_recomputation() {
    // Perturb one interior point; the loss must equal the tuple-wise scalar
    // recomputation through an independent path.
    let f = fixture(3);
    let mut kps = f.target.geometry.as_ref().unwrap().keypoints.clone();
    let mut pts = kps.points().to_vec();
    pts[8][0] += 0.02; // interior point of tuple 0 only
    kps = KeypointSet2D::from_parts(kps.kind(), pts, kps.tuples().to_vec());

    let mut expect = 0.0;
    for t in kps.tuples() {
        let p = |i: usize| kps.points()[i];
        let cr = cross_ratio_sq(p(t[0]), p(t[1]), p(t[2]), p(t[3])).unwrap();
        expect += smooth_l1(CROSS_RATIO_SQ_TARGET - cr);
    }
    expect /= kps.tuples().len() as f64;
    let got = cross_ratio_loss(&kps).unwrap();
    assert!((got - expect).abs() < 1e-12);
    assert!(got > 1e-9);
}

#[test]
fn cross_ratio_loss_is_shift_and_scale_invariant() {
    let f = fixture(7);
    let kps = f.target.geometry.as_ref().unwrap().keypoints.clone();
    let mut s = SeedStream::new(9, "cr-invariance");
    let base = cross_ratio_loss(&kps).unwrap();
    for scale in [0.5, 2.0] {
        let c = [s.range(-0.3, 0.3), s.range(-0.3, 0.3)];
        let moved = KeypointSet2D::from_parts(
            kps.kind(),
            kps.points()
                .iter()
                .map(|p| [p[0] * scale + c[0], p[1] * scale + c[1]])
                .collect(),
            kps.tuples().to_vec(),
        );
        let l = cross_ratio_loss(&moved).unwrap();
        assert!((l - base).abs() < 1e-9, "scale {scale}: {l} vs {base}");
    }
}

#[test]
fn degenerate_tuple_is_rejected() {
    let f = fixture(11);
    let kps = f.target.geometry.as_ref().unwrap().keypoints.clone();
    let mut pts = kps.points().to_vec();
    pts[9] = pts[8]; // collapse tuple 0's interior pair
    let tuples: Vec<[usize; 4]> = vec![[8, 8, 9, 9]]; // c == b, d == a
    let broken = KeypointSet2D::from_parts(kps.kind(), pts, tuples);
    assert!(matches!(
        cross_ratio_loss(&broken),
        Err(LossError::DegenerateInput(_))
    ));
}

#[test]
fn keypoint_loss_zero_at_groundtruth() {
    let f = fixture(13);
    let kps = &f.target.geometry.as_ref().unwrap().keypoints;
    let w = LossWeights::default();
    let loss = keypoint_loss(kps, kps, &w).unwrap();
    assert!(loss < 1e-10);
}

#[test]
fn uniform_shift_gives_pure_l1_term() {
    let f = fixture(17);
    let kps = f.target.geometry.as_ref().unwrap().keypoints.clone();
    let shifted = KeypointSet2D::from_parts(
        kps.kind(),
        kps.points().iter().map(|p| [p[0] + 0.01, p[1] + 0.01]).collect(),
        kps.tuples().to_vec(),
    );
    let w = LossWeights::default();
    let loss = keypoint_loss(&shifted, &kps, &w).unwrap();
    // per-point L1 = 0.02, γ = 10 → 0.2; the cross-ratio term is shift
    // invariant and stays ≈ 0
    assert!((loss - 0.2).abs() < 1e-9, "{loss}");
}

#[test]
fn zeroed_gamma_reduces_to_cross_ratio_loss() {
    let f = fixture(19);
    let kps = f.target.geometry.as_ref().unwrap().keypoints.clone();
    let mut noisy_pts = kps.points().to_vec();
    let mut s = SeedStream::new(2, "kp-noise");
    for p in &mut noisy_pts {
        p[0] += s.range(-0.01, 0.01);
        p[1] += s.range(-0.01, 0.01);
    }
    let noisy = KeypointSet2D::from_parts(kps.kind(), noisy_pts, kps.tuples().to_vec());
    let w = LossWeights {
        gamma: 0.0,
        delta: 1.0,
        ..LossWeights::default()
    };
    let a = keypoint_loss(&noisy, &kps, &w).unwrap();
    let b = cross_ratio_loss(&noisy).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn rot_loss_zero_for_identical_rotations() {
    let f = fixture(23);
    let r = f.target.geometry.as_ref().unwrap().pose.rotation;
    assert_eq!(rot_loss(&r, &r, &f.model, false), 0.0);
    assert_eq!(rot_loss(&r, &r, &f.model, true), 0.0);
}

#[test]
fn symmetric_branch_vanishes_on_a_symmetric_point_set() {
    // 8 points on a circle about z; a 45° turn maps the set onto itself.
    let pts: Vec<Vec3> = (0..8)
        .map(|k| {
            let a = k as f64 * core::f64::consts::PI / 4.0;
            Vec3::new(0.2 * libm::cos(a), 0.2 * libm::sin(a), 0.05)
        })
        .collect();
    let circle = PointCloud::new(pts).unwrap();
    let mut s = SeedStream::new(31, "rot-sym");
    let r_gt = sample_rotation(&mut s);
    let r_pred = r_gt.compose(&Rotation::about_z(core::f64::consts::PI / 4.0));
    assert!(rot_loss(&r_gt, &r_pred, &circle, true) < 1e-12);
    assert!(rot_loss(&r_gt, &r_pred, &circle, false) > 1e-3);
}

#[test]
fn symmetric_branch_never_exceeds_plain_branch() {
    let f = fixture(37);
    let mut s = SeedStream::new(41, "rot-ineq");
    for _ in 0..100 {
        let a = sample_rotation(&mut s);
        let b = sample_rotation(&mut s);
        let sym = rot_loss(&a, &b, &f.model, true);
        let plain = rot_loss(&a, &b, &f.model, false);
        assert!(sym <= plain + 1e-12);
    }
}

#[test]
fn tape_rot_loss_matches_scalar() {
    let f = fixture(43);
    let mut s = SeedStream::new(47, "rot-xcheck");
    for symmetric in [false, true] {
        for _ in 0..50 {
            let r_gt = sample_rotation(&mut s);
            let r_pred = sample_rotation(&mut s);
            let expect = rot_loss(&r_gt, &r_pred, &f.model, symmetric);
            let mut tape: Tape<f64> = Tape::new();
            let rt = {
                let m = r_pred.matrix().transposed();
                let flat: Vec<f64> = m.m.iter().flatten().copied().collect();
                tape.leaf_f64(3, 3, &flat)
            };
            let got = rot_loss_vars(&mut tape, &r_gt, rt, &f.model, symmetric).unwrap();
            assert!((tape.value(got).item() - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn rot6d_vars_match_geometry_gram_schmidt() {
    let mut s = SeedStream::new(53, "rot6d-xcheck");
    for _ in 0..100 {
        let v = [
            s.range(-2.0, 2.0),
            s.range(-2.0, 2.0),
            s.range(-2.0, 2.0),
            s.range(-2.0, 2.0),
            s.range(-2.0, 2.0),
            s.range(-2.0, 2.0),
        ];
        let Ok(expect) = crate::geometry::rot6d_to_matrix(crate::geometry::Rot6D::new(v)) else {
            continue;
        };
        let mut tape: Tape<f64> = Tape::new();
        let r6 = tape.leaf_f64(1, 6, &v);
        let rt = rot6d_to_matrix_vars(&mut tape, r6).unwrap();
        let got = tape.value(rt);
        let em = expect.matrix().transposed();
        for i in 0..3 {
            for j in 0..3 {
                assert!((got.at(i, j) - em.m[i][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pose_loss_examples() {
    let f = fixture(59);
    let pose = f.target.geometry.as_ref().unwrap().pose;
    assert_eq!(pose_loss(&pose, &pose.rotation, pose.translation, &f.model, false), 0.0);

    let off = pose.translation + Vec3::new(0.01, 0.0, 0.0);
    let l = pose_loss(&pose, &pose.rotation, off, &f.model, false);
    assert!((l - 0.01).abs() < 1e-12);

    // additivity of the two components
    let mut s = SeedStream::new(61, "pose-add");
    let r2 = sample_rotation(&mut s);
    let both = pose_loss(&pose, &r2, off, &f.model, false);
    let rot_only = rot_loss(&pose.rotation, &r2, &f.model, false);
    assert!((both - (rot_only + 0.01)).abs() < 1e-12);
}

#[test]
fn decode_translation_vars_matches_plain_decode() {
    let c = cam();
    let mut s = SeedStream::new(67, "decode-xcheck");
    for _ in 0..100 {
        let code = TranslationCode::new(s.range(0.1, 0.9), s.range(0.1, 0.9), s.range(0.3, 3.0));
        let expect = code.decode(&c).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let cv = tape.leaf_f64(1, 3, &[code.u_norm, code.v_norm, code.tz]);
        let out = decode_translation_vars(&mut tape, cv, &c).unwrap();
        let got = tape.value(out);
        assert!((got.at(0, 0) - expect.x).abs() < 1e-12);
        assert!((got.at(0, 1) - expect.y).abs() < 1e-12);
        assert!((got.at(0, 2) - expect.z).abs() < 1e-12);
    }
}

/// Builds exact prediction tensors for a list of fixtures plus padding.
fn exact_prediction_vars(
    tape: &mut Tape<f64>,
    targets: &[TargetTuple],
    n: usize,
    n_classes: usize,
) -> (PredictionVars, Vec<PredictionTuple>) {
    let kcols = 64;
    let mut logits = vec![0.0; n * (n_classes + 1)];
    let mut boxes = vec![0.25; n * 4];
    let mut trans = vec![0.5; n * 3];
    let mut kps = vec![0.5; n * kcols];
    for i in 0..n {
        if let Some(t) = targets.get(i) {
            let g = t.geometry.as_ref().unwrap();
            logits[i * (n_classes + 1) + t.class_id] = 25.0;
            boxes[i * 4..i * 4 + 4].copy_from_slice(&g.bbox.to_array());
            trans[i * 3] = g.translation.u_norm;
            trans[i * 3 + 1] = g.translation.v_norm;
            trans[i * 3 + 2] = g.translation.tz;
            kps[i * kcols..(i + 1) * kcols].copy_from_slice(&g.keypoints.flatten());
        } else {
            logits[i * (n_classes + 1) + n_classes] = 25.0;
        }
    }
    let vars = PredictionVars {
        class_logits: tape.leaf_f64(n, n_classes + 1, &logits),
        boxes: tape.leaf_f64(n, 4, &boxes),
        translations: tape.leaf_f64(n, 3, &trans),
        keypoints: tape.leaf_f64(n, kcols, &kps),
        keypoint_kind: KeypointKind::Ibb32,
    };
    let tuples: Vec<PredictionTuple> = (0..n)
        .map(|i| PredictionTuple {
            class_logits: logits[i * (n_classes + 1)..(i + 1) * (n_classes + 1)].to_vec(),
            bbox: BoxCxcywh::new(boxes[i * 4], boxes[i * 4 + 1], boxes[i * 4 + 2], boxes[i * 4 + 3]),
            translation: TranslationCode::new(trans[i * 3], trans[i * 3 + 1], trans[i * 3 + 2]),
            keypoints: KeypointSet2D::from_flat(
                KeypointKind::Ibb32,
                &kps[i * kcols..(i + 1) * kcols],
                crate::geometry::generate_ibb(
                    &Cuboid::new(Vec3::ZERO, Vec3::new(0.1, 0.1, 0.1)).unwrap(),
                )
                .tuples()
                .to_vec(),
            ),
        })
        .collect();
    (vars, tuples)
}

#[test]
fn all_null_targets_leave_only_the_class_term() {
    let mut tape: Tape<f64> = Tape::new();
    let (vars, preds) = exact_prediction_vars(&mut tape, &[], 4, 5);
    let assignment = match_sets(&preds, &[]).unwrap();
    let w = LossWeights::default();
    let lv = hungarian_loss(&mut tape, &vars, &[], &assignment, &w, None).unwrap();
    let b = lv.snapshot(&tape);
    assert_eq!(b.box_loss, 0.0);
    assert_eq!(b.keypoint_loss, 0.0);
    assert_eq!(b.pose_loss, 0.0);
    assert!((b.total - b.class_loss).abs() < 1e-15);
}

#[test]
fn perfect_predictions_give_negligible_total() {
    let f = fixture(71);
    let targets = vec![f.target.clone()];
    let mut tape: Tape<f64> = Tape::new();
    let (vars, preds) = exact_prediction_vars(&mut tape, &targets, 4, 5);
    let assignment = match_sets(&preds, &targets).unwrap();
    let w = LossWeights::default();
    let models = [f.model.clone()];
    let ctx = PoseLossCtx {
        cam: &f.cam,
        models: &models,
        symmetric: &[false; 5],
    };
    let gt_rt = f.target.geometry.as_ref().unwrap().pose.rotation.matrix().transposed();
    let flat: Vec<f64> = gt_rt.m.iter().flatten().copied().collect();
    let mut head = move |tape: &mut Tape<f64>, _kps: Var| -> Result<Var, LossError> {
        Ok(tape.leaf_f64(3, 3, &flat))
    };
    let lv = hungarian_loss(&mut tape, &vars, &targets, &assignment, &w, Some((&ctx, &mut head)))
        .unwrap();
    let b = lv.snapshot(&tape);
    assert!(b.total < 1e-6, "{b:?}");
}

#[test]
fn total_is_the_weighted_component_sum() {
    let f = fixture(73);
    let f2 = fixture(74);
    let targets = vec![f.target.clone(), f2.target.clone()];
    let mut tape: Tape<f64> = Tape::new();
    let (mut vars, _) = exact_prediction_vars(&mut tape, &targets, 5, 5);
    // perturb the heads so every component is non-trivial
    let noise: Vec<f64> = {
        let mut s = SeedStream::new(77, "hl-noise");
        (0..5 * 64).map(|_| s.range(-0.02, 0.02)).collect()
    };
    let nv = tape.leaf_f64(5, 64, &noise);
    vars.keypoints = tape.add(vars.keypoints, nv).unwrap();
    let preds_for_matching: Vec<PredictionTuple> = (0..5)
        .map(|i| PredictionTuple {
            class_logits: tape.value(vars.class_logits).row(i).to_vec(),
            bbox: BoxCxcywh::from_array([
                tape.value(vars.boxes).at(i, 0),
                tape.value(vars.boxes).at(i, 1),
                tape.value(vars.boxes).at(i, 2),
                tape.value(vars.boxes).at(i, 3),
            ]),
            translation: TranslationCode::new(0.5, 0.5, 1.0),
            keypoints: KeypointSet2D::from_parts(KeypointKind::Bb8, vec![[0.5, 0.5]; 8], vec![]),
        })
        .collect();
    let assignment = match_sets(&preds_for_matching, &targets).unwrap();
    let w = LossWeights::default();
    let models = [f.model.clone(), f2.model.clone()];
    let ctx = PoseLossCtx {
        cam: &f.cam,
        models: &models,
        symmetric: &[false; 5],
    };
    let mut head = |tape: &mut Tape<f64>, kps: Var| -> Result<Var, LossError> {
        // fixed linear map into a well-conditioned 6D representation
        let wmat = Tensor::from_f64(64, 6, &{
            let mut s = SeedStream::new(79, "head-w");
            (0..64 * 6).map(|_| s.range(-0.05, 0.05)).collect::<Vec<f64>>()
        });
        let wv = tape.leaf(wmat);
        let r6_raw = tape.matmul(kps, wv)?;
        let bias = tape.leaf_f64(1, 6, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let r6 = tape.add(r6_raw, bias)?;
        rot6d_to_matrix_vars(tape, r6)
    };
    let lv = hungarian_loss(&mut tape, &vars, &targets, &assignment, &w, Some((&ctx, &mut head)))
        .unwrap();
    let b = lv.snapshot(&tape);
    let expect = b.class_loss + b.box_loss + b.keypoint_loss + w.pose_weight * b.pose_loss;
    assert!(
        (b.total - expect).abs() <= 1e-9 * expect.abs().max(1.0),
        "{b:?}"
    );
    assert!(b.box_loss > 0.0 || b.keypoint_loss > 0.0);
}

#[test]
fn doubling_gamma_doubles_only_the_l1_part() {
    let f = fixture(83);
    let kps = f.target.geometry.as_ref().unwrap().keypoints.clone();
    let mut s = SeedStream::new(87, "gamma-noise");
    let noisy = KeypointSet2D::from_parts(
        kps.kind(),
        kps.points()
            .iter()
            .map(|p| [p[0] + s.range(-0.01, 0.01), p[1] + s.range(-0.01, 0.01)])
            .collect(),
        kps.tuples().to_vec(),
    );
    let w1 = LossWeights::default();
    let w2 = LossWeights {
        gamma: 2.0 * w1.gamma,
        ..w1
    };
    let l1 = keypoint_loss(&noisy, &kps, &w1).unwrap();
    let l2 = keypoint_loss(&noisy, &kps, &w2).unwrap();
    let cr = cross_ratio_loss(&noisy).unwrap();
    let l1_part = l1 - w1.delta * cr;
    assert!((l2 - (l1 + l1_part)).abs() < 1e-9);
}
