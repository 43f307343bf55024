//! File-format contracts: lossless round trips for the BOP layout, results
//! CSV, PLY encodings, raster blobs, and checkpoints.

use pose6d::geometry::{PointCloud, Pose, Rotation};
use pose6d::linalg::Vec3;
use pose6d::rng::SeedStream;
use pose6d::synth::SceneConfig;
use pose6d_cli::bop::{self, ModelInfo, ObjectAnnotation, SceneAnnotation};
use pose6d_cli::results_io::{self, ResultRecord};
use pose6d_cli::{checkpoint_io, dataset, ply, raster_io};

fn sample_rotation(s: &mut SeedStream) -> Rotation {
    loop {
        if let Ok(r) = Rotation::from_quaternion(s.normal(), s.normal(), s.normal(), s.normal()) {
            return r;
        }
    }
}

fn cam() -> pose6d::geometry::CameraIntrinsics {
    pose6d::geometry::CameraIntrinsics::new(500.0, 505.0, 320.0, 240.0, 640.0, 480.0).unwrap()
}

#[test]
fn bop_scene_round_trips_to_fixpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = SeedStream::new(3, "bop-fixture");
    let annotations: Vec<SceneAnnotation> = (0..4)
        .map(|image_id| SceneAnnotation {
            scene_id: 0,
            image_id,
            cam: cam(),
            objects: (0..1 + (image_id as usize % 2))
                .map(|k| ObjectAnnotation {
                    class_id: k,
                    pose: Pose::new(
                        sample_rotation(&mut s),
                        Vec3::new(s.range(-0.2, 0.2), s.range(-0.2, 0.2), s.range(0.5, 2.0)),
                    ),
                })
                .collect(),
        })
        .collect();
    bop::write_scene_dir(dir.path(), &annotations).unwrap();
    let first = bop::load_scene_dir(dir.path(), 0, None).unwrap();

    // write → load once more: the fixpoint
    let dir2 = tempfile::tempdir().unwrap();
    bop::write_scene_dir(dir2.path(), &first).unwrap();
    let second = bop::load_scene_dir(dir2.path(), 0, None).unwrap();
    assert_eq!(first, second);
    let bytes1 = std::fs::read(dir.path().join("scene_gt.json")).unwrap();
    let bytes2 = std::fs::read(dir2.path().join("scene_gt.json")).unwrap();
    assert_eq!(bytes1, bytes2);
}

#[test]
fn millimeter_translations_convert_on_load() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("scene_gt.json"),
        r#"{"0": [{"cam_R_m2c": [1,0,0,0,1,0,0,0,1], "cam_t_m2c": [0,0,1000], "obj_id": 1}]}"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("scene_camera.json"),
        r#"{"0": {"cam_K": [500,0,320,0,500,240,0,0,1], "depth_scale": 1.0}}"#,
    )
    .unwrap();
    let anns = bop::load_scene_dir(dir.path(), 0, Some((640.0, 480.0))).unwrap();
    assert_eq!(anns.len(), 1);
    let t = anns[0].objects[0].pose.translation;
    assert!((t - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
}

#[test]
fn negative_determinant_rotation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("scene_gt.json"),
        r#"{"0": [{"cam_R_m2c": [1,0,0,0,1,0,0,0,-1], "cam_t_m2c": [0,0,1000], "obj_id": 1}]}"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("scene_camera.json"),
        r#"{"0": {"cam_K": [500,0,320,0,500,240,0,0,1], "depth_scale": 1.0}}"#,
    )
    .unwrap();
    let err = bop::load_scene_dir(dir.path(), 0, None).unwrap_err();
    assert!(matches!(
        err,
        pose6d_cli::IoFormatError::Validation { image_id: 0, .. }
    ));
}

#[test]
fn results_csv_round_trips_losslessly() {
    let mut s = SeedStream::new(9, "results-fixture");
    let records: Vec<ResultRecord> = (0..20)
        .map(|i| ResultRecord {
            scene_id: i / 7,
            image_id: i,
            obj_id: 1 + (i % 5),
            score: s.uniform(),
            pose: Pose::new(
                sample_rotation(&mut s),
                Vec3::new(s.range(-0.3, 0.3), s.range(-0.3, 0.3), s.range(0.4, 2.5)),
            ),
            time_s: s.range(0.0, 0.1),
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    results_io::write_results(&path, &records).unwrap();
    let back = results_io::read_results(&path).unwrap();
    assert_eq!(records.len(), back.len());
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(a.scene_id, b.scene_id);
        assert_eq!(a.image_id, b.image_id);
        assert_eq!(a.obj_id, b.obj_id);
        assert_eq!(a.score, b.score);
        assert_eq!(a.time_s, b.time_s);
        assert_eq!(a.pose.rotation.to_row_major(), b.pose.rotation.to_row_major());
        // translations pass through the millimeter conversion
        assert!((a.pose.translation - b.pose.translation).norm() < 1e-15);
    }
    // write → read → write is byte-stable
    let text1 = std::fs::read_to_string(&path).unwrap();
    results_io::write_results(&path, &back).unwrap();
    let text2 = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text1, text2);
}

#[test]
fn identity_rotation_serializes_canonically() {
    let records = vec![ResultRecord {
        scene_id: 0,
        image_id: 0,
        obj_id: 1,
        score: 1.0,
        pose: Pose::new(Rotation::IDENTITY, Vec3::new(0.0, 0.0, 1.0)),
        time_s: -1.0,
    }];
    let text = results_io::results_to_string(&records);
    let line = text.lines().nth(1).unwrap();
    assert!(line.contains(",1 0 0 0 1 0 0 0 1,"), "{line}");
    assert!(line.contains(",0 0 1000,"), "{line}");
}

#[test]
fn ply_ascii_and_binary_agree() {
    let cloud = PointCloud::new(vec![
        Vec3::new(-0.5, -0.5, -0.5),
        Vec3::new(-0.5, -0.5, 0.5),
        Vec3::new(-0.5, 0.5, -0.5),
        Vec3::new(-0.5, 0.5, 0.5),
        Vec3::new(0.5, -0.5, -0.5),
        Vec3::new(0.5, -0.5, 0.5),
        Vec3::new(0.5, 0.5, -0.5),
        Vec3::new(0.5, 0.5, 0.5),
    ])
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ascii = dir.path().join("cube_ascii.ply");
    let binary = dir.path().join("cube_binary.ply");
    ply::write_ply_ascii(&ascii, &cloud, false).unwrap();
    ply::write_ply_binary(&binary, &cloud, false).unwrap();
    let a = ply::load_ply(&ascii, false).unwrap();
    let b = ply::load_ply(&binary, false).unwrap();
    assert_eq!(a.len(), 8);
    assert_eq!(a, b);
    for (p, q) in a.points().iter().zip(cloud.points()) {
        assert!((*p - *q).norm() < 1e-7);
    }
}

#[test]
fn ply_missing_z_property_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ply");
    std::fs::write(
        &path,
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n",
    )
    .unwrap();
    assert!(matches!(
        ply::load_ply(&path, false),
        Err(pose6d_cli::IoFormatError::Parse { .. })
    ));
}

#[test]
fn big_endian_ply_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("be.ply");
    std::fs::write(
        &path,
        "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
    )
    .unwrap();
    assert!(matches!(
        ply::load_ply(&path, false),
        Err(pose6d_cli::IoFormatError::Unsupported(_))
    ));
}

#[test]
fn raster_round_trips_bitwise_at_f32() {
    let sample = pose6d::synth::generate_scene(11, &SceneConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.rast");
    raster_io::write_raster(&path, &sample.raster).unwrap();
    let back = raster_io::read_raster(&path).unwrap();
    assert_eq!(back.height, sample.raster.height);
    for (a, b) in sample.raster.data.iter().zip(&back.data) {
        assert_eq!(*a as f32, *b as f32);
    }
}

#[test]
fn dataset_write_load_write_is_a_fixpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig::default();
    let written = dataset::write_dataset(dir.path(), 77, 12, &cfg).unwrap();
    let (manifest, loaded) = dataset::load_dataset(dir.path()).unwrap();
    assert_eq!(manifest.samples, 12);
    assert_eq!(written.len(), loaded.len());
    for (w, l) in written.iter().zip(&loaded) {
        assert_eq!(w.targets.len(), l.targets.len());
        for (tw, tl) in w.targets.iter().zip(&l.targets) {
            assert_eq!(tw.class_id, tl.class_id);
            let gw = tw.geometry.as_ref().unwrap();
            let gl = tl.geometry.as_ref().unwrap();
            for (a, b) in gw.keypoints.points().iter().zip(gl.keypoints.points()) {
                assert!((a[0] - b[0]).abs() < 1e-9);
                assert!((a[1] - b[1]).abs() < 1e-9);
            }
            assert!((gw.translation.tz - gl.translation.tz).abs() < 1e-9);
        }
    }
    // file-level fixpoint for the annotation JSON
    let gt1 = std::fs::read(dir.path().join("train/000000/scene_gt.json")).unwrap();
    let anns = dataset::load_annotations(dir.path()).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir2.path().join("train/000000")).unwrap();
    pose6d_cli::bop::write_scene_dir(&dir2.path().join("train/000000"), &anns).unwrap();
    let gt2 = std::fs::read(dir2.path().join("train/000000/scene_gt.json")).unwrap();
    assert_eq!(gt1, gt2);
}

#[test]
fn models_info_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("models_info.json");
    let infos = vec![
        ModelInfo {
            class_id: 0,
            diameter_m: 0.25,
            size_m: [0.2, 0.14, 0.09],
        },
        ModelInfo {
            class_id: 1,
            diameter_m: 0.3,
            size_m: [0.11, 0.22, 0.16],
        },
    ];
    bop::write_models_info(&path, &infos).unwrap();
    let back = bop::load_models_info(&path).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in infos.iter().zip(&back) {
        assert_eq!(a.class_id, b.class_id);
        assert!((a.diameter_m - b.diameter_m).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trips_exactly() {
    use pose6d::models::train::{rotest_checkpoint, train_rotest, RotestTrainConfig};
    use pose6d::models::RotEstConfig;
    use pose6d::synth::{generate_rotation_pairs, RotationPairConfig};
    let pairs = generate_rotation_pairs(5, 120, &RotationPairConfig::default());
    let cfg = RotestTrainConfig {
        model: RotEstConfig {
            hidden_dim: 24,
            dropout: 0.1,
            ..RotEstConfig::default()
        },
        epochs: 2,
        seed: 3,
        ..RotestTrainConfig::default()
    };
    let out = train_rotest(&pairs, &cfg, None).unwrap();
    let data = rotest_checkpoint(&out, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint_io::write_checkpoint(&path, &data).unwrap();
    let back = checkpoint_io::read_checkpoint(&path).unwrap();
    // f32 payloads survive the f64 staging exactly
    assert_eq!(data, back);
}
