use std::path::Path;

use ssm::dataset::{load_dataset, read_manifest, write_dataset, FrameRecord, PoseRecord, MANIFEST_NAME};
use ssm::synthetic::{read_questions, read_scripted, write_scene, QUESTIONS_FILE, SCRIPTED_FILE};
use ssm_core::backend::DetectorNoise;
use ssm_core::geometry::{CameraIntrinsics, DepthMap};
use ssm_core::synth::{generate_scene, SceneSpec};

const IDENTITY: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

fn record(id: u32) -> FrameRecord {
    FrameRecord {
        scene_id: "toy".into(),
        id,
        image: format!("synthetic://toy/{id}"),
        depth: "depth/flat.png".into(),
        pose: PoseRecord {
            rotation: IDENTITY,
            translation: [0.0, 0.0, 1.5],
        },
        intrinsics: CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap(),
        timestamp: id as f64 * 0.1,
    }
}

fn write_manifest(dir: &Path, records: &[FrameRecord]) {
    let text: String = records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    std::fs::write(dir.join(MANIFEST_NAME), text).unwrap();
    ssm::dataset::write_depth_png(&dir.join("depth/flat.png"), &DepthMap::new(4, 4, vec![1.25; 16]).unwrap()).unwrap();
}

#[test]
fn stride_subsamples_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path(), &(0..100).map(record).collect::<Vec<_>>());
    let ep = load_dataset(dir.path(), 5).unwrap();
    assert_eq!(ep.frames.len(), 20);
    assert_eq!(ep.frames[1].id.0, 5);
    assert_eq!(ep.k, 5);
    assert_eq!(load_dataset(&dir.path().join(MANIFEST_NAME), 1).unwrap().frames.len(), 100);
    assert_eq!(ep.frames[0].depth.values[0], 1.25);
    assert!(load_dataset(dir.path(), 0).is_err());
}

#[test]
fn bad_depth_locator_names_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs: Vec<FrameRecord> = (0..4).map(record).collect();
    recs[2].depth = "depth/missing.png".into();
    write_manifest(dir.path(), &recs);
    let e = load_dataset(dir.path(), 1).unwrap_err().to_string();
    assert!(e.contains("frame 2") && e.contains("missing.png"), "{e}");
    // Skipped by the stride, so never resolved.
    assert_eq!(load_dataset(dir.path(), 3).unwrap().frames.len(), 2);
}

#[test]
fn malformed_pose_names_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs: Vec<FrameRecord> = (0..3).map(record).collect();
    recs[1].pose.rotation = [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    write_manifest(dir.path(), &recs);
    let e = load_dataset(dir.path(), 1).unwrap_err().to_string();
    assert!(e.contains("frame 1"), "{e}");
}

#[test]
fn manifest_structure_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path(), &[record(3), record(2)]);
    assert!(read_manifest(dir.path()).unwrap_err().to_string().contains("strictly increasing"));

    let mut other = record(4);
    other.scene_id = "elsewhere".into();
    write_manifest(dir.path(), &[record(3), other]);
    assert!(read_manifest(dir.path()).is_err());

    std::fs::write(dir.path().join(MANIFEST_NAME), "{\"id\": 1}\n").unwrap();
    assert!(read_manifest(dir.path()).unwrap_err().to_string().contains("line 1"));

    let mut local = record(0);
    local.image = "rgb/0.jpg".into();
    write_manifest(dir.path(), &[local]);
    assert!(load_dataset(dir.path(), 1).unwrap_err().to_string().contains("image locator"));
}

#[test]
fn synthetic_scene_survives_the_disk() {
    let scene = generate_scene(&SceneSpec::new(2, 3, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let noise = DetectorNoise {
        miss_probability: 0.25,
        seed: 9,
    };
    write_scene(dir.path(), &scene, noise).unwrap();

    let ep = load_dataset(dir.path(), 1).unwrap();
    assert_eq!(ep.scene_id, scene.episode.scene_id);
    assert_eq!(ep.frame_ids(), scene.episode.frame_ids());
    for (a, b) in ep.frames.iter().zip(&scene.episode.frames) {
        assert_eq!((a.intrinsics, a.pose, &a.image), (b.intrinsics, b.pose, &b.image));
        let worst = a.depth.values.iter().zip(&b.depth.values).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 0.0005 + 1e-6, "depth off by {worst}");
    }

    let file = read_scripted(&dir.path().join(SCRIPTED_FILE)).unwrap();
    assert_eq!(file.truth.as_ref(), Some(&scene.truth));
    assert_eq!(file.noise, noise);
    assert_eq!(read_questions(&dir.path().join(QUESTIONS_FILE)).unwrap(), scene.questions);

    // Rewriting the loaded episode gives the same manifest.
    let again = tempfile::tempdir().unwrap();
    write_dataset(again.path(), &ep).unwrap();
    assert_eq!(read_manifest(again.path()).unwrap(), read_manifest(dir.path()).unwrap());
}
