use ssm::dataset::load_dataset;
use ssm::persist::{decode_clouds, load, load_source, save, Source, CLOUDS_FILE, EMBEDDINGS_FILE};
use ssm::synthetic::write_scene;
use ssm_core::api::{apply_patch, execute, ApiCall, ApiKind};
use ssm_core::backend::{BackendClient, DetectorNoise, ScriptedBackend};
use ssm_core::metrics::graph_scores;
use ssm_core::pipeline::build_ssm;
use ssm_core::synth::{generate_scene, SceneSpec};
use ssm_core::EngineConfig;

fn built() -> (ssm_core::synth::SyntheticScene, ssm_core::Ssm) {
    let scene = generate_scene(&SceneSpec::new(2, 3, 21)).unwrap();
    let mut client = BackendClient::new(ScriptedBackend::from_truth(scene.truth.clone(), DetectorNoise::default()));
    let ssm = build_ssm(&scene.episode, &mut client, &EngineConfig::default()).unwrap();
    (scene, ssm)
}

#[test]
fn save_load_keeps_canonical_text_and_geometry() {
    let (_, ssm) = built();
    let dir = tempfile::tempdir().unwrap();
    let source = Source {
        dataset: "/data/scan".into(),
        k: 5,
    };
    save(dir.path(), &ssm, Some(&source)).unwrap();
    let back = load(dir.path()).unwrap();
    assert_eq!(back.to_json().unwrap(), ssm.to_json().unwrap());
    assert_eq!(load_source(dir.path()).unwrap(), Some(source));

    for (a, b) in ssm.graph().tracks().zip(back.graph().tracks()) {
        assert_eq!(a.cloud.len(), b.cloud.len());
        for (p, q) in a.cloud.points.iter().zip(&b.cloud.points) {
            assert!((*p - *q).norm() < 1e-5);
        }
        for (x, y) in [(&a.visual, &b.visual), (&a.language, &b.language)] {
            let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
            let dot: f64 = x.vector().iter().zip(y.vector()).map(|(u, v)| u * v).sum();
            assert!((dot - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn reloaded_memory_keeps_working() {
    let (scene, ssm) = built();
    let dir = tempfile::tempdir().unwrap();
    save(dir.path(), &ssm, None).unwrap();
    let mut a = ssm.clone();
    let mut b = load(dir.path()).unwrap();
    let cfg = EngineConfig::default();
    let mut client = BackendClient::new(ScriptedBackend::from_truth(scene.truth.clone(), DetectorNoise::default()));
    let call = ApiCall::new(ApiKind::AnalyzeFrame, scene.episode.frames[1].id, "list every object");
    let pa = execute(&call, &a, &scene.episode, &mut client, &cfg).unwrap();
    let pb = execute(&call, &b, &scene.episode, &mut client, &cfg).unwrap();
    apply_patch(&mut a, &pa, &cfg).unwrap();
    apply_patch(&mut b, &pb, &cfg).unwrap();
    assert_eq!(a.graph().len(), b.graph().len());
    assert_eq!(a.scratchpad().note_count(), b.scratchpad().note_count());
}

#[test]
fn geometry_files_are_optional_and_checked() {
    let (_, ssm) = built();
    let dir = tempfile::tempdir().unwrap();
    save(dir.path(), &ssm, None).unwrap();
    assert_eq!(load_source(dir.path()).unwrap(), None);

    let clouds = std::fs::read(dir.path().join(CLOUDS_FILE)).unwrap();
    let decoded = decode_clouds(&clouds, &dir.path().join(CLOUDS_FILE)).unwrap();
    assert_eq!(decoded.len(), ssm.graph().len());
    std::fs::write(dir.path().join(CLOUDS_FILE), &clouds[..clouds.len() - 3]).unwrap();
    assert!(load(dir.path()).unwrap_err().to_string().contains("truncated"));
    std::fs::write(dir.path().join(CLOUDS_FILE), b"XXXX").unwrap();
    assert!(load(dir.path()).unwrap_err().to_string().contains("magic"));

    std::fs::remove_file(dir.path().join(CLOUDS_FILE)).unwrap();
    std::fs::remove_file(dir.path().join(EMBEDDINGS_FILE)).unwrap();
    let light = load(dir.path()).unwrap();
    assert_eq!(light.to_json().unwrap(), ssm.to_json().unwrap());
    assert!(light.graph().tracks().all(|t| t.cloud.is_empty() && t.visual.is_none()));
}

#[test]
fn disk_dataset_reconstructs_exactly_and_deterministically() {
    let scene = generate_scene(&SceneSpec::new(3, 2, 8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &scene, DetectorNoise::default()).unwrap();
    let episode = load_dataset(dir.path(), 1).unwrap();
    let cfg = EngineConfig::default();
    let run = || {
        let mut client = BackendClient::new(ScriptedBackend::from_truth(scene.truth.clone(), DetectorNoise::default()));
        build_ssm(&episode, &mut client, &cfg).unwrap()
    };
    let first = run();
    let g = graph_scores(&first, &scene.truth);
    assert_eq!((g.track_precision, g.track_recall, g.edge_precision, g.edge_recall), (1.0, 1.0, 1.0, 1.0), "{g:?}");
    assert_eq!(first.to_json().unwrap(), run().to_json().unwrap());
}
