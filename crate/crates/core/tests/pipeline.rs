mod common;

use std::fs;

use common::{small_class, write_class, ToyClass, ToyScene, FAST};
use magic_core::cama::foreground_mask;
use magic_core::denoiser::TrainableDenoiser;
use magic_core::io::{read_mask, write_image};
use magic_core::pipeline::{
    generate, ingest, parse_manifest, train_class, GenerationInputs, PipelineConfig, RecordStatus, MANIFEST_FILE,
};
use magic_core::prompt::PromptEmbedding;
use magic_core::trainer::AnomalyExemplar;
use magic_core::{BinaryMask, Error, Image};

fn fast_config() -> PipelineConfig {
    PipelineConfig::parse_text(FAST).unwrap()
}

#[test]
fn ingest_counts_and_sorted_order() {
    let dir = tempfile::tempdir().unwrap();
    small_class(&dir.path().join("data"), "widget");
    let layout = ingest(&dir.path().join("data")).unwrap();
    let c = layout.class("widget").unwrap();
    assert_eq!(c.normals.len(), 3);
    assert_eq!(c.anomalies.len(), 10);
    let stems: Vec<_> = c.anomalies.iter().map(|a| a.stem.clone()).collect();
    let mut sorted = stems.clone();
    sorted.sort();
    assert_eq!(stems, sorted);
    let (train, test) = c.split().unwrap();
    assert_eq!((train.len(), test.len()), (3, 7));
    assert!(layout.class("nope").is_err());
}

#[test]
fn ingest_rejects_missing_mask() {
    let dir = tempfile::tempdir().unwrap();
    small_class(&dir.path().join("data"), "widget");
    fs::remove_file(dir.path().join("data/widget/mask/defect_004.png")).unwrap();
    let err = ingest(&dir.path().join("data")).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)));
    assert!(err.to_string().contains("defect_004"), "{err}");
}

#[test]
fn ingest_rejects_mismatched_mask_dims() {
    let dir = tempfile::tempdir().unwrap();
    small_class(&dir.path().join("data"), "widget");
    let mask = dir.path().join("data/widget/mask/defect_002.png");
    write_image(&mask, &Image::zeros(1, 8, 8)).unwrap();
    let msg = ingest(&dir.path().join("data")).unwrap_err().to_string();
    assert!(msg.contains("anomaly/defect_002.png") && msg.contains("mask/defect_002.png"), "{msg}");
}

fn run_generate(root: &std::path::Path, out: &std::path::Path, n: usize, cfg: &PipelineConfig) -> Vec<magic_core::pipeline::GenerationRecord> {
    let layout = ingest(root).unwrap();
    let c = layout.class("widget").unwrap();
    let normals = c.load_normals().unwrap();
    let exemplars = c.train_exemplars().unwrap();
    let model = TrainableDenoiser::new(cfg.arch(1), 3).unwrap();
    let embedding = PromptEmbedding::init(cfg.embed_dim, 0).unwrap();
    let inputs = GenerationInputs {
        class: "widget",
        normals: &normals,
        exemplars: &exemplars,
        predictor: &model,
        embedding: &embedding,
    };
    generate(n, &inputs, cfg, out).unwrap()
}

#[test]
fn zero_records_give_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    small_class(&dir.path().join("data"), "widget");
    let out = dir.path().join("gen");
    let recs = run_generate(&dir.path().join("data"), &out, 0, &fast_config());
    assert!(recs.is_empty());
    let text = fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
    assert!(parse_manifest(&text).unwrap().is_empty());
    assert_eq!(fs::read_dir(&out).unwrap().count(), 1);
}

#[test]
fn manifest_lists_every_emitted_file_once() {
    let dir = tempfile::tempdir().unwrap();
    small_class(&dir.path().join("data"), "widget");
    let out = dir.path().join("gen");
    let recs = run_generate(&dir.path().join("data"), &out, 5, &fast_config());
    let parsed = parse_manifest(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(parsed, recs);
    let mut listed = vec![MANIFEST_FILE.to_string()];
    for r in &recs {
        if r.status == RecordStatus::Ok {
            assert!(out.join(r.output.as_ref().unwrap()).is_file());
            assert!(out.join(r.mask.as_ref().unwrap()).is_file());
            listed.push(r.output.clone().unwrap());
            listed.push(r.mask.clone().unwrap());
        }
    }
    let mut on_disk: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    listed.sort();
    on_disk.sort();
    assert_eq!(listed, on_disk);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    small_class(&dir.path().join("data"), "widget");
    let cfg = fast_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_generate(&dir.path().join("data"), &a, 4, &cfg);
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_generate(&dir.path().join("data"), &b, 4, &cfg));
    for name in fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()) {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

/// Anomalies sit on the left of the frame, normal objects on the right.
fn translated_scene(root: &std::path::Path) -> ToyScene {
    let scene = ToyScene::new(24, 10, 17);
    write_class(
        root,
        "widget",
        &scene,
        &ToyClass {
            channels: 1,
            normals: 2,
            anomalies: 9,
            normal_at: (13, 8),
            anomaly_at: (1, 3),
        },
    );
    scene
}

#[test]
fn cama_keeps_masks_on_the_object() {
    let dir = tempfile::tempdir().unwrap();
    let scene = translated_scene(&dir.path().join("data"));
    let support = scene.support(13, 8);
    let normal = scene.render(1, 13, 8);
    assert_eq!(foreground_mask(&normal).mask, support);

    let mut cfg = fast_config();
    let on = dir.path().join("on");
    let recs = run_generate(&dir.path().join("data"), &on, 12, &cfg);
    let ok: Vec<_> = recs.iter().filter(|r| r.status == RecordStatus::Ok).collect();
    assert!(!ok.is_empty());
    for r in ok {
        let m = read_mask(&on.join(r.mask.as_ref().unwrap())).unwrap();
        assert!(!m.is_empty());
        assert!(m.is_subset_of(&support), "{:?}", r);
        assert!(r.cama_fallback.is_some());
    }

    cfg.cama = false;
    let off = dir.path().join("off");
    let recs = run_generate(&dir.path().join("data"), &off, 12, &cfg);
    let violations = recs
        .iter()
        .filter(|r| !read_mask(&off.join(r.mask.as_ref().unwrap())).unwrap().is_subset_of(&support))
        .count();
    assert!(violations > 0);
    assert!(recs.iter().all(|r| r.cama_fallback.is_none()));
}

#[test]
fn cama_toggle_leaves_sampling_untouched_when_mask_is_in_place() {
    // Exemplar and normal share one object position and every mask is
    // flip-symmetric about it, so alignment is the identity.
    let dir = tempfile::tempdir().unwrap();
    let scene = ToyScene::new(16, 10, 23);
    let root = dir.path().join("data/widget");
    for sub in ["normal", "anomaly", "mask"] {
        fs::create_dir_all(root.join(sub)).unwrap();
    }
    let normal = scene.render(1, 3, 3);
    write_image(&root.join("normal/good_000.png"), &normal).unwrap();
    let mask = BinaryMask::from_fn(16, 16, |x, y| (6..10).contains(&x) && (6..10).contains(&y));
    for i in 0..3 {
        write_image(&root.join(format!("anomaly/d{i}.png")), &normal).unwrap();
        magic_core::io::write_mask(&root.join(format!("mask/d{i}.png")), &mask).unwrap();
    }
    let exemplar = AnomalyExemplar::new(normal.clone(), mask.clone(), "widget", "d0").unwrap();
    let aligned = magic_core::pipeline::align_onto(&mask, &exemplar, &normal, &fast_config()).unwrap();
    assert_eq!(aligned.mask, mask);

    let mut cfg = fast_config();
    let (on, off) = (dir.path().join("on"), dir.path().join("off"));
    run_generate(&dir.path().join("data"), &on, 3, &cfg);
    cfg.cama = false;
    run_generate(&dir.path().join("data"), &off, 3, &cfg);
    for i in 0..3 {
        for name in [format!("widget_{i:05}.png"), format!("widget_{i:05}_mask.png")] {
            assert_eq!(fs::read(on.join(&name)).unwrap(), fs::read(off.join(&name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn training_a_class_produces_a_usable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    small_class(&dir.path().join("data"), "widget");
    let layout = ingest(&dir.path().join("data")).unwrap();
    let cfg = fast_config();
    let (ckpt, report) = train_class(layout.class("widget").unwrap(), &cfg).unwrap();
    assert_eq!(report.losses.len(), cfg.train_steps);
    assert!(report.losses.iter().all(|l| l.is_finite()));
    assert_eq!(ckpt.embedding.unwrap().dim(), cfg.embed_dim);
    assert_eq!(ckpt.model.arch().channels, 1);
}
