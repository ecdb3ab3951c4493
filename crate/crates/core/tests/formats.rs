mod common;

use synthdet_core::dataset::{coco_string, export_yolo, import_coco, import_yolo, parse_coco};
use synthdet_core::orchestrator::{current_manifest, run_pipeline, ProjectStore, RunOptions};
use synthdet_core::{Provenance, Split};

#[test]
fn exported_coco_matches_the_store_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let store = ProjectStore::open(dir.path()).unwrap();
    let run = run_pipeline(&store, &common::mock_config("fmt", 8, 256, 128), RunOptions::default()).unwrap();
    let coco = import_coco(&store.export_dir("fmt").unwrap().join("coco.json")).unwrap();
    let live = current_manifest(&store, &run).unwrap();
    assert_eq!(coco.images.len(), 8);
    for (a, b) in coco.images.iter().zip(&live.images) {
        assert_eq!(a.annotations.boxes, b.annotations.boxes);
        assert_eq!(a.provenance, Provenance::Mock);
        assert_ne!(a.split, Split::Unassigned);
    }
}

#[test]
fn yolo_coco_yolo_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let store = ProjectStore::open(dir.path().join("store")).unwrap();
    run_pipeline(&store, &common::mock_config("fmt", 8, 256, 128), RunOptions::default()).unwrap();
    let yolo = store.export_dir("fmt").unwrap().join("yolo");

    let first = import_yolo(&yolo, "fmt").unwrap();
    let via_coco = parse_coco(&coco_string(&first).unwrap(), "mem.json".as_ref()).unwrap();
    assert_eq!(via_coco, first);

    let out = dir.path().join("again");
    export_yolo(&via_coco, &yolo, &out).unwrap();
    let before = common::tree_bytes(&yolo);
    let after = common::tree_bytes(&out);
    assert_eq!(before, after);
}
