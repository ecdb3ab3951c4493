use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use synthdet_core::genclient::{mock_generate, preset, GenerationJob, SceneParams};
use synthdet_core::orchestrator::{
    run_pipeline, AnnotatorConfig, BackendConfig, PipelineRun, ProjectStore, RunOptions, StoredAnnotation,
};
use synthdet_core::{FilterConfig, Provenance, RunConfig, SplitSpec};
use synthdet_service::BackgroundServer;

fn start() -> (tempfile::TempDir, ProjectStore, BackgroundServer) {
    let dir = tempfile::tempdir().unwrap();
    let store = ProjectStore::open(dir.path()).unwrap();
    let server = BackgroundServer::start(SocketAddr::from(([127, 0, 0, 1], 0)), store.clone()).unwrap();
    (dir, store, server)
}

fn config(run_id: &str, count: usize) -> RunConfig {
    let mut job = GenerationJob::from_preset(&preset("final").unwrap(), 99);
    job.width = 320;
    job.height = 192;
    RunConfig {
        run_id: Some(run_id.into()),
        job,
        count,
        backend: BackendConfig::default(),
        annotator: AnnotatorConfig::default(),
        filter: FilterConfig::default(),
        split: SplitSpec {
            train_fraction: 0.75,
            seed: 1,
        },
        export: Default::default(),
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn post_run(client: &Client, server: &BackgroundServer, cfg: &RunConfig) -> PipelineRun {
    let resp = client.post(format!("{}/runs", server.url())).json(cfg).send().unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let run: PipelineRun = resp.json().unwrap();
    assert!(run.is_complete(), "{:?}", run.failure());
    run
}

#[test]
fn pipeline_uses_service_as_http_backend() {
    let (_d, store, server) = start();
    let mut cfg = config("remote", 3);
    cfg.backend = BackendConfig::Http {
        url: server.url(),
        timeout_secs: 30,
        retries: 0,
    };
    let run = run_pipeline(&store, &cfg, RunOptions::default()).unwrap();
    assert!(run.is_complete(), "{:?}", run.failure());
    for (i, id) in run.image_ids.iter().enumerate() {
        let item = GenerationJob {
            seed: cfg.job.item_seed(i as u32),
            batch_size: 1,
            ..cfg.job.clone()
        };
        let (png, _) = mock_generate(&item, &SceneParams::default()).unwrap();
        assert_eq!(store.read_image(id).unwrap(), png);
    }
    let m = store.manifest("remote").unwrap();
    assert!(m.images.iter().all(|r| r.provenance == Provenance::Generated));
}

#[test]
fn generate_endpoint_rejects_bad_jobs() {
    let (_d, _s, server) = start();
    let mut req = serde_json::to_value(synthdet_core::genclient::GenerateRequest::from(&config("x", 1).job)).unwrap();
    req["width"] = json!(100);
    let resp = Client::new().post(format!("{}/v1/generate", server.url())).json(&req).send().unwrap();
    assert!(resp.status().is_client_error());
}

#[test]
fn preview_is_monotone_and_read_only() {
    let (dir, store, server) = start();
    let client = Client::new();
    let mut cfg = config("pv", 6);
    cfg.annotator = AnnotatorConfig::Simulated {
        detector: Default::default(),
    };
    let run = post_run(&client, &server, &cfg);
    let id = run
        .image_ids
        .iter()
        .max_by_key(|id| store.raw(id).unwrap().len())
        .unwrap()
        .clone();
    let before = tree(dir.path());
    let ask = |conf: f64| -> Value {
        let body = json!({ "image_id": id, "filter": { "confidence_threshold": conf } });
        let resp = client.post(format!("{}/preview/filter", server.url())).json(&body).send().unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        resp.json().unwrap()
    };
    let loose = ask(0.70);
    let strict = ask(0.90);
    let loose_boxes = loose["boxes"].as_array().unwrap();
    let strict_boxes = strict["boxes"].as_array().unwrap();
    assert!(strict_boxes.iter().all(|b| loose_boxes.contains(b)));
    assert!(strict_boxes.len() < loose_boxes.len(), "fixture should separate the thresholds");

    // the default operating point matches what the pipeline persisted
    let stored = store.annotations(&id).unwrap();
    assert_eq!(serde_json::to_value(&stored.annotations.boxes).unwrap(), loose["boxes"]);
    assert_eq!(before, tree(dir.path()));
}

#[test]
fn patch_rejects_box_and_detects_stale_versions() {
    let (_d, _s, server) = start();
    let client = Client::new();
    let run = post_run(&client, &server, &config("rev", 2));
    let url = format!("{}/images/{}/annotations", server.url(), run.image_ids[0]);
    let doc: StoredAnnotation = client.get(&url).send().unwrap().json().unwrap();
    let first = doc.annotations.boxes[0];

    let resp = client.patch(&url).json(&json!({ "version": doc.version, "reject": [0] })).send().unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let after: StoredAnnotation = client.get(&url).send().unwrap().json().unwrap();
    assert!(!after.annotations.boxes.contains(&first));
    assert_eq!(after.annotations.boxes.len(), doc.annotations.boxes.len() - 1);
    assert_eq!(serde_json::to_value(after.annotations.source).unwrap(), json!("human_reviewed"));

    let stale = client.patch(&url).json(&json!({ "version": doc.version, "reject": [0] })).send().unwrap();
    assert_eq!(stale.status(), StatusCode::CONFLICT);
    let bad = client.patch(&url).json(&json!({ "version": after.version, "reject": [999] })).send().unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    let body: Value = bad.json().unwrap();
    assert_eq!(body["fields"][0]["field"], "reject[0]");
}

#[test]
fn review_round_trip_exports_only_accepted_boxes() {
    let (dir, _s, server) = start();
    let client = Client::new();
    let run = post_run(&client, &server, &config("wb", 4));

    let ids: Vec<String> = client.get(format!("{}/images", server.url())).send().unwrap().json().unwrap();
    assert_eq!(ids, run.image_ids);
    let png = client.get(format!("{}/images/{}", server.url(), ids[0])).send().unwrap();
    assert_eq!(png.headers()["content-type"], "image/png");
    assert!(png.bytes().unwrap().starts_with(b"\x89PNG"));

    let mut accepted = BTreeMap::new();
    for id in &ids {
        let url = format!("{}/images/{id}/annotations", server.url());
        let doc: StoredAnnotation = client.get(&url).send().unwrap().json().unwrap();
        let resp = client.patch(&url).json(&json!({ "version": doc.version, "reject": [0] })).send().unwrap();
        let edited: StoredAnnotation = resp.json().unwrap();
        accepted.insert(id.clone(), edited.annotations.boxes);
    }
    let resp = client.post(format!("{}/runs/wb/export", server.url())).send().unwrap();
    assert_eq!(resp.status(), StatusCode::OK);

    let coco = synthdet_core::dataset::import_coco(&dir.path().join("exports/wb/coco.json")).unwrap();
    for rec in &coco.images {
        assert_eq!(rec.annotations.boxes, accepted[&rec.image_id]);
    }
}

#[test]
fn errors_carry_status_and_field_detail() {
    let (_d, _s, server) = start();
    let client = Client::new();
    let mut cfg = config("bad", 2);
    cfg.job.height = 720;
    cfg.filter.confidence_threshold = 1.5;
    let resp = client.post(format!("{}/runs", server.url())).json(&cfg).send().unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = resp.json().unwrap();
    let fields: Vec<&str> = body["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    assert!(fields.contains(&"job.height") && fields.contains(&"filter.confidence_threshold"), "{fields:?}");

    let resp = client
        .post(format!("{}/runs", server.url()))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    for path in ["/runs/nope", "/reports/nope", "/images/nope", "/images/nope/annotations"] {
        let resp = client.get(format!("{}{path}", server.url())).send().unwrap();
        assert_eq!(resp.status(), StatusCode::NOT_FOUND, "{path}");
    }
    let resp = client
        .post(format!("{}/preview/filter", server.url()))
        .json(&json!({ "image_id": "nope" }))
        .send()
        .unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}

#[test]
fn detached_runs_finish_in_the_background() {
    let (_d, _s, server) = start();
    let client = Client::new();
    let resp = client.post(format!("{}/runs?detach=true", server.url())).json(&config("bg", 3)).send().unwrap();
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(30);
    loop {
        let resp = client.get(format!("{}/runs/bg", server.url())).send().unwrap();
        if resp.status() == StatusCode::OK {
            let run: PipelineRun = resp.json().unwrap();
            if run.is_complete() {
                break;
            }
        }
        assert!(std::time::Instant::now() < deadline, "run did not finish");
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    let runs: Vec<String> = client.get(format!("{}/runs", server.url())).send().unwrap().json().unwrap();
    assert_eq!(runs, ["bg"]);
}

#[test]
fn presets_list_and_create() {
    let (_d, _s, server) = start();
    let client = Client::new();
    let url = format!("{}/presets", server.url());
    let list: Vec<Value> = client.get(&url).send().unwrap().json().unwrap();
    let fin = list.iter().find(|p| p["key"] == "final").unwrap();
    assert_eq!((fin["cfg_scale"].as_f64(), fin["steps"].as_u64()), (Some(6.0), Some(30)));
    assert_eq!((fin["width"].as_u64(), fin["height"].as_u64()), (Some(1280), Some(704)));

    let mine = json!({ "key": "mine", "positive_prompt": "an orchard", "cfg_scale": 5.0, "steps": 20, "width": 512, "height": 512 });
    assert_eq!(client.post(&url).json(&mine).send().unwrap().status(), StatusCode::CREATED);
    assert_eq!(client.post(&url).json(&mine).send().unwrap().status(), StatusCode::CONFLICT);
    let list: Vec<Value> = client.get(&url).send().unwrap().json().unwrap();
    assert!(list.iter().any(|p| p["key"] == "mine"));
}

#[test]
fn experiment_report_is_stored_and_served() {
    let (dir, _s, server) = start();
    let client = Client::new();
    let write = |name: &str, v: [f64; 3]| {
        let p = dir.path().join(name);
        std::fs::write(&p, json!({ "AP@0.50": v[0], "AP@0.5:0.05:0.95": v[1], "AP@0.75": v[2] }).to_string()).unwrap();
        p
    };
    let cand: Vec<_> = (0..5).map(|i| write(&format!("c{i}.json"), [0.61, 0.30, 0.25])).collect();
    let base: Vec<_> = (0..5).map(|i| write(&format!("b{i}.json"), [0.70, 0.36, 0.34])).collect();
    let body = json!({ "report_id": "table1", "candidate": cand, "baseline": base, "repeats": 5 });
    let resp = client.post(format!("{}/experiments", server.url())).json(&body).send().unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let created: Value = resp.json().unwrap();
    assert!(created["table"].as_str().unwrap().contains("Difference"));
    assert!(created["table"].as_str().unwrap().contains("0.09"));

    let report: Value = client.get(format!("{}/reports/table1", server.url())).send().unwrap().json().unwrap();
    assert_eq!(report, created["report"]);

    let body = json!({ "candidate": cand, "baseline": &base[..4], "repeats": 5 });
    let resp = client.post(format!("{}/experiments", server.url())).json(&body).send().unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}
