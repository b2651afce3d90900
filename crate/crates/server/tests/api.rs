use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use lcval_core::annotation::{read_records, AnnotationStore};
use lcval_core::grid::RasterGrid;
use lcval_core::nomenclature::ClassScheme;
use lcval_core::retrieval::Product;
use lcval_core::sampling::SamplePoint;
use lcval_server::{router, AppState};

fn samples(n: u64) -> Vec<SamplePoint> {
    (0..n)
        .map(|i| SamplePoint {
            sample_id: i,
            x: 15.0 + 30.0 * i as f64,
            y: 45.0,
            stratum_id: if i % 2 == 0 { "Forest" } else { "Water" }.into(),
            source_product: "glc30".into(),
        })
        .collect()
}

fn state(n: u64) -> AppState {
    let grid = RasterGrid::filled(4, 30, 0.0, 120.0, 30.0, 0, 20).unwrap();
    let products = vec![Product::new("glc30", grid, ClassScheme::builtin("glc30").unwrap())];
    let store = AnnotationStore::new(0..n, ["ana".to_string(), "bo".to_string()]).unwrap();
    AppState::new(store, samples(n), products)
}

fn app(n: u64) -> Router {
    router(Arc::new(state(n)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = to_bytes(res.into_body(), 1 << 20).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn annotation(sample: u64, expert: &str, label: &str, confidence: u8) -> Value {
    json!({"sample_id": sample, "expert_id": expert, "label": label, "confidence": confidence, "timestamp": 1})
}

#[tokio::test]
async fn sample_list_filters_by_stratum_and_status() {
    let app = app(5);
    let (_, water) = call(&app, "GET", "/api/samples?stratum=Water", None).await;
    let ids: Vec<u64> = water.as_array().unwrap().iter().map(|s| s["sample_id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![1, 3]);
    call(&app, "POST", "/api/annotations", Some(annotation(2, "ana", "Forest", 1))).await;
    let (_, both) = call(&app, "GET", "/api/samples?stratum=Forest&status=pending", None).await;
    let ids: Vec<u64> = both.as_array().unwrap().iter().map(|s| s["sample_id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![0, 4]);
    let (_, none) = call(&app, "GET", "/api/samples?stratum=Urban", None).await;
    assert!(none.as_array().unwrap().is_empty());
}

#[tokio::test]
async fn first_annotation_marks_sample_partially_annotated() {
    let app = app(3);
    let (status, body) = call(&app, "POST", "/api/annotations", Some(annotation(1, "ana", "Water", 1))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["state"], "partially-annotated");

    let (_, list) = call(&app, "GET", "/api/samples?status=partially-annotated", None).await;
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0]["sample_id"], 1);
    assert_eq!(list[0]["annotated_by"], json!(["ana"]));

    let (_, all) = call(&app, "GET", "/api/samples", None).await;
    assert_eq!(all.as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn disagreement_goes_to_review_and_consensus_clears_it() {
    let app = app(2);
    call(&app, "POST", "/api/annotations", Some(annotation(0, "ana", "Forest", 1))).await;
    call(&app, "POST", "/api/annotations", Some(annotation(0, "bo", "Water", 1))).await;
    call(&app, "POST", "/api/annotations", Some(annotation(1, "ana", "Forest", 1))).await;
    let (_, done) = call(&app, "POST", "/api/annotations", Some(annotation(1, "bo", "Forest", 1))).await;
    assert_eq!(done["state"], "finalized");

    let (_, queue) = call(&app, "GET", "/api/review", None).await;
    let queue = queue.as_array().unwrap();
    assert_eq!(queue.len(), 1);
    assert_eq!(queue[0]["sample_id"], 0);
    assert_eq!(queue[0]["records"].as_array().unwrap().len(), 2);

    let consensus = json!({"sample_id": 0, "label": "Water", "confidence": 1});
    let (status, body) = call(&app, "POST", "/api/consensus", Some(consensus.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["state"], "finalized");
    let (_, queue) = call(&app, "GET", "/api/review", None).await;
    assert_eq!(queue, json!([]));

    let (status, err) = call(&app, "POST", "/api/consensus", Some(consensus)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "already-finalized");
}

#[tokio::test]
async fn consensus_on_pending_sample_is_rejected() {
    let app = app(1);
    let (status, err) =
        call(&app, "POST", "/api/consensus", Some(json!({"sample_id": 0, "label": "Water", "confidence": 2}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "not-reviewable");
}

#[tokio::test]
async fn errors_carry_code_and_message() {
    let app = app(1);
    let cases = [
        (annotation(9, "ana", "Water", 1), StatusCode::NOT_FOUND, "unknown-sample"),
        (annotation(0, "eve", "Water", 1), StatusCode::UNPROCESSABLE_ENTITY, "unknown-expert"),
        (annotation(0, "ana", "Lava", 1), StatusCode::BAD_REQUEST, "bad-request"),
        (annotation(0, "ana", "Water", 4), StatusCode::BAD_REQUEST, "bad-request"),
    ];
    for (body, status, code) in cases {
        let (got, err) = call(&app, "POST", "/api/annotations", Some(body)).await;
        assert_eq!(got, status, "{err}");
        assert_eq!(err["code"], code);
        assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
    call(&app, "POST", "/api/annotations", Some(annotation(0, "ana", "Water", 1))).await;
    let (status, err) = call(&app, "POST", "/api/annotations", Some(annotation(0, "ana", "Forest", 1))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "duplicate-annotation");

    let (status, err) = call(&app, "GET", "/api/samples?status=bogus", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "invalid-status");
    let (status, err) = call(&app, "GET", "/api/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not-found");
}

#[tokio::test]
async fn patch_has_odd_window_and_legend() {
    let app = app(2);
    let (status, patch) = call(&app, "GET", "/api/samples/0/patch", None).await;
    assert_eq!(status, StatusCode::OK);
    let w = &patch["windows"][0];
    assert_eq!(w["side"], 3);
    assert_eq!(w["values"].as_array().unwrap().len(), 9);
    assert_eq!(w["legend"][0]["code"], 20);
    assert_eq!(w["legend"][0]["general"], "Forest");
    // Sample 0 sits in column 0, so the western column is padding.
    assert_eq!(w["values"][0], 0);

    let (status, err) = call(&app, "GET", "/api/samples/77/patch", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "unknown-sample");
    let (status, err) = call(&app, "GET", "/api/samples/abc/patch", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "bad-request");
}

#[tokio::test]
async fn accepted_records_are_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let app = router(Arc::new(state(2).with_log_path(&path)));
    call(&app, "POST", "/api/annotations", Some(annotation(0, "ana", "Water", 2))).await;
    call(&app, "POST", "/api/annotations", Some(annotation(0, "bo", "Water", 1))).await;
    // Rejected records never reach the log.
    call(&app, "POST", "/api/annotations", Some(annotation(0, "bo", "Water", 1))).await;
    let records = read_records(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(records.len(), 2);
    let replayed = AnnotationStore::from_log(0..2, ["ana".into(), "bo".into()], records).unwrap();
    assert_eq!(replayed.review_queue(), vec![0]);
}

#[tokio::test]
async fn scripted_sessions_drive_queue_to_empty() {
    let shared = Arc::new(state(20));
    let app = router(shared.clone());
    let labels = ["ArtificialSurfaces", "Agriculture", "Forest", "Water", "OthersUnclassified"];
    for id in 0..20u64 {
        let label = labels[id as usize % 5];
        let other = if id % 4 == 0 { labels[(id as usize + 1) % 5] } else { label };
        call(&app, "POST", "/api/annotations", Some(annotation(id, "ana", label, 1))).await;
        call(&app, "POST", "/api/annotations", Some(annotation(id, "bo", other, 1))).await;
    }
    let (_, queue) = call(&app, "GET", "/api/review", None).await;
    let ids: Vec<u64> = queue.as_array().unwrap().iter().map(|i| i["sample_id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![0, 4, 8, 12, 16]);
    for id in ids {
        let body = json!({"sample_id": id, "label": "Forest", "confidence": 2});
        let (status, _) = call(&app, "POST", "/api/consensus", Some(body)).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, queue) = call(&app, "GET", "/api/review", None).await;
    assert_eq!(queue, json!([]));
    let gt = shared.snapshot().export_ground_truth(false).unwrap();
    assert_eq!(gt.entries.len(), 20);
}
