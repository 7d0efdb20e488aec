mod common;

use axum::http::StatusCode;
use cbir_core::phantom::PatientLayout;
use cbir_service::http::router;
use cbir_service::ServiceConfig;
use common::*;
use serde_json::{json, Value};

#[tokio::test]
async fn fresh_service_reports_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(engine(dir.path()));
    let health = get(&app, "/api/v1/health").await;
    assert_eq!(health.status, StatusCode::OK);
    assert_eq!(health.json()["status"], "ok");
    let stats = get(&app, "/api/v1/index/stats").await.json();
    assert_eq!(stats["count"], 0);
    assert_eq!(stats["index_version"], 0);
}

#[tokio::test]
async fn ingest_three_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(engine(dir.path()));
    let (_, form) = phantom_upload(1, PatientLayout::Mixed(2), 11);
    let r = send(&app, form.request("/api/v1/ingest")).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json(), json!({"ingested": 3, "index_version": 1}));

    let stats = get(&app, "/api/v1/index/stats").await.json();
    assert_eq!(stats["count"], 3);
    assert_eq!(stats["dim"], 5);
    let total: u64 = stats["label_histogram"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 3);
}

#[tokio::test]
async fn ingest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(engine(dir.path()));

    let csv = format!("{HEADER}scans/absent.png,P1,S1,lung,0,0,8,8\n");
    let r = send(&app, Form::default().text("manifest", &csv).request("/api/v1/ingest")).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.text().contains("scans/absent.png"), "{}", r.text());

    let csv = format!("{HEADER}a.png,P1,S1,lung,9,0,3,8\n");
    let r = send(&app, Form::default().text("manifest", &csv).request("/api/v1/ingest")).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.text().contains("line 2"), "{}", r.text());

    let r = send(&app, Form::default().text("manifest", "image_path,patient_id\n").request("/api/v1/ingest")).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.text().contains("study_id"), "{}", r.text());

    let csv = format!("{HEADER}a.png,P1,S1,lung,0,0,8,8\n");
    let form = Form::default().text("manifest", &csv).file("f", "a.png", b"not an image");
    let r = send(&app, form.request("/api/v1/ingest")).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    assert_eq!(get(&app, "/api/v1/index/stats").await.json()["count"], 0);
}

#[tokio::test]
async fn empty_manifest_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(engine(dir.path()));
    let (_, form) = phantom_upload(1, PatientLayout::Mixed(2), 3);
    send(&app, form.request("/api/v1/ingest")).await;
    let r = send(&app, Form::default().text("manifest", HEADER).request("/api/v1/ingest")).await;
    assert_eq!(r.json(), json!({"ingested": 0, "index_version": 1}));
    assert_eq!(get(&app, "/api/v1/index/stats").await.json()["count"], 3);
}

#[tokio::test]
async fn duplicate_ingest_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(engine(dir.path()));
    let (cases, form) = phantom_upload(1, PatientLayout::Mixed(2), 3);
    send(&app, form.request("/api/v1/ingest")).await;
    let csv = format!("{HEADER}scans/{}.png,P9,S9,blob,0,0,64,64\n", cases[0].id);
    let form = Form::default().text("manifest", &csv).file("f", &format!("{}.png", cases[0].id), &png(&cases[0]));
    let r = send(&app, form.request("/api/v1/ingest")).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

async fn ingested(per_kind: usize, layout: PatientLayout) -> (tempfile::TempDir, axum::Router, Vec<cbir_core::phantom::PhantomCase>) {
    let dir = tempfile::tempdir().unwrap();
    let app = router(engine(dir.path()));
    let (cases, form) = phantom_upload(per_kind, layout, 21);
    let r = send(&app, form.request("/api/v1/ingest")).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    (dir, app, cases)
}

#[tokio::test]
async fn query_contract() {
    let (_dir, app, cases) = ingested(4, PatientLayout::Mixed(3)).await;
    let probe = &cases[4];

    let r = send(&app, Form::default().file("image", "q.png", &png(probe)).request("/api/v1/query")).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let hits = r.json();
    let hits = hits.as_array().unwrap();
    assert_eq!(hits.len(), 9);
    assert_eq!(hits[0]["id"], roi_id(probe));
    assert!(hits[0]["distance"].as_f64().unwrap() <= 1e-6);
    assert_eq!(hits[0]["thumbnail_url"], format!("/api/v1/thumbnails/{}.png", roi_id(probe)));
    let d: Vec<f64> = hits.iter().map(|h| h["distance"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));

    let again = send(&app, Form::default().file("image", "q.png", &png(probe)).request("/api/v1/query")).await;
    assert_eq!(again.body, r.body);

    let r = send(&app, Form::default().file("image", "q.png", &png(probe)).text("k", "3").request("/api/v1/query")).await;
    assert_eq!(r.json().as_array().unwrap().len(), 3);

    let form = Form::default()
        .file("image", "q.png", &png(probe))
        .text("setting", "cross_patient")
        .text("patient_id", &probe.patient_id)
        .text("k", "12");
    let r = send(&app, form.request("/api/v1/query")).await;
    let hits = r.json();
    assert!(!hits.as_array().unwrap().is_empty());
    assert!(hits.as_array().unwrap().iter().all(|h| h["patient_id"] != probe.patient_id.as_str()));
}

#[tokio::test]
async fn query_errors() {
    let (_dir, app, cases) = ingested(2, PatientLayout::Mixed(2)).await;
    let r = send(&app, Form::default().file("image", "q.png", b"garbage").request("/api/v1/query")).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let form = Form::default()
        .file("image", "q.png", &png(&cases[0]))
        .text("setting", "same")
        .text("patient_id", "nobody");
    let r = send(&app, form.request("/api/v1/query")).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{}", r.text());

    let form = Form::default().file("image", "q.png", &png(&cases[0])).text("setting", "same");
    assert_eq!(send(&app, form.request("/api/v1/query")).await.status, StatusCode::BAD_REQUEST);

    let form = Form::default().file("image", "q.png", &png(&cases[0])).text("bbox", "0,0,80,80");
    assert_eq!(send(&app, form.request("/api/v1/query")).await.status, StatusCode::BAD_REQUEST);

    let form = Form::default().file("image", "q.png", &png(&cases[0])).text("k", "0");
    assert_eq!(send(&app, form.request("/api/v1/query")).await.status, StatusCode::BAD_REQUEST);

    assert_eq!(send(&app, Form::default().request("/api/v1/query")).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn bbox_query_matches_cropped_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(engine(dir.path()));
    let case = &cbir_core::phantom::corpus(1, PatientLayout::Mixed(1), 2)[0];
    let csv = format!("{HEADER}big.png,P1,S1,blob,8,4,40,36\n");
    let form = Form::default().text("manifest", &csv).file("f", "big.png", &png(case));
    assert_eq!(send(&app, form.request("/api/v1/ingest")).await.status, StatusCode::OK);
    let form = Form::default().file("image", "q.png", &png(case)).text("bbox", "8,4,40,36");
    let hits = send(&app, form.request("/api/v1/query")).await.json();
    assert_eq!(hits[0]["id"], "big-8-4-40-36");
    assert_eq!(hits[0]["distance"].as_f64().unwrap(), 0.0);
}

fn annotation(image_id: &str, kind: &str, coords: Value) -> Value {
    json!({
        "image_id": image_id,
        "shapes": [{"kind": kind, "coordinates": coords}],
        "label": "blob",
        "author": "reader-2",
        "created_at": "2025-01-15T08:30:00+01:00"
    })
}

#[tokio::test]
async fn annotations_round_trip() {
    let (_dir, app, cases) = ingested(1, PatientLayout::Mixed(1)).await;
    let id = roi_id(&cases[0]);

    let empty = get(&app, &format!("/api/v1/annotations/{id}")).await;
    assert_eq!(empty.status, StatusCode::OK);
    assert_eq!(empty.json(), json!([]));

    let a = annotation(&id, "box", json!([[2.5, 3], [40, 50]]));
    let b = annotation(&id, "polygon", json!([[1, 1], [10, 1], [5, 9]]));
    for body in [&a, &b] {
        let r = post_json(&app, "/api/v1/annotations", body).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    }
    let r = get(&app, &format!("/api/v1/annotations/{id}")).await;
    assert_eq!(r.json(), json!([a, b]));

    let bad = annotation(&id, "polygon", json!([[1, 1], [70, 1], [5, 9]]));
    assert_eq!(post_json(&app, "/api/v1/annotations", &bad).await.status, StatusCode::BAD_REQUEST);
    let bad = annotation(&id, "circle", json!([[1, 1]]));
    assert_eq!(post_json(&app, "/api/v1/annotations", &bad).await.status, StatusCode::BAD_REQUEST);
    let mut bad = annotation(&id, "point", json!([[1, 1]]));
    bad.as_object_mut().unwrap().remove("author");
    assert_eq!(post_json(&app, "/api/v1/annotations", &bad).await.status, StatusCode::BAD_REQUEST);

    let unknown = get(&app, "/api/v1/annotations/nope").await;
    assert_eq!(unknown.status, StatusCode::NOT_FOUND);
    let r = post_json(&app, "/api/v1/annotations", &annotation("nope", "point", json!([[1, 1]]))).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_annotation_posts() {
    let (_dir, app, cases) = ingested(2, PatientLayout::Mixed(2)).await;
    let mut tasks = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        for j in 0..5 {
            let app = app.clone();
            let body = annotation(&roi_id(c), "point", json!([[i, j]]));
            tasks.push(tokio::spawn(async move { post_json(&app, "/api/v1/annotations", &body).await.status }));
        }
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    for c in &cases {
        let list = get(&app, &format!("/api/v1/annotations/{}", roi_id(c))).await.json();
        assert_eq!(list.as_array().unwrap().len(), 5);
    }
}

#[tokio::test]
async fn thumbnails_are_served() {
    let (_dir, app, cases) = ingested(1, PatientLayout::Mixed(1)).await;
    let r = get(&app, &format!("/api/v1/thumbnails/{}.png", roi_id(&cases[1]))).await;
    assert_eq!(r.status, StatusCode::OK);
    let img = cbir_core::imagecore::decode_raster(&r.body).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
    assert_eq!(get(&app, "/api/v1/thumbnails/missing.png").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn filter_preview_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(engine(dir.path()));
    let flat = cbir_core::imagecore::encode_png16(&cbir_core::imagecore::ImageGrid::filled(20, 20, 0.5)).unwrap();
    let r = send(&app, Form::default().file("image", "f.png", &flat).text("scales", "1:3:1").request("/api/v1/filter-preview")).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.headers["content-type"], "image/png");
    assert_eq!(r.headers["x-response-max"], "0");

    let case = &cbir_core::phantom::corpus(1, PatientLayout::Mixed(1), 4)[0];
    let form = Form::default().file("image", "b.png", &png(case)).text("band", "1").text("band_count", "4");
    let r = send(&app, form.request("/api/v1/filter-preview")).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.headers["x-scale-range"], "3:4.8");
    let resp = cbir_core::imagecore::decode_raster(&r.body).unwrap();
    assert_eq!((resp.width(), resp.height()), (64, 64));

    let form = Form::default().file("image", "b.png", &png(case)).text("band", "1");
    assert_eq!(send(&app, form.request("/api/v1/filter-preview")).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversize_upload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        max_upload_bytes: 4096,
        ..ServiceConfig::default().with_data_dir(dir.path())
    };
    let app = router(engine_with(cfg));
    let form = Form::default().file("image", "big.png", &vec![7u8; 20_000]);
    let r = send(&app, form.request("/api/v1/query")).await;
    assert_eq!(r.status, StatusCode::PAYLOAD_TOO_LARGE, "{}", r.text());
}

#[tokio::test]
async fn concurrent_queries_agree() {
    let (_dir, app, cases) = ingested(3, PatientLayout::Mixed(2)).await;
    let bytes = png(&cases[2]);
    let baseline = send(&app, Form::default().file("image", "q.png", &bytes).request("/api/v1/query")).await.body;
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let (app, bytes) = (app.clone(), bytes.clone());
            tokio::spawn(async move { send(&app, Form::default().file("image", "q.png", &bytes).request("/api/v1/query")).await.body })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), baseline);
    }
}

#[tokio::test]
async fn cors_allowlist() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        cors_allowlist: vec!["http://localhost:4200".into()],
        ..ServiceConfig::default().with_data_dir(dir.path())
    };
    let app = router(engine_with(cfg));
    let req = axum::http::Request::get("/api/v1/health")
        .header("origin", "http://localhost:4200")
        .body(axum::body::Body::empty())
        .unwrap();
    let r = send(&app, req).await;
    assert_eq!(r.headers["access-control-allow-origin"], "http://localhost:4200");
    let req = axum::http::Request::get("/api/v1/health")
        .header("origin", "http://evil.example")
        .body(axum::body::Body::empty())
        .unwrap();
    assert!(send(&app, req).await.headers.get("access-control-allow-origin").is_none());
}

#[tokio::test]
async fn static_dir_serves_the_client() {
    let dir = tempfile::tempdir().unwrap();
    let web = dir.path().join("web");
    std::fs::create_dir(&web).unwrap();
    std::fs::write(web.join("index.html"), "<!doctype html><title>cbir</title>").unwrap();
    let cfg = ServiceConfig {
        static_dir: Some(web),
        ..ServiceConfig::default().with_data_dir(dir.path().join("data"))
    };
    let app = router(engine_with(cfg));
    let page = get(&app, "/index.html").await;
    assert_eq!(page.status, StatusCode::OK);
    assert!(page.text().contains("<title>cbir</title>"));
    assert_eq!(get(&app, "/").await.status, StatusCode::OK);
    assert_eq!(get(&app, "/api/v1/health").await.status, StatusCode::OK);
}
