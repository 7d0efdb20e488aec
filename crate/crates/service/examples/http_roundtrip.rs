//! Drive the `/api/v1` router in-process: ingest phantoms, query, annotate.
//!
//! `cargo run --release -p cbir-service --example http_roundtrip`

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use cbir_core::imagecore::encode_png16;
use cbir_core::phantom::{corpus, PatientLayout};
use cbir_service::http::router;
use cbir_service::{Engine, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "roundtrip-boundary";

fn part(body: &mut Vec<u8>, name: &str, file_name: Option<&str>, bytes: &[u8]) {
    let disposition = match file_name {
        Some(f) => format!("form-data; name=\"{name}\"; filename=\"{f}\""),
        None => format!("form-data; name=\"{name}\""),
    };
    body.extend_from_slice(format!("--{BOUNDARY}\r\nContent-Disposition: {disposition}\r\n\r\n").as_bytes());
    body.extend_from_slice(bytes);
    body.extend_from_slice(b"\r\n");
}

fn multipart(uri: &str, mut body: Vec<u8>) -> Request<Body> {
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (u16, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let engine = Engine::open(ServiceConfig::default().with_data_dir(dir.path()))?;
    let app = router(Arc::new(engine));

    let cases = corpus(6, PatientLayout::Mixed(4), 17);
    let mut csv = String::from("image_path,patient_id,study_id,lesion_type,left,top,right,bottom\n");
    let mut body = Vec::new();
    for c in &cases {
        csv.push_str(&format!("{}.png,{},{},{},0,0,64,64\n", c.id, c.patient_id, c.study_id, c.kind.label()));
        part(&mut body, "files", Some(&format!("{}.png", c.id)), &encode_png16(&c.image)?);
    }
    part(&mut body, "manifest", None, csv.as_bytes());
    let (status, summary) = call(&app, multipart("/api/v1/ingest", body)).await;
    println!("POST /ingest -> {status} {summary}");

    let (_, stats) = call(&app, Request::get("/api/v1/index/stats").body(Body::empty())?).await;
    println!("GET /index/stats -> {stats}");

    let probe = &cases[7];
    let mut body = Vec::new();
    part(&mut body, "image", Some("probe.png"), &encode_png16(&probe.image)?);
    part(&mut body, "k", None, b"4");
    part(&mut body, "setting", None, b"cross_patient");
    part(&mut body, "patient_id", None, probe.patient_id.as_bytes());
    let (status, hits) = call(&app, multipart("/api/v1/query", body)).await;
    println!("POST /query ({} from {}) -> {status}", probe.kind.label(), probe.patient_id);
    for h in hits.as_array().into_iter().flatten() {
        println!("  {:<22} {:<6} {}  d={:.4}", h["id"], h["lesion_type"], h["patient_id"], h["distance"].as_f64().unwrap_or(f64::NAN));
    }

    let image_id = format!("{}-0-0-64-64", probe.id);
    let note = json!({
        "image_id": image_id,
        "shapes": [{"kind": "box", "coordinates": [[10.0, 12.0], [40.0, 44.0]]}],
        "label": probe.kind.label(),
        "author": "reader-1",
        "created_at": "2026-01-05T09:30:00Z"
    });
    let req = Request::post("/api/v1/annotations")
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(&note)?))?;
    let (status, _) = call(&app, req).await;
    println!("POST /annotations -> {status}");
    let (_, stored) = call(&app, Request::get(format!("/api/v1/annotations/{image_id}")).body(Body::empty())?).await;
    println!("GET /annotations/{image_id} -> {} record(s), equal: {}", stored.as_array().map_or(0, Vec::len), stored[0] == note);
    Ok(())
}
