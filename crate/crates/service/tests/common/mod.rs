#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cbir_core::imagecore::encode_png16;
use cbir_core::phantom::{corpus, PatientLayout, PhantomCase};
use cbir_service::{Engine, ServiceConfig};
use http_body_util::BodyExt;
use tower::ServiceExt;

pub const BOUNDARY: &str = "cbir-test-boundary-7f3a";

#[derive(Default)]
pub struct Form {
    body: Vec<u8>,
}

impl Form {
    pub fn text(mut self, name: &str, value: &str) -> Self {
        self.body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes(),
        );
        self
    }

    pub fn file(mut self, name: &str, file_name: &str, bytes: &[u8]) -> Self {
        self.body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{file_name}\"\r\nContent-Type: application/octet-stream\r\n\r\n"
            )
            .as_bytes(),
        );
        self.body.extend_from_slice(bytes);
        self.body.extend_from_slice(b"\r\n");
        self
    }

    pub fn request(mut self, uri: &str) -> Request<Body> {
        self.body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
        Request::post(uri)
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(self.body))
            .unwrap()
    }
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("non-JSON body ({e}): {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_json(app: &Router, uri: &str, body: &serde_json::Value) -> Reply {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(body).unwrap()))
        .unwrap();
    send(app, req).await
}

pub fn engine(dir: &std::path::Path) -> Arc<Engine> {
    engine_with(ServiceConfig::default().with_data_dir(dir))
}

pub fn engine_with(cfg: ServiceConfig) -> Arc<Engine> {
    Arc::new(Engine::open(cfg).unwrap())
}

pub const HEADER: &str = "image_path,patient_id,study_id,lesion_type,left,top,right,bottom\n";

/// Phantom cases as full 64x64 ROIs, manifest paths under `scans/`.
pub fn phantom_upload(per_kind: usize, layout: PatientLayout, seed: u64) -> (Vec<PhantomCase>, Form) {
    let cases = corpus(per_kind, layout, seed);
    let mut csv = String::from(HEADER);
    let mut form = Form::default();
    for c in &cases {
        csv.push_str(&format!(
            "scans/{}.png,{},{},{},0,0,64,64\n",
            c.id,
            c.patient_id,
            c.study_id,
            c.kind.label()
        ));
    }
    form = form.text("manifest", &csv);
    for c in &cases {
        form = form.file("files", &format!("{}.png", c.id), &encode_png16(&c.image).unwrap());
    }
    (cases, form)
}

pub fn png(case: &PhantomCase) -> Vec<u8> {
    encode_png16(&case.image).unwrap()
}

pub fn roi_id(case: &PhantomCase) -> String {
    format!("{}-0-0-64-64", case.id)
}
