mod common;

use std::sync::{Arc, OnceLock};

use axum::http::StatusCode;
use axum::Router;
use cbir_core::descriptor::{describe, DescribeInput, DescriptorConfig};
use cbir_core::imagecore::{decode_raster, prepare_roi};
use cbir_core::phantom::{PatientLayout, PhantomCase};
use cbir_core::retrieval::{query, EvalSetting, QueryOptions};
use cbir_service::Engine;
use common::{phantom_upload, png, roi_id, send, Form};
use proptest::prelude::*;
use serde_json::{json, Value};
use tokio::runtime::Runtime;

struct Fixture {
    rt: Runtime,
    app: Router,
    engine: Arc<Engine>,
    cases: Vec<PhantomCase>,
    _dir: tempfile::TempDir,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let rt = Runtime::new().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let engine = common::engine(dir.path());
        let app = cbir_service::http::router(engine.clone());
        let (cases, form) = phantom_upload(4, PatientLayout::Mixed(4), 8);
        let reply = rt.block_on(send(&app, form.request("/api/v1/ingest")));
        assert_eq!(reply.status, StatusCode::OK);
        Fixture { rt, app, engine, cases, _dir: dir }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn http_query_equals_library_query(
        probe in 0usize..12,
        k in 1usize..16,
        setting in prop::sample::select(vec![EvalSetting::AllPatients, EvalSetting::SamePatient, EvalSetting::CrossPatient]),
        patient in 0usize..4,
        exclude in any::<bool>(),
    ) {
        let f = fixture();
        let case = &f.cases[probe];
        let patient_id = format!("P{patient:03}");
        let exclude_id = exclude.then(|| roi_id(case));
        let mut form = Form::default()
            .file("image", "q.png", &png(case))
            .text("k", &k.to_string())
            .text("setting", &setting.to_string())
            .text("patient_id", &patient_id);
        if let Some(x) = &exclude_id {
            form = form.text("exclude_id", x);
        }
        let reply = f.rt.block_on(send(&f.app, form.request("/api/v1/query")));

        let roi = prepare_roi(&decode_raster(&png(case)).unwrap(), None).unwrap();
        let q = describe(DescribeInput::Image(&roi), &DescriptorConfig::default()).unwrap().vector;
        let snap = f.engine.snapshot();
        let opts = QueryOptions { k, setting, patient_id: Some(&patient_id), exclude_id: exclude_id.as_deref() };
        let ranked = query(&snap.index, &q, &opts).unwrap();
        if ranked.is_empty() {
            prop_assert_eq!(reply.status, StatusCode::UNPROCESSABLE_ENTITY);
            return Ok(());
        }
        prop_assert_eq!(reply.status, StatusCode::OK);
        let want: Vec<Value> = ranked
            .hits
            .iter()
            .map(|h| {
                let e = snap.index.get(&h.id).unwrap();
                json!({
                    "id": h.id,
                    "distance": h.distance,
                    "lesion_type": e.lesion_type,
                    "patient_id": e.patient_id,
                    "thumbnail_url": format!("/api/v1/thumbnails/{}.png", h.id),
                })
            })
            .collect();
        prop_assert_eq!(reply.json(), Value::Array(want));
    }
}
