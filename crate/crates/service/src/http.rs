//! `/api/v1` routes.
//!
//! | method | path                          | body                                   |
//! |--------|-------------------------------|----------------------------------------|
//! | GET    | `/health`                     |                                        |
//! | GET    | `/index/stats`                |                                        |
//! | POST   | `/ingest`                     | multipart: `manifest` CSV + image files |
//! | POST   | `/query`                      | multipart: `image`, `bbox`, `k`, `setting`, `patient_id`, `exclude_id` |
//! | POST   | `/filter-preview`             | multipart: `image`, `bbox`, `scales`, `alpha`, `beta`, `gamma`, `band`, `band_count` |
//! | POST   | `/annotations`                | JSON annotation                        |
//! | GET    | `/annotations/{image_id}`     |                                        |
//! | GET    | `/thumbnails/{id}.png`        |                                        |

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::MultipartError;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cbir_core::imagecore::{crop_roi, parse_manifest, BBox};
use cbir_core::retrieval::EvalSetting;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::config::ServiceConfig;
use crate::engine::{Engine, QueryRequest, SourceItem, UploadSource};
use crate::error::{ServiceError, ServiceResult};
use crate::preview::{render, PreviewOptions};

type AppState = Arc<Engine>;

pub fn router(engine: Arc<Engine>) -> Router {
    let cfg = engine.config().clone();
    let api = Router::new()
        .route("/health", get(health))
        .route("/index/stats", get(stats))
        .route("/ingest", post(ingest))
        .route("/query", post(query))
        .route("/filter-preview", post(filter_preview))
        .route("/annotations", post(post_annotation))
        .route("/annotations/{image_id}", get(get_annotations))
        .nest_service("/thumbnails", ServeDir::new(engine.thumbnail_dir()))
        .layer(DefaultBodyLimit::max(cfg.max_upload_bytes))
        .with_state(engine);
    let mut app = Router::new().nest("/api/v1", api);
    if let Some(dir) = &cfg.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    if !cfg.cors_allowlist.is_empty() {
        let origins: Vec<HeaderValue> = cfg
            .cors_allowlist
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST])
                .allow_headers(Any),
        );
    }
    app
}

/// Bind `config.listen` and serve until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let listen = config.listen;
    let engine = tokio::task::spawn_blocking(move || Engine::open(config)).await??;
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::new(engine)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ServiceResult<T> + Send + 'static) -> ServiceResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

struct Field {
    name: String,
    file_name: Option<String>,
    bytes: Bytes,
}

fn multipart_error(e: MultipartError) -> ServiceError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ServiceError::TooLarge(e.body_text())
    } else {
        ServiceError::BadRequest(format!("multipart: {}", e.body_text()))
    }
}

async fn read_fields(mut mp: Multipart) -> ServiceResult<Vec<Field>> {
    let mut out = Vec::new();
    while let Some(field) = mp.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(multipart_error)?;
        out.push(Field { name, file_name, bytes });
    }
    Ok(out)
}

/// Text form fields by name (later duplicates win).
fn text_fields(fields: &[Field]) -> ServiceResult<HashMap<&str, String>> {
    fields
        .iter()
        .filter(|f| f.file_name.is_none() && f.name != "image" && f.name != "manifest")
        .map(|f| {
            let text = std::str::from_utf8(&f.bytes)
                .map_err(|_| ServiceError::BadRequest(format!("field `{}` is not UTF-8", f.name)))?;
            Ok((f.name.as_str(), text.trim().to_string()))
        })
        .collect()
}

fn parse_field<T: FromStr>(form: &HashMap<&str, String>, name: &str) -> ServiceResult<Option<T>> {
    form.get(name)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse()
                .map_err(|_| ServiceError::BadRequest(format!("field `{name}` has invalid value `{v}`")))
        })
        .transpose()
}

pub fn parse_bbox(text: &str) -> ServiceResult<BBox> {
    let nums: Option<Vec<u32>> = text.split(',').map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[l, t, r, b]) => {
            let bbox = BBox::new(l, t, r, b);
            if !bbox.is_valid() {
                return Err(ServiceError::BadRequest(format!(
                    "bbox {bbox} needs left < right and top < bottom"
                )));
            }
            Ok(bbox)
        }
        _ => Err(ServiceError::BadRequest(format!(
            "bbox must be `left,top,right,bottom`, got `{text}`"
        ))),
    }
}

fn image_field(fields: &[Field]) -> ServiceResult<&Bytes> {
    fields
        .iter()
        .find(|f| f.name == "image")
        .map(|f| &f.bytes)
        .ok_or_else(|| ServiceError::BadRequest("missing multipart field `image`".into()))
}

async fn health(State(engine): State<AppState>) -> Json<Value> {
    Json(json!({ "status": "ok", "index_version": engine.stats().index_version }))
}

async fn stats(State(engine): State<AppState>) -> Json<Value> {
    Json(json!(engine.stats()))
}

async fn ingest(State(engine): State<AppState>, mp: Multipart) -> ServiceResult<Json<Value>> {
    let fields = read_fields(mp).await?;
    let manifest = fields
        .iter()
        .find(|f| f.name == "manifest")
        .ok_or_else(|| ServiceError::BadRequest("missing multipart field `manifest`".into()))?;
    let manifest = parse_manifest(manifest.bytes.as_ref())?;
    let mut source = UploadSource::default();
    for f in fields.iter().filter(|f| f.name != "manifest") {
        if let Some(name) = &f.file_name {
            source.insert(name.clone(), f.bytes.to_vec());
        }
        source.insert(f.name.clone(), f.bytes.to_vec());
    }
    let summary = blocking(move || engine.ingest(&manifest, &source)).await?;
    Ok(Json(json!(summary)))
}

async fn query(State(engine): State<AppState>, mp: Multipart) -> ServiceResult<Json<Value>> {
    let fields = read_fields(mp).await?;
    let bytes = image_field(&fields)?.clone();
    let form = text_fields(&fields)?;
    let req = QueryRequest {
        k: parse_field(&form, "k")?,
        setting: match form.get("setting").filter(|s| !s.is_empty()) {
            Some(s) => EvalSetting::from_str(s)?,
            None => EvalSetting::AllPatients,
        },
        patient_id: form.get("patient_id").filter(|s| !s.is_empty()).cloned(),
        exclude_id: form.get("exclude_id").filter(|s| !s.is_empty()).cloned(),
        bbox: form.get("bbox").filter(|s| !s.is_empty()).map(|s| parse_bbox(s)).transpose()?,
    };
    let hits = blocking(move || {
        let item = engine.decode_upload(&bytes)?;
        engine.query_item(&item, &req)
    })
    .await?;
    Ok(Json(json!(hits)))
}

async fn filter_preview(State(engine): State<AppState>, mp: Multipart) -> ServiceResult<Response> {
    let fields = read_fields(mp).await?;
    let bytes = image_field(&fields)?.clone();
    let form = text_fields(&fields)?;
    let band = match (parse_field::<usize>(&form, "band")?, parse_field::<usize>(&form, "band_count")?) {
        (Some(b), Some(n)) => Some((b, n)),
        (None, None) => None,
        _ => return Err(ServiceError::BadRequest("band and band_count go together".into())),
    };
    let opts = PreviewOptions {
        scales: form.get("scales").filter(|s| !s.is_empty()).cloned(),
        alpha: parse_field(&form, "alpha")?,
        beta: parse_field(&form, "beta")?,
        gamma: parse_field(&form, "gamma")?,
        band,
    };
    let bbox = form.get("bbox").filter(|s| !s.is_empty()).map(|s| parse_bbox(s)).transpose()?;
    let (png, side) = blocking(move || {
        let SourceItem::Image(img) = engine.decode_upload(&bytes)? else {
            return Err(ServiceError::BadRequest("filter preview needs a raster image".into()));
        };
        let img = match bbox {
            Some(b) => crop_roi(&img, &b)?,
            None => img,
        };
        render(&img, &opts.params()?)
    })
    .await?;
    let scales = format!(
        "{}:{}",
        side.scales.first().copied().unwrap_or_default(),
        side.scales.last().copied().unwrap_or_default()
    );
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_string()),
            (header::HeaderName::from_static("x-response-max"), side.max_response.to_string()),
            (header::HeaderName::from_static("x-scale-range"), scales),
        ],
        png,
    )
        .into_response())
}

async fn post_annotation(State(engine): State<AppState>, body: Bytes) -> ServiceResult<(StatusCode, Json<Value>)> {
    let value: Value = serde_json::from_slice(&body)
        .map_err(|e| ServiceError::BadRequest(format!("annotation is not valid JSON: {e}")))?;
    let stored = blocking(move || engine.add_annotation(value)).await?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn get_annotations(State(engine): State<AppState>, Path(image_id): Path<String>) -> ServiceResult<Json<Value>> {
    let list = blocking(move || engine.annotations(&image_id)).await?;
    Ok(Json(Value::Array(list)))
}
