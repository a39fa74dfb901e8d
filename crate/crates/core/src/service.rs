//! HTTP inference service.
//!
//! * `POST /v1/segment` takes `{"image": <base64 PNG>, "prompt": <prompt
//!   document>, "model_id": <optional>}` and returns `{"mask": <base64
//!   PNG>, "contours": [[[x, y], ...], ...], "latency_ms", "model_id",
//!   "width", "height"}`;
//! * `GET /v1/health` returns `{status, model_id, checkpoint_hash}`;
//! * `GET /v1/models` lists the registry.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::contour::extract_contours;
use crate::data::{ClassMask, ImageTensor};
use crate::error::{Error, Result};
use crate::model::{hex, load_checkpoint, Segmenter};
use crate::prompt::{render_prompt_overlay, Point, VisualPrompt};

/// Largest accepted image side in pixels.
pub const MAX_SIDE: u32 = 4096;

pub struct ModelEntry {
    pub id: String,
    pub checkpoint_hash: String,
    model: Segmenter,
}

impl ModelEntry {
    pub fn new(id: impl Into<String>, model: &Segmenter) -> Result<Self> {
        let mut h = Sha256::new();
        for (name, p) in model.named_params() {
            h.update(name.as_bytes());
            for v in p.tensor().flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()? {
                h.update(v.to_le_bytes());
            }
        }
        Ok(Self {
            id: id.into(),
            checkpoint_hash: hex(&h.finalize()),
            model: model.detached(),
        })
    }

    pub fn from_checkpoint(id: impl Into<String>, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model = load_checkpoint(path)?;
        Ok(Self {
            id: id.into(),
            checkpoint_hash: hex(&Sha256::digest(&bytes)),
            model: model.detached(),
        })
    }

    pub fn model(&self) -> &Segmenter {
        &self.model
    }
}

pub struct ServiceState {
    models: BTreeMap<String, Arc<ModelEntry>>,
    default_model: String,
    permits: Arc<Semaphore>,
}

impl ServiceState {
    /// The first entry is the default model. `workers` caps concurrent
    /// forward passes.
    pub fn new(entries: Vec<ModelEntry>, workers: usize) -> Result<Self> {
        let default_model = entries
            .first()
            .map(|e| e.id.clone())
            .ok_or_else(|| Error::InvalidConfig("service needs at least one model".into()))?;
        let mut models = BTreeMap::new();
        for e in entries {
            if models.contains_key(&e.id) {
                return Err(Error::InvalidConfig(format!("duplicate model id {:?}", e.id)));
            }
            models.insert(e.id.clone(), Arc::new(e));
        }
        Ok(Self {
            models,
            default_model,
            permits: Arc::new(Semaphore::new(workers.max(1))),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask: String,
    pub contours: Vec<Vec<Point>>,
    pub latency_ms: f64,
    pub model_id: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/segment", post(segment))
        .route("/v1/health", get(health))
        .route("/v1/models", get(models))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<ServiceState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "serving");
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    let entry = &state.models[&state.default_model];
    Json(json!({
        "status": "ok",
        "model_id": entry.id,
        "checkpoint_hash": entry.checkpoint_hash,
    }))
}

async fn models(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    let list: Vec<Value> = state
        .models
        .values()
        .map(|e| {
            json!({
                "id": e.id,
                "checkpoint_hash": e.checkpoint_hash,
                "image_size": e.model.config.image_size(),
            })
        })
        .collect();
    Json(json!({ "models": list }))
}

fn decode_image(encoded: &str) -> std::result::Result<ImageTensor, ApiError> {
    let bytes = B64
        .decode(encoded.trim())
        .map_err(|e| ApiError::bad_request(format!("image is not base64: {e}")))?;
    let reader = image::ImageReader::new(Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| ApiError::bad_request(format!("unreadable image: {e}")))?;
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| ApiError::bad_request(format!("unreadable image: {e}")))?;
    if w > MAX_SIDE || h > MAX_SIDE {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image {w}x{h} exceeds {MAX_SIDE} px per side"),
        ));
    }
    let img = image::load_from_memory(&bytes)
        .map_err(|e| ApiError::bad_request(format!("unreadable image: {e}")))?;
    Ok(ImageTensor::from_rgb8(&img.to_rgb8()))
}

/// Overlay at native size, resize to the model input, predict, and bring
/// the mask back to native size.
pub fn segment_native(model: &Segmenter, image: &ImageTensor, prompt: &VisualPrompt) -> Result<ClassMask> {
    let rendered = render_prompt_overlay(image, prompt)?;
    let size = model.config.image_size();
    let input = rendered.resize_bilinear(size, size);
    let pred = model
        .predict(std::slice::from_ref(&input))?
        .pop()
        .expect("one prediction per image");
    Ok(pred.resize_nearest(image.height(), image.width()))
}

async fn segment(State(state): State<Arc<ServiceState>>, body: Bytes) -> std::result::Result<Json<SegmentResponse>, ApiError> {
    let started = Instant::now();
    let req: Value = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid JSON: {e}")))?;
    let encoded = req
        .get("image")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::bad_request("missing string field `image`"))?;
    let model_id = match req.get("model_id") {
        None | Some(Value::Null) => state.default_model.clone(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ApiError::bad_request("`model_id` must be a string")),
    };
    let entry = state
        .models
        .get(&model_id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model {model_id:?}")))?;
    let image = decode_image(encoded)?;
    let prompt = match req.get("prompt") {
        None | Some(Value::Null) => VisualPrompt::none(),
        Some(doc) => VisualPrompt::from_document(doc, image.height(), image.width())
            .and_then(|p| p.check_bounds(image.height(), image.width()).map(|_| p))
            .map_err(|e| ApiError::bad_request(e.to_string()))?,
    };
    let _permit = state
        .permits
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let (h, w) = (image.height(), image.width());
    let mask = tokio::task::spawn_blocking(move || segment_native(entry.model(), &image, &prompt))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("inference failed: {e}")))?;
    let contours = extract_contours(&mask);
    let png = mask
        .encode_png()
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(SegmentResponse {
        mask: B64.encode(png),
        contours,
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
        model_id,
        width: w,
        height: h,
    }))
}

#[cfg(test)]
mod tests {
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    use super::*;
    use crate::model::tests::tiny_config;

    fn state() -> Arc<ServiceState> {
        let model = Segmenter::new(tiny_config(), 3).unwrap();
        Arc::new(ServiceState::new(vec![ModelEntry::new("tiny", &model).unwrap()], 1).unwrap())
    }

    fn png_b64(h: usize, w: usize) -> String {
        let img = ImageTensor::filled(h, w, [0.6, 0.2, 0.2]);
        let mut bytes = Vec::new();
        img.to_rgb8()
            .write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
            .unwrap();
        B64.encode(bytes)
    }

    async fn call(state: Arc<ServiceState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
            .unwrap();
        let resp = router(state).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    #[tokio::test]
    async fn health_reports_default_model() {
        let (status, body) = call(state(), "GET", "/v1/health", None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["status"], "ok");
        assert_eq!(body["model_id"], "tiny");
        assert_eq!(body["checkpoint_hash"].as_str().unwrap().len(), 64);
    }

    #[tokio::test]
    async fn segment_returns_native_size_mask() {
        let prompt = json!({"kind": "bbox", "points": [[2, 3], [20, 14]], "stroke_width": 2});
        let (status, body) = call(
            state(),
            "POST",
            "/v1/segment",
            Some(json!({"image": png_b64(24, 40), "prompt": prompt})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let resp: SegmentResponse = serde_json::from_value(body).unwrap();
        assert_eq!((resp.width, resp.height), (40, 24));
        let png = B64.decode(resp.mask).unwrap();
        let mask = image::load_from_memory(&png).unwrap().to_luma8();
        assert_eq!(mask.dimensions(), (40, 24));
        assert!(resp.latency_ms >= 0.0);
    }

    #[tokio::test]
    async fn bad_requests_are_rejected() {
        let s = state();
        let (status, _) = call(s.clone(), "POST", "/v1/segment", Some(json!({"prompt": null}))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        let (status, _) = call(
            s.clone(),
            "POST",
            "/v1/segment",
            Some(json!({"image": png_b64(16, 16), "prompt": {"kind": "lasso", "points": []}})),
        )
        .await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        let (status, _) = call(
            s.clone(),
            "POST",
            "/v1/segment",
            Some(json!({"image": png_b64(16, 16), "model_id": "nope"})),
        )
        .await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        let (status, _) = call(
            s,
            "POST",
            "/v1/segment",
            Some(json!({"image": png_b64(4097, 1)})),
        )
        .await;
        assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    }

    #[tokio::test]
    async fn models_lists_registry() {
        let (status, body) = call(state(), "GET", "/v1/models", None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["models"].as_array().unwrap().len(), 1);
    }
}
