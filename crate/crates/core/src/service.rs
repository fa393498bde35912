//! HTTP front end: `POST /inpaint`, `GET /health`, `GET /model`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::inference::{encode_png, ConditionSource, FrozenModel, ModelInfo};

pub const MAX_SIDE_ENV: &str = "FIPG_MAX_SIDE";
pub const DEFAULT_MAX_SIDE: u32 = 512;
const BODY_LIMIT: usize = 64 << 20;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InpaintRequest {
    /// Base64 8-bit PNG.
    pub image: String,
    /// Base64 single-channel PNG; values >= 128 are holes.
    pub mask: String,
    /// Base64 single-channel PNG; values >= 128 are strokes.
    #[serde(default)]
    pub sketch: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InpaintResponse {
    /// Base64 PNG, same size as the request image.
    pub result: String,
    pub model_id: String,
    pub timing_ms: u64,
    pub condition: ConditionSource,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

/// A failed request: status plus a human-readable reason.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn bad(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Data(_) | Error::Shape(_) | Error::Image(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ServiceConfig {
    /// Largest accepted image width or height.
    pub max_side: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { max_side: DEFAULT_MAX_SIDE }
    }
}

impl ServiceConfig {
    /// Reads `FIPG_MAX_SIDE`, falling back to the default when unset.
    pub fn from_env() -> crate::Result<Self> {
        match std::env::var(MAX_SIDE_ENV) {
            Ok(v) => {
                let max_side = v
                    .trim()
                    .parse::<u32>()
                    .ok()
                    .filter(|&s| s > 0)
                    .ok_or_else(|| Error::Config(format!("{MAX_SIDE_ENV}={v:?} is not a positive integer")))?;
                Ok(Self { max_side })
            }
            Err(_) => Ok(Self::default()),
        }
    }
}

struct AppState {
    model: FrozenModel,
    config: ServiceConfig,
}

fn decode_png(field: &str, text: &str) -> Result<DynamicImage, ApiError> {
    let bytes = B64.decode(text.trim()).map_err(|e| ApiError::bad(format!("{field}: invalid base64: {e}")))?;
    image::load_from_memory(&bytes).map_err(|e| ApiError::bad(format!("{field}: cannot decode image: {e}")))
}

fn decode_gray(field: &str, text: &str, max_side: u32) -> Result<GrayImage, ApiError> {
    let img = decode_png(field, text)?;
    check_side(field, &img, max_side)?;
    Ok(img.to_luma8())
}

fn check_side(field: &str, img: &DynamicImage, max_side: u32) -> Result<(), ApiError> {
    if img.width().max(img.height()) > max_side {
        return Err(ApiError {
            status: StatusCode::PAYLOAD_TOO_LARGE,
            message: format!("{field} is {}x{}, larger than the {max_side}px limit", img.width(), img.height()),
        });
    }
    Ok(())
}

/// Decodes, inpaints and encodes one request. Independent of any HTTP state.
pub fn handle_inpaint(model: &FrozenModel, config: &ServiceConfig, req: &InpaintRequest) -> Result<InpaintResponse, ApiError> {
    let start = Instant::now();
    let image = decode_png("image", &req.image)?;
    check_side("image", &image, config.max_side)?;
    let image = image.to_rgb8();
    let mask = decode_gray("mask", &req.mask, config.max_side)?;
    let sketch = req.sketch.as_deref().map(|s| decode_gray("sketch", s, config.max_side)).transpose()?;
    let out = model.inpaint(&image, &mask, sketch.as_ref(), req.seed.unwrap_or(0))?;
    Ok(InpaintResponse {
        result: B64.encode(encode_png(&out.image)?),
        model_id: model.info().model_id.clone(),
        timing_ms: start.elapsed().as_millis() as u64,
        condition: out.condition,
    })
}

async fn inpaint(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<InpaintResponse>, ApiError> {
    let req: InpaintRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad(format!("malformed request: {e}")))?;
    let resp = tokio::task::spawn_blocking(move || handle_inpaint(&state.model, &state.config, &req))
        .await
        .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: e.to_string() })??;
    Ok(Json(resp))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health { status: "ok".into(), model_id: state.model.info().model_id.clone() })
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<ModelInfo> {
    Json(state.model.info().clone())
}

pub fn router(model: FrozenModel, config: ServiceConfig) -> Router {
    let state = Arc::new(AppState { model, config });
    Router::new()
        .route("/inpaint", post(inpaint))
        .route("/health", get(health))
        .route("/model", get(model_info))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(model: FrozenModel, config: ServiceConfig, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving model {} on {}", model.info().model_id, listener.local_addr()?);
    axum::serve(listener, router(model, config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
