//! HTTP front end for interactive exploration.
//!
//! All state is loaded at startup and never written back, so concurrent
//! requests share it read-only.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use tower_http::cors::CorsLayer;

use crate::error::{Error, Result};
use crate::inference::{encode_png, plan_render, LoadedModel, RenderPlan};
use crate::scene::{DatasetManifest, LocationInfo};
use crate::tensor::Tensor;

pub const SNAPPED_YAW_HEADER: &str = "x-snapped-yaw";
pub const POSE_INDEX_HEADER: &str = "x-pose-index";
pub const REFERENCES_HEADER: &str = "x-reference-yaws";
/// Residue images are scaled by this before clamping.
pub const RESIDUE_GAIN: f32 = 5.0;

pub struct ServiceState {
    pub model: LoadedModel,
    pub manifest: DatasetManifest,
}

impl ServiceState {
    pub fn load(ckpt: &Path, dataset: &Path) -> Result<Self> {
        let model = LoadedModel::load(ckpt)?;
        let manifest = DatasetManifest::load(dataset)?;
        model.config.check_image_size(manifest.height, manifest.width)?;
        Ok(ServiceState { model, manifest })
    }
}

#[derive(Debug, Serialize)]
pub struct ImageSize {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Serialize)]
pub struct Meta {
    pub tau: f64,
    pub delta: usize,
    pub image_size: ImageSize,
    pub locations: Vec<LocationInfo>,
    pub reference_yaws: Vec<f64>,
    pub step_deg: u32,
    pub model: crate::model::ModelKind,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::ReferenceCollision { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            Error::Dataset(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn bad_request(msg: String) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg)
}

fn not_found(msg: String) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg)
}

/// Parsed `loc`, `yaw` and optional `left`/`right` parameters.
struct ViewQuery {
    loc: usize,
    yaw: f64,
    references: Option<(f64, f64)>,
}

fn parse_query(q: &HashMap<String, String>) -> ApiResult<ViewQuery> {
    let field = |k: &str| q.get(k).map(|v| v.trim());
    let num = |k: &str| -> ApiResult<Option<f64>> {
        field(k)
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(bad_request(format!("`{k}` must be a finite number, got `{v}`"))),
            })
            .transpose()
    };
    let loc = field("loc")
        .ok_or_else(|| bad_request("missing `loc`".into()))?
        .parse::<usize>()
        .map_err(|_| bad_request("`loc` must be a non-negative integer".into()))?;
    let yaw = num("yaw")?.ok_or_else(|| bad_request("missing `yaw`".into()))?;
    let references = match (num("left")?, num("right")?) {
        (Some(l), Some(r)) => Some((l, r)),
        (None, None) => None,
        _ => return Err(bad_request("`left` and `right` must be given together".into())),
    };
    Ok(ViewQuery { loc, yaw, references })
}

/// A captured yaw in whole degrees, if `yaw` names one.
fn captured_yaw(m: &DatasetManifest, loc: usize, yaw: f64) -> Option<u32> {
    let y = yaw.rem_euclid(360.0);
    let r = y.round();
    if (y - r).abs() > 1e-6 {
        return None;
    }
    let r = (r as u32) % 360;
    m.view(loc, r).map(|_| r)
}

struct Rendered {
    plan: RenderPlan,
    prediction: Tensor<f32>,
    gt: Option<Tensor<f32>>,
}

impl ServiceState {
    fn check_location(&self, loc: usize) -> ApiResult<()> {
        self.manifest
            .location(loc)
            .map(|_| ())
            .ok_or_else(|| not_found(format!("unknown location {loc}")))
    }

    fn load_view(&self, loc: usize, yaw: f64) -> ApiResult<Tensor<f32>> {
        let y = captured_yaw(&self.manifest, loc, yaw)
            .ok_or_else(|| not_found(format!("no captured view at location {loc}, yaw {yaw}°")))?;
        Ok(self.manifest.load_rgb(loc, y)?)
    }

    fn render(&self, q: &ViewQuery) -> ApiResult<Rendered> {
        self.check_location(q.loc)?;
        let cfg = &self.model.config;
        let plan = plan_render(cfg.tau_deg, cfg.delta, q.yaw, q.references)?;
        let left = self.load_view(q.loc, plan.left_yaw)?;
        let right = self.load_view(q.loc, plan.right_yaw)?;
        let gt = captured_yaw(&self.manifest, q.loc, plan.snapped_yaw)
            .map(|y| self.manifest.load_rgb(q.loc, y))
            .transpose()?;
        let shape = [1, 3, self.manifest.height, self.manifest.width];
        let batch = |t: &Tensor<f32>| t.reshape(&shape);
        let gt_batch = gt.as_ref().map(batch).transpose()?;
        let prediction = match self.model.predict(
            &batch(&left)?,
            &batch(&right)?,
            std::slice::from_ref(&plan.code),
            gt_batch.as_ref(),
        ) {
            Ok(p) => p,
            Err(Error::InvalidArgument(msg)) if gt_batch.is_none() => {
                return Err(not_found(format!("no ground truth at the snapped yaw: {msg}")))
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Rendered {
            plan,
            prediction,
            gt: gt_batch,
        })
    }
}

fn png_response(png: Vec<u8>, plan: Option<&RenderPlan>) -> Response {
    let mut resp = ([(header::CONTENT_TYPE, "image/png")], png).into_response();
    if let Some(p) = plan {
        let h = resp.headers_mut();
        let mut put = |name: &'static str, value: String| {
            if let Ok(v) = HeaderValue::from_str(&value) {
                h.insert(HeaderName::from_static(name), v);
            }
        };
        put(SNAPPED_YAW_HEADER, p.snapped_yaw.to_string());
        put(POSE_INDEX_HEADER, p.code.index.to_string());
        put(REFERENCES_HEADER, format!("{},{}", p.left_yaw, p.right_yaw));
    }
    resp
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn meta(State(s): State<Arc<ServiceState>>) -> Json<Meta> {
    let cfg = &s.model.config;
    let count = (360.0 / cfg.tau_deg).round() as usize;
    Json(Meta {
        tau: cfg.tau_deg,
        delta: cfg.delta,
        image_size: ImageSize {
            width: cfg.width,
            height: cfg.height,
        },
        locations: s.manifest.locations.clone(),
        reference_yaws: (0..count).map(|k| k as f64 * cfg.tau_deg).collect(),
        step_deg: s.manifest.step_deg,
        model: cfg.kind,
    })
}

async fn render(
    State(s): State<Arc<ServiceState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let q = parse_query(&q)?;
    blocking(move || {
        let r = s.render(&q)?;
        Ok(png_response(encode_png(&r.prediction)?, Some(&r.plan)))
    })
    .await
}

async fn ground_truth(
    State(s): State<Arc<ServiceState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let q = parse_query(&q)?;
    blocking(move || {
        s.check_location(q.loc)?;
        let gt = s.load_view(q.loc, q.yaw)?;
        Ok(png_response(encode_png(&gt)?, None))
    })
    .await
}

/// `|prediction − gt|` scaled by [`RESIDUE_GAIN`] and clamped to [0,1].
pub fn residue(prediction: &Tensor<f32>, gt: &Tensor<f32>) -> Result<Tensor<f32>> {
    let data = prediction
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| ((p - g).abs() * RESIDUE_GAIN).min(1.0))
        .collect();
    Tensor::from_vec(prediction.shape(), data)
}

async fn residue_image(
    State(s): State<Arc<ServiceState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let q = parse_query(&q)?;
    blocking(move || {
        let r = s.render(&q)?;
        let gt = r
            .gt
            .ok_or_else(|| not_found(format!("no ground truth at yaw {}°", r.plan.snapped_yaw)))?;
        let img = residue(&r.prediction, &gt)?;
        Ok(png_response(encode_png(&img)?, Some(&r.plan)))
    })
    .await
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/render", get(render))
        .route("/gt", get(ground_truth))
        .route("/residue", get(residue_image))
        .layer(CorsLayer::permissive().expose_headers([
            HeaderName::from_static(SNAPPED_YAW_HEADER),
            HeaderName::from_static(POSE_INDEX_HEADER),
            HeaderName::from_static(REFERENCES_HEADER),
        ]))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: ServiceState, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("tcp://{addr}"), e))?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(Arc::new(state)))
        .await
        .map_err(|e| Error::io(format!("tcp://{addr}"), e))
}
