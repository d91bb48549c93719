//! HTTP front end: POST /v1/generate, GET /v1/health, GET /v1/manifest.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::blocklist::{BlockListModel, LOW_CONFIDENCE};
use crate::diffusion::DiffusionModel;
use crate::geometry::{
    iou, rasterize, rasterize_strict, BlockInstance, BlockShape, Silhouette64, Stack, View,
    GRID_SIZE,
};
use crate::pipeline::{sample_with_counts, DiffusionGenerator};
use crate::stability::{is_stable, StabilityParams};

pub const MAX_SAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Empty,
    Full,
    Triangle,
}

/// Row 0 is the top of the sketch.
pub type Grid = [[Cell; GRID_SIZE]; GRID_SIZE];

fn grid_blocks(grid: &Grid) -> Vec<BlockInstance> {
    let mut out = Vec::new();
    for (r, row) in grid.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let shape = match cell {
                Cell::Empty => continue,
                Cell::Full => BlockShape::Cube,
                Cell::Triangle => BlockShape::Triangle,
            };
            let (x, z) = (2.0 * c as f64 - 3.0, 2.0 * (GRID_SIZE - 1 - r) as f64 + 1.0);
            out.push(BlockInstance::at(shape, x, 0.0, z));
        }
    }
    out
}

/// Full cells become filled 16x16 patches and triangle cells the triangle
/// block's raster, exactly as the blocks themselves would rasterize.
pub fn grid_to_silhouette(grid: &Grid) -> Silhouette64 {
    rasterize(&Stack::new(grid_blocks(grid)), View::Front)
}

/// Sketch-side block list: each horizontal run of full cells is split
/// into the widest shapes that fit (4, then 2, then 1 cells); triangle
/// cells count as triangles.
pub fn heuristic_counts(grid: &Grid) -> [usize; 4] {
    let mut counts = [0; 4];
    for row in grid {
        let mut run = 0;
        for cell in row.iter().chain([&Cell::Empty]) {
            if *cell == Cell::Full {
                run += 1;
                continue;
            }
            counts[BlockShape::LongRectangle.index()] += run / 4;
            counts[BlockShape::Rectangle.index()] += run % 4 / 2;
            counts[BlockShape::Cube.index()] += run % 2;
            run = 0;
            if *cell == Cell::Triangle {
                counts[BlockShape::Triangle.index()] += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    /// SIL64 text.
    #[serde(default)]
    pub silhouette: Option<String>,
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub use_gt_counts: Option<[usize; 4]>,
    /// Take the block list from the grid instead of the classifier.
    #[serde(default)]
    pub heuristic_counts: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_samples() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountOrigin {
    Cnn,
    Gt,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockListInfo {
    pub counts: [usize; 4],
    pub confidence: Option<f64>,
    pub low_confidence: bool,
    pub source: CountOrigin,
}

/// A block on the wire: pose rounded to 6 decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireBlock {
    pub kind: BlockShape,
    pub pose: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOut {
    pub blocks: Vec<WireBlock>,
    pub stable: bool,
    pub iou_front_vs_request: f64,
    /// Some block leaves the 8x8 world window in at least one view.
    pub out_of_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub block_list: BlockListInfo,
    pub samples: Vec<SampleOut>,
    pub seed: u64,
    pub model_meta: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

/// Immutable models shared by every request.
#[derive(Clone, Default)]
pub struct AppState {
    pub diffusion: Option<Arc<DiffusionModel>>,
    pub blocklist: Option<Arc<BlockListModel>>,
    pub workers: usize,
    pub stability: StabilityParams,
}

fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl AppState {
    pub fn model_meta(&self) -> Value {
        json!({
            "diffusion": self.diffusion.as_ref().map(|m| &m.meta),
            "blocklist": self.blocklist.as_ref().map(|m| json!({
                "classes": m.codebook().len(),
                "train_steps": m.meta.train_steps,
                "train_accuracy": m.meta.train_accuracy,
            })),
        })
    }

    pub fn handle_generate(&self, req: GenerateRequest) -> Result<GenerateResponse, ApiError> {
        let bad = |m: &str| ApiError::new(StatusCode::BAD_REQUEST, m);
        let sil = match (&req.silhouette, &req.grid) {
            (Some(text), None) => Silhouette64::parse(text).map_err(|e| bad(&e.to_string()))?,
            (None, Some(grid)) => grid_to_silhouette(grid),
            _ => return Err(bad("exactly one of `silhouette` and `grid` is required")),
        };
        if !(1..=MAX_SAMPLES).contains(&req.n_samples) {
            return Err(bad(&format!("n_samples must be in 1..={MAX_SAMPLES}")));
        }
        let model = self.diffusion.as_ref().ok_or_else(|| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "diffusion model not loaded",
            )
        })?;

        let block_list = if let Some(counts) = req.use_gt_counts {
            BlockListInfo {
                counts,
                confidence: None,
                low_confidence: false,
                source: CountOrigin::Gt,
            }
        } else if req.heuristic_counts {
            let grid = req
                .grid
                .as_ref()
                .ok_or_else(|| bad("heuristic_counts needs a grid"))?;
            BlockListInfo {
                counts: heuristic_counts(grid),
                confidence: None,
                low_confidence: false,
                source: CountOrigin::Heuristic,
            }
        } else {
            let cnn = self.blocklist.as_ref().ok_or_else(|| {
                ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "block-list classifier not loaded",
                )
            })?;
            let p = cnn.predict(&sil);
            BlockListInfo {
                counts: p.counts,
                confidence: Some(p.confidence),
                low_confidence: p.confidence < LOW_CONFIDENCE,
                source: CountOrigin::Cnn,
            }
        };
        let k: usize = block_list.counts.iter().sum();
        let max = model.meta.config.max_blocks;
        if k == 0 || k > max {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!(
                    "block list {:?} has {k} blocks; between 1 and {max} are supported",
                    block_list.counts
                ),
            ));
        }

        let seed = req.seed.unwrap_or_else(rand::random);
        let generator = DiffusionGenerator {
            model,
            workers: self.workers,
        };
        let stacks =
            sample_with_counts(&generator, &sil, block_list.counts, req.n_samples, seed)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let samples = stacks
            .iter()
            .map(|s| {
                let (stable, settled) = is_stable(s, &self.stability);
                let shown = if stable { &settled } else { s };
                SampleOut {
                    blocks: s
                        .blocks
                        .iter()
                        .map(|b| WireBlock {
                            kind: b.shape,
                            pose: b.pose.to_array().map(round6),
                        })
                        .collect(),
                    stable,
                    iou_front_vs_request: round6(
                        iou(&rasterize(shown, View::Front), &sil).expect("front views"),
                    ),
                    out_of_window: View::ALL.iter().any(|&v| rasterize_strict(s, v).is_err()),
                }
            })
            .collect();
        Ok(GenerateResponse {
            block_list,
            samples,
            seed,
            model_meta: self.model_meta(),
        })
    }
}

async fn generate(
    State(state): State<Arc<AppState>>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(e) => return ApiError::new(StatusCode::BAD_REQUEST, e.body_text()).into_response(),
    };
    let work = tokio::task::spawn_blocking(move || state.handle_generate(req)).await;
    match work {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "diffusion_loaded": state.diffusion.is_some(),
        "blocklist_loaded": state.blocklist.is_some(),
    }))
}

async fn manifest(State(state): State<Arc<AppState>>) -> Response {
    if state.diffusion.is_none() && state.blocklist.is_none() {
        return ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no models loaded").into_response();
    }
    let codebook = state.blocklist.as_ref().map(|m| m.codebook().clone());
    Json(json!({ "models": state.model_meta(), "class_codebook": codebook })).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/generate", post(generate))
        .route("/v1/health", get(health))
        .route("/v1/manifest", get(manifest))
        .with_state(Arc::new(state))
}

/// Binds and serves until ctrl-c.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
