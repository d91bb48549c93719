//! Exercise the HTTP API in-process: health, manifest and one generate
//! call against a freshly initialized (untrained) model.
//!
//! cargo run --example service

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use stackforge::diffusion::{
    Denoiser, DenoiserConfig, DiffusionMeta, DiffusionModel, PoseNormalizer, ScheduleConfig,
};
use stackforge::service::{router, AppState};
use tower::ServiceExt;

async fn call(
    app: &axum::Router,
    req: Request<Body>,
) -> Result<String, Box<dyn std::error::Error>> {
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status();
    let body = resp.into_body().collect().await?.to_bytes();
    Ok(format!("{status} {}", String::from_utf8_lossy(&body)))
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DenoiserConfig {
        d: 16,
        n_layers: 1,
        n_heads: 2,
        ..Default::default()
    };
    let meta = DiffusionMeta {
        config,
        schedule: ScheduleConfig {
            steps: 20,
            ..Default::default()
        },
        normalizer: PoseNormalizer {
            mean: [0.0, 0.0, 4.0, 0.0, 0.0, 0.0],
            std: [2.0, 0.06, 2.2, 0.01, 0.01, 0.02],
        },
        manifest_hash: "demo".into(),
        train_steps: 0,
        final_loss: None,
    };
    let model = DiffusionModel::new(
        Denoiser::new(config, &mut ChaCha8Rng::seed_from_u64(0))?,
        meta,
    );
    let app = router(AppState {
        diffusion: Some(Arc::new(model)),
        ..Default::default()
    });

    println!(
        "{}",
        call(&app, Request::get("/v1/health").body(Body::empty())?).await?
    );
    // A 4x4 sketch: two full bottom rows, a tower on the left, a roof.
    let body = json!({
        "grid": [["triangle", "empty", "empty", "empty"],
                 ["full", "empty", "empty", "empty"],
                 ["full", "full", "full", "full"],
                 ["full", "full", "full", "full"]],
        "heuristic_counts": true,
        "n_samples": 2,
        "seed": 1
    });
    let req = Request::post("/v1/generate")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))?;
    println!("{}", call(&app, req).await?);
    let bad = Request::post("/v1/generate")
        .header("content-type", "application/json")
        .body(Body::from("{}"))?;
    println!("{}", call(&app, bad).await?);
    Ok(())
}
