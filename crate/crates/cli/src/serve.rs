//! HTTP endpoints consumed by the browser teleoperation page.
//!
//! - `GET /api/env-config`: environment constants plus the recorder tick.
//! - `POST /api/trajectories`: validates one trajectory record against the
//!   environment dynamics, appends it to the active dataset and answers
//!   `{id, category}`.
//! - `GET /api/datasets/{name}`: the line-delimited dataset file `name.jsonl`.
//! - everything else: static assets, when a directory is configured.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ciql_core::env::step;
use ciql_core::io::{append_trajectory, env_hash, load_dataset, save_dataset, TrajectoryRecord};
use ciql_core::types::categorize;
use ciql_core::{Category, Dataset, EnvConfig, Source};
use serde::Serialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::config::{valid_name, RunConfig};
use crate::layout::Layout;

pub struct AppState {
    pub env: EnvConfig,
    pub layout: Layout,
    pub active: String,
    pub tick_ms: u64,
    /// Serializes appends to the dataset files.
    write_lock: Mutex<()>,
}

impl AppState {
    pub fn new(config: &RunConfig) -> Self {
        AppState {
            env: config.env.clone(),
            layout: Layout::new(&config.out_dir),
            active: config.serve.dataset.clone(),
            tick_ms: config.serve.tick_ms,
            write_lock: Mutex::new(()),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Ack {
    pub id: String,
    pub category: Category,
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/env-config", get(env_config))
        .route("/api/trajectories", post(submit))
        .route("/api/datasets/{name}", get(dataset))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn env_config(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let env = &state.env;
    let directions: Vec<[f64; 2]> = (0..env.n_directions).map(|k| env.direction(k)).collect();
    Json(json!({
        "arena": env.arena,
        "half_extent": env.half_extent(),
        "step_size": env.step_size,
        "n_directions": env.n_directions,
        "directions": directions,
        "goal_radius": env.goal_radius,
        "max_steps": env.max_steps,
        "two_stage": env.two_stage,
        "grasp_action": env.grasp_action(),
        "start": env.start,
        "target": env.target,
        "tick_ms": state.tick_ms,
        "env_hash": env_hash(env),
        "dataset": state.active,
    }))
}

async fn submit(State(state): State<Arc<AppState>>, Json(record): Json<TrajectoryRecord>) -> Response {
    let task = tokio::task::spawn_blocking(move || append(&state, record));
    match task.await {
        Ok(Ok(ack)) => (StatusCode::CREATED, Json(ack)).into_response(),
        Ok(Err(message)) => error(StatusCode::UNPROCESSABLE_ENTITY, message),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Replays the record through the environment, assigns an id and a category
/// and appends it to the active dataset.
pub fn append(state: &AppState, mut record: TrajectoryRecord) -> Result<Ack, String> {
    let env = &state.env;
    if record.transitions.is_empty() {
        return Err("trajectory has no transitions".into());
    }
    for (t, tr) in record.transitions.iter().enumerate() {
        let out = step(&tr.s, tr.a, env).map_err(|e| format!("step {t}: {e}"))?;
        if out.next != tr.s_next || out.done != tr.done {
            return Err(format!("step {t}: transition does not follow the environment dynamics"));
        }
        if tr.keypoint != (Some(tr.a) == env.grasp_action() && out.success) {
            return Err(format!("step {t}: keypoint flag does not match a successful grasp"));
        }
    }

    let _guard = state.write_lock.lock().unwrap_or_else(|e| e.into_inner());
    let path = state.layout.named_dataset(&state.active);
    let existing = if path.exists() {
        load_dataset(&path).map_err(|e| e.to_string())?
    } else {
        let empty = Dataset::empty(env.clone());
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        }
        save_dataset(&empty, &path).map_err(|e| e.to_string())?;
        empty
    };
    if &existing.env != env {
        return Err(format!("{} belongs to a different environment", path.display()));
    }
    let mut n = existing.trajectories.len();
    let id = loop {
        let id = format!("human-{n:05}");
        if existing.trajectories.iter().all(|t| t.id != id) {
            break id;
        }
        n += 1;
    };
    record.id = id.clone();
    record.source = Source::Human;
    record.parent = None;
    record.w = None;
    record.length = record.transitions.len();
    let (mut traj, _) = record.into_trajectory(env).map_err(|e| e.to_string())?;
    traj.category = categorize(&traj, &env.thresholds());
    let category = traj.category;
    append_trajectory(
        &path,
        TrajectoryRecord::from_trajectory(&traj, Some(&env_hash(env)), None),
    )
    .map_err(|e| e.to_string())?;
    Ok(Ack { id, category })
}

async fn dataset(State(state): State<Arc<AppState>>, Path(name): Path<String>) -> Response {
    let stem = name.strip_suffix(".jsonl").unwrap_or(&name);
    if !valid_name(stem) {
        return error(StatusCode::BAD_REQUEST, format!("invalid dataset name `{name}`"));
    }
    let path = state.layout.named_dataset(stem);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            error(StatusCode::NOT_FOUND, format!("no dataset named `{stem}`"))
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn serve(config: &RunConfig) -> anyhow::Result<()> {
    let state = Arc::new(AppState::new(config));
    let app = router(state, config.serve.static_dir.clone());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((config.serve.host.as_str(), config.serve.port)).await?;
        println!("serving on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}
