//! HTTP routes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use instrumental::audio::{decode_wav, encode_wav, WavFormat};
use instrumental::dsp::pitch::midi_to_hz;
use instrumental::params::{Patch, Preset, Tier};
use instrumental::synth::{render, RenderRequest};

use crate::jobs::{JobOptions, Registry};
use crate::schema::{Created, ErrorBody, JobResult, JobState, StreamRecord, SCHEMA_VERSION};

/// Largest accepted upload.
pub const MAX_UPLOAD_BYTES: usize = 50 * 1024 * 1024;
/// Keyboard range (C3 to C5).
pub const MIDI_RANGE: std::ops::RangeInclusive<u8> = 48..=72;
pub const NOTE_SECONDS: f64 = 1.0;
/// Multipart framing allowance on top of the file itself.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

/// Key into the rendered-note cache: job id (or `None` for the bundled
/// preset) and midi note.
type NoteKey = (Option<String>, u8);

#[derive(Clone)]
pub struct AppState {
    pub registry: Registry,
    pub best_preset: Arc<Preset>,
    notes: Arc<Mutex<HashMap<NoteKey, Arc<Vec<u8>>>>>,
}

impl AppState {
    pub fn new(registry: Registry, best_preset: Preset) -> Self {
        AppState {
            registry,
            best_preset: Arc::new(best_preset),
            notes: Arc::new(Mutex::new(HashMap::new())),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/jobs", post(create_job))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/jobs/{id}/result", get(job_result))
        .route("/api/jobs/{id}/notes/{midi}", get(job_note))
        .route("/api/jobs/{id}/progress", get(progress))
        .route("/api/presets/best", get(best_preset))
        .route("/api/presets/best/notes/{midi}", get(best_note))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES + MULTIPART_OVERHEAD))
        .with_state(state)
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            schema: SCHEMA_VERSION,
            error: self.1,
        };
        (self.0, Json(body)).into_response()
    }
}

fn err(code: StatusCode, msg: impl Into<String>) -> ApiError {
    ApiError(code, msg.into())
}

async fn create_job(State(state): State<AppState>, mut multipart: Multipart) -> Result<Response, ApiError> {
    let mut audio = None;
    let mut options = JobOptions::default();
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return Err(err(e.status(), e.body_text())),
        };
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| err(e.status(), e.body_text()))?;
        let text = || String::from_utf8_lossy(&bytes).trim().to_string();
        match name.as_str() {
            "file" => audio = Some(bytes.to_vec()),
            "tier" => {
                options.tier = Tier::from_label(&text()).map_err(|e| err(StatusCode::BAD_REQUEST, e.to_string()))?
            }
            "budget" => {
                options.budget = text()
                    .parse()
                    .map_err(|_| err(StatusCode::BAD_REQUEST, format!("budget `{}` is not an integer", text())))?
            }
            "seed" => {
                options.seed = text()
                    .parse()
                    .map_err(|_| err(StatusCode::BAD_REQUEST, format!("seed `{}` is not an integer", text())))?
            }
            other => return Err(err(StatusCode::BAD_REQUEST, format!("unknown field `{other}`"))),
        }
    }
    let audio = audio.ok_or_else(|| err(StatusCode::BAD_REQUEST, "missing `file` field"))?;
    if audio.len() > MAX_UPLOAD_BYTES {
        return Err(err(StatusCode::PAYLOAD_TOO_LARGE, "file exceeds 50 MB"));
    }
    options
        .match_config()
        .cma
        .validate()
        .map_err(|e| err(StatusCode::BAD_REQUEST, e.to_string()))?;
    decode_wav(&audio).map_err(|e| err(StatusCode::BAD_REQUEST, e.to_string()))?;
    let id = state.registry.submit(audio, options);
    let body = Created {
        schema: SCHEMA_VERSION,
        id,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn find(state: &AppState, id: &str) -> Result<Arc<crate::jobs::Job>, ApiError> {
    state
        .registry
        .get(id)
        .ok_or_else(|| err(StatusCode::NOT_FOUND, format!("no job `{id}`")))
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(find(&state, &id)?.status()).into_response())
}

fn done_patch(state: &AppState, id: &str) -> Result<Arc<instrumental::pipeline::MatchReport>, ApiError> {
    let job = find(state, id)?;
    match job.state() {
        JobState::Done => Ok(job.report().expect("done jobs carry a report")),
        JobState::Failed => Err(err(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("job failed: {}", job.error().unwrap_or_default()),
        )),
        s => Err(err(StatusCode::CONFLICT, format!("job is {s:?}").to_lowercase())),
    }
}

async fn job_result(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let report = done_patch(&state, &id)?;
    let preset = Preset::new(report.patch.clone())
        .with_loss(report.final_loss)
        .to_toml_string();
    let body = JobResult {
        schema: SCHEMA_VERSION,
        id,
        report: (*report).clone(),
        preset,
    };
    Ok(Json(body).into_response())
}

fn parse_midi(midi: &str) -> Result<u8, ApiError> {
    midi.parse::<u8>()
        .ok()
        .filter(|m| MIDI_RANGE.contains(m))
        .ok_or_else(|| err(StatusCode::BAD_REQUEST, format!("midi must be in 48..=72, got `{midi}`")))
}

/// Renders one keyboard note as 16-bit WAV.
pub fn render_note(patch: &Patch, midi: u8) -> instrumental::Result<Vec<u8>> {
    let req = RenderRequest::new(patch.clone(), midi_to_hz(f64::from(midi)), NOTE_SECONDS);
    encode_wav(&render(&req)?, WavFormat::Pcm16)
}

async fn cached_note(state: &AppState, key: NoteKey, patch: Patch) -> Result<Response, ApiError> {
    let hit = state.notes.lock().expect("note cache").get(&key).cloned();
    let bytes = match hit {
        Some(b) => b,
        None => {
            let midi = key.1;
            let bytes = tokio::task::spawn_blocking(move || render_note(&patch, midi))
                .await
                .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
                .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            let bytes = Arc::new(bytes);
            state.notes.lock().expect("note cache").insert(key, bytes.clone());
            bytes
        }
    };
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes.as_ref().clone()).into_response())
}

async fn job_note(State(state): State<AppState>, Path((id, midi)): Path<(String, String)>) -> Result<Response, ApiError> {
    let midi = parse_midi(&midi)?;
    let report = done_patch(&state, &id)?;
    cached_note(&state, (Some(id), midi), report.patch.clone()).await
}

async fn best_preset(State(state): State<AppState>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/toml")],
        state.best_preset.to_toml_string(),
    )
        .into_response()
}

async fn best_note(State(state): State<AppState>, Path(midi): Path<String>) -> Result<Response, ApiError> {
    let midi = parse_midi(&midi)?;
    let patch = state.best_preset.patch.clone();
    cached_note(&state, (None, midi), patch).await
}

#[derive(Debug, Deserialize)]
struct ProgressQuery {
    /// Replay the stream from this event index instead of starting at the
    /// latest snapshot.
    from: Option<usize>,
}

async fn progress(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ProgressQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let job = find(&state, &id)?;
    Ok(ws.on_upgrade(move |socket| stream(socket, job, q.from)))
}

async fn stream(mut socket: WebSocket, job: Arc<crate::jobs::Job>, from: Option<usize>) {
    let mut rx = job.subscribe();
    rx.mark_unchanged();
    let mut next = from.unwrap_or_else(|| job.event_count().saturating_sub(1));
    loop {
        let snap = job.snapshot(next);
        next += snap.events.len();
        for event in snap.events {
            let record = StreamRecord::Progress {
                schema: SCHEMA_VERSION,
                event,
            };
            if send(&mut socket, &record).await.is_err() {
                return;
            }
        }
        if snap.state.is_terminal() {
            let record = StreamRecord::Terminal {
                schema: SCHEMA_VERSION,
                state: snap.state,
                final_loss: snap.final_loss,
                error: snap.error,
            };
            let _ = send(&mut socket, &record).await;
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        if rx.changed().await.is_err() {
            return;
        }
    }
}

async fn send(socket: &mut WebSocket, record: &StreamRecord) -> Result<(), axum::Error> {
    let text = serde_json::to_string(record).expect("records serialize");
    socket.send(Message::Text(text.into())).await
}
