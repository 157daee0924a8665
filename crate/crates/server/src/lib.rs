//! HTTP/JSON API over a running [`Guard`].
//!
//! | route | |
//! |---|---|
//! | `POST /api/v1/transitions` | one event or an array; `202` with the accepted count |
//! | `GET /api/v1/model` | latest snapshot, `503` before the first cycle |
//! | `GET /api/v1/results` | latest result per property |
//! | `GET /api/v1/alerts` | alert history, newest first |
//! | `POST /api/v1/control` | human actuator command |
//! | `GET /api/v1/stream` | server-sent [`StreamFrame`]s |
//!
//! Every JSON response is an [`ApiEnvelope`].

mod envelope;
mod stream;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use agentguard_core::engine::{ActuatorCommand, EngineError, Guard, ResultEntry, Source};
use agentguard_core::mdp::TransitionEvent;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::Stream;
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

pub use envelope::{ApiEnvelope, ApiError, REVISION_HEADER};
pub use stream::{frame, FrameKind, ModelDelta, SnapshotPayload, StreamFrame, StreamHub};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub max_stream_clients: usize,
    pub heartbeat: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            max_stream_clients: 16,
            heartbeat: Duration::from_secs(15),
        }
    }
}

#[derive(Clone)]
pub struct Api {
    guard: Arc<Guard>,
    hub: Arc<StreamHub>,
}

impl Api {
    /// Registers the stream hub as a sink of `guard`.
    pub fn new(guard: Arc<Guard>, opts: ServerOptions) -> Self {
        let hub = Arc::new(StreamHub::new(opts.max_stream_clients, opts.heartbeat));
        guard.add_sink(hub.clone());
        Self { guard, hub }
    }

    pub fn guard(&self) -> &Arc<Guard> {
        &self.guard
    }

    pub fn hub(&self) -> &Arc<StreamHub> {
        &self.hub
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/api/v1/transitions", post(submit_transitions))
            .route("/api/v1/model", get(get_model))
            .route("/api/v1/results", get(get_results))
            .route("/api/v1/alerts", get(get_alerts))
            .route("/api/v1/control", post(post_control))
            .route("/api/v1/stream", get(stream_updates))
            .with_state(self.clone())
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    api: Api,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    log::info!("listening on {}", addr.map_or_else(|| "?".into(), |a| a.to_string()));
    axum::serve(listener, api.router()).with_graceful_shutdown(shutdown).await
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Submission {
    Many(Vec<TransitionEvent>),
    One(TransitionEvent),
}

async fn submit_transitions(State(api): State<Api>, body: Bytes) -> Response {
    let events = match serde_json::from_slice::<Submission>(&body) {
        Ok(Submission::Many(v)) => v,
        Ok(Submission::One(e)) => vec![e],
        Err(e) => return envelope::error(StatusCode::BAD_REQUEST, "malformed", e.to_string()),
    };
    let guard = api.guard.clone();
    // the block policy may wait for the analyzer
    let outcome = tokio::task::spawn_blocking(move || guard.submit_batch(events)).await;
    match outcome {
        Ok(Ok(n)) => envelope::ok(StatusCode::ACCEPTED, serde_json::json!({ "accepted": n }), None),
        Ok(Err(e)) => engine_error(e),
        Err(e) => envelope::error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn get_model(State(api): State<Api>) -> Response {
    match api.guard.snapshot() {
        Some(snap) => envelope::ok(StatusCode::OK, snap.to_document(), Some(snap.revision())),
        None => envelope::error(StatusCode::SERVICE_UNAVAILABLE, "no_model", "no analysis cycle has completed"),
    }
}

fn keyed(results: Vec<ResultEntry>) -> BTreeMap<String, ResultEntry> {
    results.into_iter().map(|r| (r.result.property.clone(), r)).collect()
}

async fn get_results(State(api): State<Api>) -> Response {
    let (_, snap, results) = api.guard.view();
    envelope::ok(StatusCode::OK, keyed(results), snap.map(|s| s.revision()))
}

async fn get_alerts(State(api): State<Api>) -> Response {
    envelope::ok(StatusCode::OK, api.guard.alerts(), None)
}

async fn post_control(State(api): State<Api>, body: Bytes) -> Response {
    let mut cmd = match serde_json::from_slice::<ActuatorCommand>(&body) {
        Ok(c) => c,
        Err(e) => return envelope::error(StatusCode::BAD_REQUEST, "malformed", e.to_string()),
    };
    cmd.source = Source::Human;
    let guard = api.guard.clone();
    match tokio::task::spawn_blocking(move || guard.dispatch(cmd)).await {
        Ok(Ok(entry)) => {
            let rev = entry.revision;
            envelope::ok(StatusCode::OK, entry, Some(rev))
        }
        Ok(Err(e)) => engine_error(e),
        Err(e) => envelope::error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

fn engine_error(e: EngineError) -> Response {
    let (status, code) = match &e {
        EngineError::NotRunning => (StatusCode::SERVICE_UNAVAILABLE, "not_running"),
        EngineError::QueueFull => (StatusCode::TOO_MANY_REQUESTS, "queue_full"),
        EngineError::InvalidEvent { .. } => (StatusCode::CONFLICT, "unknown_name"),
        EngineError::UnknownCommand(_) => (StatusCode::NOT_FOUND, "unknown_command"),
        EngineError::UnknownAlert(_) => (StatusCode::NOT_FOUND, "unknown_alert"),
        EngineError::MalformedCommand(_) => (StatusCode::BAD_REQUEST, "malformed"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    };
    envelope::error(status, code, e.to_string())
}

async fn stream_updates(State(api): State<Api>) -> Response {
    let Some(slot) = api.hub.admit() else {
        return envelope::error(StatusCode::SERVICE_UNAVAILABLE, "too_many_clients", "stream client limit reached");
    };
    // subscribe before reading the state so nothing falls in between
    let rx = api.hub.subscribe();
    let (cycle, snap, results) = api.guard.view();
    let first = frame(
        FrameKind::Snapshot,
        cycle,
        &SnapshotPayload {
            revision: snap.as_ref().map(|s| s.revision()),
            model: snap.as_ref().map(|s| s.to_document()),
            results: keyed(results),
            alerts: api.guard.alerts(),
        },
    );
    let state = Client {
        rx,
        first: Some(first),
        since: cycle,
        cycle,
        heartbeat: tokio::time::interval_at(tokio::time::Instant::now() + api.hub.heartbeat(), api.hub.heartbeat()),
        guard: api.guard.clone(),
        _slot: slot,
    };
    Sse::new(frames(state)).into_response()
}

struct Client {
    rx: tokio::sync::broadcast::Receiver<StreamFrame>,
    first: Option<StreamFrame>,
    /// Cycle covered by the snapshot frame; broadcast frames up to it are
    /// skipped.
    since: u64,
    /// Latest cycle delivered.
    cycle: u64,
    heartbeat: tokio::time::Interval,
    guard: Arc<Guard>,
    _slot: stream::ClientSlot,
}

fn frames(state: Client) -> impl Stream<Item = Result<Event, Infallible>> {
    futures::stream::unfold(state, |mut c| async move {
        if let Some(f) = c.first.take() {
            return Some((Ok(to_event(&f)), c));
        }
        loop {
            tokio::select! {
                msg = c.rx.recv() => match msg {
                    Ok(f) if f.cycle > c.since => {
                        c.cycle = f.cycle;
                        return Some((Ok(to_event(&f)), c));
                    }
                    Ok(_) => continue,
                    Err(RecvError::Lagged(n)) => {
                        log::warn!("stream client lagged by {n} frames");
                        continue;
                    }
                    Err(RecvError::Closed) => return None,
                },
                _ = c.heartbeat.tick() => {
                    let f = frame(FrameKind::Heartbeat, c.cycle, &serde_json::json!({ "engine_cycle": c.guard.cycle() }));
                    return Some((Ok(to_event(&f)), c));
                }
            }
        }
    })
}

fn to_event(f: &StreamFrame) -> Event {
    let kind = serde_json::to_value(f.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    Event::default().event(kind).data(serde_json::to_string(f).expect("frames serialize"))
}
