use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use agentguard_core::config::load_config;
use agentguard_core::engine::Guard;
use agentguard_server::{Api, ServerOptions, StreamFrame, REVISION_HEADER};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const CFG: &str = r#"
states:
  - s0
  - fail
  - name: goal
    labels: [done]
actions: [a, b]
initial: s0
terminal: [goal, fail]
properties:
  - name: reach
    formula: 'Pmax=? [ F "goal" ]'
  - name: worst
    formula: 'Pmin=? [ F "goal" ]'
    threshold: { op: ">=", value: 0.6 }
  - name: steps
    formula: 'Rmin=? [ F "done" ]'
analysis:
  every_events: 4
"#;

fn api(opts: ServerOptions) -> (Api, Router) {
    let guard = Arc::new(Guard::new(load_config(CFG).unwrap()));
    let api = Api::new(guard, opts);
    let router = api.router();
    (api, router)
}

fn started() -> (Api, Router) {
    let (api, router) = api(ServerOptions::default());
    api.guard().start().unwrap();
    (api, router)
}

async fn call(router: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, Option<String>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let rev = resp.headers().get(REVISION_HEADER).map(|v| v.to_str().unwrap().to_owned());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap(), rev)
}

async fn raw(router: &Router, uri: &str) -> Vec<u8> {
    let req = Request::get(uri).body(Body::empty()).unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    resp.into_body().collect().await.unwrap().to_bytes().to_vec()
}

fn ev(s: &str, a: &str, t: &str) -> Value {
    json!({ "state": s, "action": a, "next_state": t })
}

/// The toy3 trace: `a` splits goal/fail, `b` loops nine times then reaches goal.
fn toy3() -> Value {
    let mut v = vec![ev("s0", "a", "goal"), ev("s0", "a", "fail")];
    v.extend((0..9).map(|_| ev("s0", "b", "s0")));
    v.push(ev("s0", "b", "goal"));
    Value::Array(v)
}

#[tokio::test(flavor = "multi_thread")]
async fn submit_single_batch_and_empty() {
    let (api, r) = started();
    let (st, body, _) = call(&r, "POST", "/api/v1/transitions", Some(ev("s0", "a", "goal"))).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    assert_eq!(body, json!({ "ok": true, "data": { "accepted": 1 } }));
    let (st, body, _) = call(&r, "POST", "/api/v1/transitions", Some(json!([]))).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    assert_eq!(body["data"]["accepted"], 0);
    let batch = json!([ev("s0", "a", "goal"), ev("s0", "a", "moon"), ev("s0", "b", "s0")]);
    let (st, body, _) = call(&r, "POST", "/api/v1/transitions", Some(batch)).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(body["ok"], false);
    assert_eq!(body["error"]["code"], "unknown_name");
    assert!(body.get("data").is_none());
    assert_eq!(api.guard().metrics().accepted, 1);
    for bad in [json!({ "state": "s0" }), json!(42), json!("x")] {
        let (st, body, _) = call(&r, "POST", "/api/v1/transitions", Some(bad)).await;
        assert_eq!(st, StatusCode::BAD_REQUEST);
        assert_eq!(body["error"]["code"], "malformed");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn not_running_is_unavailable() {
    let (_api, r) = api(ServerOptions::default());
    let (st, body, _) = call(&r, "POST", "/api/v1/transitions", Some(ev("s0", "a", "goal"))).await;
    assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "not_running");
}

#[tokio::test(flavor = "multi_thread")]
async fn queue_full_is_429() {
    let cfg = format!("{CFG}queue: {{ capacity: 2, on_full: reject }}\n");
    let guard = Arc::new(Guard::new(load_config(&cfg).unwrap()));
    let api = Api::new(guard, ServerOptions::default());
    let r = api.router();
    api.guard().start().unwrap();
    let big = Value::Array((0..3).map(|_| ev("s0", "b", "s0")).collect());
    let (st, body, _) = call(&r, "POST", "/api/v1/transitions", Some(big)).await;
    assert_eq!(st, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(body["error"]["code"], "queue_full");
}

#[tokio::test(flavor = "multi_thread")]
async fn model_results_and_alerts() {
    let (api, r) = started();
    let (st, body, _) = call(&r, "GET", "/api/v1/model", None).await;
    assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "no_model");
    let (st, body, _) = call(&r, "GET", "/api/v1/results", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["data"], json!({}));
    let (_, body, _) = call(&r, "GET", "/api/v1/alerts", None).await;
    assert_eq!(body["data"], json!([]));

    call(&r, "POST", "/api/v1/transitions", Some(toy3())).await;
    api.guard().flush();
    assert_eq!(api.guard().cycle(), 3);

    let (st, body, rev) = call(&r, "GET", "/api/v1/model", None).await;
    assert_eq!(st, StatusCode::OK);
    let revision = body["revision"].as_u64().unwrap();
    assert_eq!(rev.unwrap(), revision.to_string());
    assert_eq!(body["data"]["revision"], revision);
    // s0=0, fail=1, goal=2 in declaration order; a=0, b=1
    assert_eq!(body["data"]["counts"], json!([[0, 0, 1, 1.0], [0, 0, 2, 1.0], [0, 1, 0, 9.0], [0, 1, 2, 1.0]]));

    let (_, body, _) = call(&r, "GET", "/api/v1/results", None).await;
    let results = body["data"].as_object().unwrap();
    assert_eq!(results.len(), 3);
    assert_eq!(results["reach"]["cycle"], 3);
    assert!((results["reach"]["value"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((results["worst"]["value"].as_f64().unwrap() - 0.5).abs() < 1e-6);
    assert_eq!(results["worst"]["satisfied"], false);
    assert!((results["steps"]["value"].as_f64().unwrap() - 10.0).abs() < 1e-5);
    assert_eq!(results["steps"]["revision"], revision);

    let (_, body, _) = call(&r, "GET", "/api/v1/alerts", None).await;
    let alerts = body["data"].as_array().unwrap();
    assert_eq!(alerts.len(), 1);
    assert_eq!(alerts[0]["property"], "worst");
    assert_eq!(alerts[0]["acknowledged"], false);
    let id = alerts[0]["id"].as_u64().unwrap();

    // reads are side-effect free
    for uri in ["/api/v1/model", "/api/v1/results", "/api/v1/alerts"] {
        assert_eq!(raw(&r, uri).await, raw(&r, uri).await);
    }

    let (st, body, _) = call(&r, "POST", "/api/v1/control", Some(json!({ "command": "acknowledge", "alert_id": id }))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["data"]["source"], "human");
    let (_, body, _) = call(&r, "GET", "/api/v1/alerts", None).await;
    assert_eq!(body["data"][0]["acknowledged"], true);
    let (st, body, _) = call(&r, "POST", "/api/v1/control", Some(json!({ "command": "acknowledge", "alert_id": 999 }))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_alert");
}

#[tokio::test(flavor = "multi_thread")]
async fn control_routes_human_commands() {
    let guard = Arc::new(Guard::new(load_config(CFG).unwrap()));
    let paused = Arc::new(AtomicUsize::new(0));
    let p = paused.clone();
    guard.register_actuator("pause", move |_| {
        p.fetch_add(1, Ordering::SeqCst);
        Ok(())
    });
    let api = Api::new(guard, ServerOptions::default());
    let r = api.router();
    api.guard().start().unwrap();
    let (st, body, _) = call(&r, "POST", "/api/v1/control", Some(json!({ "command": "pause", "source": "auto" }))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["data"]["command"], "pause");
    assert_eq!(body["data"]["source"], "human");
    assert_eq!(paused.load(Ordering::SeqCst), 1);
    assert_eq!(api.guard().audit().len(), 1);
    let (st, body, _) = call(&r, "POST", "/api/v1/control", Some(json!({ "command": "custom", "name": "nope" }))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_command");
    let (st, _, _) = call(&r, "POST", "/api/v1/control", Some(json!({ "command": "dance" }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

struct Frames {
    body: Body,
    buf: String,
}

impl Frames {
    async fn open(router: &Router) -> Result<Self, StatusCode> {
        let resp = router
            .clone()
            .oneshot(Request::get("/api/v1/stream").body(Body::empty()).unwrap())
            .await
            .unwrap();
        if resp.status() != StatusCode::OK {
            return Err(resp.status());
        }
        assert_eq!(resp.headers()["content-type"], "text/event-stream");
        Ok(Self {
            body: resp.into_body(),
            buf: String::new(),
        })
    }

    async fn next(&mut self) -> StreamFrame {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let chunk: String = self.buf.drain(..end + 2).collect();
                if let Some(data) = chunk.lines().find_map(|l| l.strip_prefix("data: ")) {
                    return serde_json::from_str(data).unwrap();
                }
                continue;
            }
            let frame = tokio::time::timeout(Duration::from_secs(10), self.body.frame())
                .await
                .expect("stream stalled")
                .unwrap()
                .unwrap();
            if let Ok(data) = frame.into_data() {
                self.buf.push_str(std::str::from_utf8(&data).unwrap());
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_sends_snapshot_then_ordered_cycles() {
    let (api, r) = started();
    call(&r, "POST", "/api/v1/transitions", Some(Value::Array(vec![ev("s0", "b", "s0"); 4]))).await;
    api.guard().flush();
    let mut s = Frames::open(&r).await.unwrap();
    let first = s.next().await;
    assert_eq!(serde_json::to_value(first.kind).unwrap(), "snapshot");
    assert_eq!(first.cycle, 1);
    assert_eq!(first.payload["results"].as_object().unwrap().len(), 3);

    call(&r, "POST", "/api/v1/transitions", Some(toy3())).await;
    api.guard().flush();
    let mut results = 0;
    let mut last = first.cycle;
    while results < 2 * 3 {
        let f = s.next().await;
        assert!(f.cycle >= last);
        last = f.cycle;
        match serde_json::to_value(f.kind).unwrap().as_str().unwrap() {
            "result" => results += 1,
            "model_delta" => assert!(f.payload["changed"].as_array().is_some()),
            "alert" => assert_eq!(f.payload["property"], "worst"),
            other => panic!("unexpected {other}"),
        }
    }
    assert_eq!(last, 3);
    let (_, body, _) = call(&r, "GET", "/api/v1/model", None).await;
    assert!(body["revision"].as_u64().unwrap() >= first.payload["revision"].as_u64().unwrap());
}

#[tokio::test(flavor = "multi_thread")]
async fn idle_stream_heartbeats() {
    let (api, r) = api(ServerOptions {
        heartbeat: Duration::from_millis(20),
        ..Default::default()
    });
    api.guard().start().unwrap();
    let mut s = Frames::open(&r).await.unwrap();
    assert_eq!(serde_json::to_value(s.next().await.kind).unwrap(), "snapshot");
    for _ in 0..3 {
        let f = s.next().await;
        assert_eq!(serde_json::to_value(f.kind).unwrap(), "heartbeat");
        assert_eq!(f.cycle, 0);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_client_limit() {
    let (api, r) = started();
    let mut open = Vec::new();
    for _ in 0..16 {
        open.push(Frames::open(&r).await.unwrap());
    }
    assert_eq!(api.hub().clients(), 16);
    assert_eq!(Frames::open(&r).await.err(), Some(StatusCode::SERVICE_UNAVAILABLE));
    open.pop();
    assert_eq!(api.hub().clients(), 15);
    assert!(Frames::open(&r).await.is_ok());
}
