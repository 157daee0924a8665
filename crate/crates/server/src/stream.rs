//! Fan-out of analysis cycles to server-sent-event clients.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use agentguard_core::engine::{Alert, CycleReport, ResultEntry, Sink};
use agentguard_core::mdp::{ModelSnapshot, Quad, SnapshotDocument};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    /// Current state, sent once when a client connects.
    Snapshot,
    ModelDelta,
    Result,
    Alert,
    Heartbeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    pub kind: FrameKind,
    pub cycle: u64,
    pub payload: serde_json::Value,
}

/// Payload of a [`FrameKind::Snapshot`] frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPayload {
    pub revision: Option<u64>,
    pub model: Option<SnapshotDocument>,
    pub results: BTreeMap<String, ResultEntry>,
    pub alerts: Vec<Alert>,
}

/// Payload of a [`FrameKind::ModelDelta`] frame: the count entries whose
/// weight changed since the previous cycle, and the full name tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDelta {
    pub revision: u64,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub changed: Vec<Quad>,
    /// `[s, a, s']` entries that disappeared (pruned by forgetting).
    pub removed: Vec<(usize, usize, usize)>,
}

impl ModelDelta {
    pub fn between(prev: Option<&ModelSnapshot>, next: &ModelSnapshot) -> Self {
        let old: BTreeMap<(usize, usize, usize), f64> = prev
            .map(|p| p.counts().iter().map(|&(s, a, t, w)| ((s, a, t), w)).collect())
            .unwrap_or_default();
        let mut changed = Vec::new();
        let mut seen = Vec::new();
        for &(s, a, t, w) in next.counts() {
            seen.push((s, a, t));
            if old.get(&(s, a, t)) != Some(&w) {
                changed.push(Quad(s, a, t, w));
            }
        }
        seen.sort_unstable();
        let removed = old
            .keys()
            .filter(|k| seen.binary_search(k).is_err())
            .copied()
            .collect();
        Self {
            revision: next.revision(),
            states: next.states().to_vec(),
            actions: next.actions().to_vec(),
            changed,
            removed,
        }
    }
}

/// Broadcasts frames for every cycle. Registered as an engine [`Sink`].
pub struct StreamHub {
    tx: broadcast::Sender<StreamFrame>,
    last: Mutex<Option<Arc<ModelSnapshot>>>,
    clients: AtomicUsize,
    max_clients: usize,
    heartbeat: Duration,
}

impl StreamHub {
    pub fn new(max_clients: usize, heartbeat: Duration) -> Self {
        let (tx, _) = broadcast::channel(4096);
        Self {
            tx,
            last: Mutex::new(None),
            clients: AtomicUsize::new(0),
            max_clients,
            heartbeat,
        }
    }

    pub fn heartbeat(&self) -> Duration {
        self.heartbeat
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamFrame> {
        self.tx.subscribe()
    }

    pub fn clients(&self) -> usize {
        self.clients.load(Ordering::SeqCst)
    }

    /// Reserves a client slot; `None` when the limit is reached.
    pub fn admit(self: &Arc<Self>) -> Option<ClientSlot> {
        let admitted = self
            .clients
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.max_clients).then_some(n + 1))
            .is_ok();
        admitted.then(|| ClientSlot(self.clone()))
    }
}

/// Releases its slot on drop.
pub struct ClientSlot(Arc<StreamHub>);

impl Drop for ClientSlot {
    fn drop(&mut self) {
        self.0.clients.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Sink for StreamHub {
    fn on_cycle(&self, report: &CycleReport, alerts: &[Alert]) {
        let cycle = report.cycle;
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        let delta = ModelDelta::between(last.as_deref(), &report.snapshot);
        *last = Some(report.snapshot.clone());
        drop(last);
        let mut frames = vec![frame(FrameKind::ModelDelta, cycle, &delta)];
        for r in &report.results {
            let entry = ResultEntry { cycle, result: r.clone() };
            frames.push(frame(FrameKind::Result, cycle, &entry));
        }
        for a in alerts {
            frames.push(frame(FrameKind::Alert, cycle, a));
        }
        for f in frames {
            // no receivers is fine
            let _ = self.tx.send(f);
        }
    }
}

pub fn frame(kind: FrameKind, cycle: u64, payload: &impl Serialize) -> StreamFrame {
    StreamFrame {
        kind,
        cycle,
        payload: serde_json::to_value(payload).expect("frame payloads serialize"),
    }
}
