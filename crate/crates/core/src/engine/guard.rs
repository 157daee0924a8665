//! The running engine: queue, analyzer thread, published state.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::actuator::{invoke, Actuators, Callback, Command, Dispatch, Source};
use super::alerts::{evaluate_thresholds, Alert, AlertBook};
use super::analyzer::{Analyzer, CycleReport};
use super::queue::{EventQueue, Popped, PushError};
use super::{ActuatorCommand, AuditEntry, EngineError, Lifecycle};
use crate::checker::VerificationResult;
use crate::config::{GuardConfig, QueueFullPolicy};
use crate::mdp::{LearnedMdp, ModelSnapshot, TransitionEvent};
use crate::trace::TraceRecord;

/// Receives every completed cycle, on the analyzer thread. Must not block.
pub trait Sink: Send + Sync {
    /// `alerts` are the alerts raised in this cycle, after their
    /// callbacks ran.
    fn on_cycle(&self, report: &CycleReport, alerts: &[Alert]);
}

/// Latest result of one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub cycle: u64,
    #[serde(flatten)]
    pub result: VerificationResult,
}

/// Last command the overseer or an automatic response sent to the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentStatus {
    #[default]
    Running,
    Paused,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub lifecycle: Lifecycle,
    pub agent: AgentStatus,
    /// Events taken into the queue.
    pub accepted: u64,
    /// Events refused because the queue was full.
    pub rejected: u64,
    /// Accepted events evicted by the drop-oldest policy.
    pub dropped: u64,
    pub applied: u64,
    /// Accepted events the learner refused (unknown names in strict mode).
    pub invalid: u64,
    pub queued: usize,
    pub cycles: u64,
}

/// Final state after [`Guard::stop`].
#[derive(Debug, Clone)]
pub struct StopReport {
    pub cycles: u64,
    pub applied: u64,
    pub invalid: u64,
    pub dropped: u64,
    pub snapshot: Option<Arc<ModelSnapshot>>,
    /// Latest result per property, in configuration order.
    pub results: Vec<VerificationResult>,
    pub alerts: Vec<Alert>,
    /// The final model; `None` if the analyzer thread panicked.
    pub model: Option<LearnedMdp>,
}

impl StopReport {
    pub fn violation(&self) -> bool {
        super::any_violation(&self.results)
    }
}

struct Store {
    snapshot: Option<Arc<ModelSnapshot>>,
    results: Vec<ResultEntry>,
    cycle: u64,
    alerts: AlertBook,
    agent: AgentStatus,
    errors: VecDeque<String>,
    history: usize,
}

impl Store {
    fn note_error(&mut self, e: String) {
        if self.errors.len() == self.history {
            self.errors.pop_front();
        }
        self.errors.push_back(e);
    }
}

struct Inner {
    cfg: Arc<GuardConfig>,
    template: LearnedMdp,
    queue: EventQueue<TransitionEvent>,
    store: RwLock<Store>,
    actuators: Mutex<Actuators>,
    dispatch_lock: Mutex<()>,
    sinks: RwLock<Vec<Arc<dyn Sink>>>,
    lifecycle: Mutex<Lifecycle>,
    worker: Mutex<Option<JoinHandle<Analyzer>>>,
    trace_log: Mutex<Option<Box<dyn Write + Send>>>,
    accepted: AtomicU64,
    rejected: AtomicU64,
    applied: AtomicU64,
    invalid: AtomicU64,
    processed: Mutex<u64>,
    progress: Condvar,
}

/// Handle to one engine. Dropping a running guard stops it.
pub struct Guard {
    inner: Arc<Inner>,
}

impl Guard {
    pub fn new(cfg: GuardConfig) -> Self {
        Self::with_queue_policy(cfg, None)
    }

    /// Like [`Guard::new`] with the configured full-queue policy replaced.
    pub fn with_queue_policy(cfg: GuardConfig, policy: Option<QueueFullPolicy>) -> Self {
        let history = cfg.analysis.history;
        let queue = EventQueue::new(cfg.queue.capacity, policy.unwrap_or(cfg.queue.on_full));
        let template = cfg.learned_mdp();
        Self {
            inner: Arc::new(Inner {
                cfg: Arc::new(cfg),
                template,
                queue,
                store: RwLock::new(Store {
                    snapshot: None,
                    results: Vec::new(),
                    cycle: 0,
                    alerts: AlertBook::new(history),
                    agent: AgentStatus::Running,
                    errors: VecDeque::new(),
                    history: history.max(1),
                }),
                actuators: Mutex::new(Actuators::new(history)),
                dispatch_lock: Mutex::new(()),
                sinks: RwLock::new(Vec::new()),
                lifecycle: Mutex::new(Lifecycle::Created),
                worker: Mutex::new(None),
                trace_log: Mutex::new(None),
                accepted: AtomicU64::new(0),
                rejected: AtomicU64::new(0),
                applied: AtomicU64::new(0),
                invalid: AtomicU64::new(0),
                processed: Mutex::new(0),
                progress: Condvar::new(),
            }),
        }
    }

    pub fn config(&self) -> &GuardConfig {
        &self.inner.cfg
    }

    /// Every dequeued event is written here as a trace record, in the order
    /// the analyzer processed it.
    pub fn set_trace_log(&self, out: Box<dyn Write + Send>) {
        *self.inner.trace_log.lock() = Some(out);
    }

    pub fn add_sink(&self, sink: Arc<dyn Sink>) {
        self.inner.sinks.write().push(sink);
    }

    /// Registers or replaces the callback for a command name.
    pub fn register_actuator(
        &self,
        name: &str,
        cb: impl Fn(&Dispatch<'_>) -> Result<(), String> + Send + Sync + 'static,
    ) {
        let cb: Callback = Arc::new(cb);
        self.inner.actuators.lock().register(name, cb);
    }

    pub fn lifecycle(&self) -> Lifecycle {
        *self.inner.lifecycle.lock()
    }

    /// Starts the analyzer thread. Every `on_violation` command must be
    /// registered by now.
    pub fn start(&self) -> Result<(), EngineError> {
        let mut life = self.inner.lifecycle.lock();
        if *life != Lifecycle::Created {
            return Err(EngineError::AlreadyStarted);
        }
        {
            let act = self.inner.actuators.lock();
            for spec in &self.inner.cfg.properties {
                if let Some(cmd) = &spec.on_violation {
                    if cmd == "acknowledge" || !act.is_registered(cmd) {
                        return Err(EngineError::UnknownCommand(cmd.clone()));
                    }
                }
            }
        }
        let inner = self.inner.clone();
        let handle = std::thread::Builder::new()
            .name("agentguard-analyzer".into())
            .spawn(move || analyzer_loop(&inner))
            .map_err(EngineError::Io)?;
        *self.inner.worker.lock() = Some(handle);
        *life = Lifecycle::Running;
        Ok(())
    }

    fn ensure_running(&self) -> Result<(), EngineError> {
        if *self.inner.lifecycle.lock() != Lifecycle::Running {
            return Err(EngineError::NotRunning);
        }
        Ok(())
    }

    /// Queues one transition. Name errors are reported later through the
    /// error log, not here.
    pub fn log_transition(&self, state: &str, action: &str, next_state: &str, reward: Option<f64>) -> Result<(), EngineError> {
        let mut ev = TransitionEvent::new(state, action, next_state);
        ev.reward = reward;
        self.log_event(ev)
    }

    pub fn log_event(&self, ev: TransitionEvent) -> Result<(), EngineError> {
        self.push(vec![ev]).map(|_| ())
    }

    /// Queues a batch in order after validating every event against the
    /// configuration; one bad event rejects the whole batch.
    pub fn submit_batch(&self, events: Vec<TransitionEvent>) -> Result<usize, EngineError> {
        self.ensure_running()?;
        for (index, ev) in events.iter().enumerate() {
            self.inner
                .template
                .validate_event(ev)
                .map_err(|source| EngineError::InvalidEvent { index, source })?;
        }
        self.push(events)
    }

    fn push(&self, events: Vec<TransitionEvent>) -> Result<usize, EngineError> {
        self.ensure_running()?;
        let n = events.len();
        if n == 0 {
            return Ok(0);
        }
        match self.inner.queue.push_all(events) {
            Ok(_) => {
                self.inner.accepted.fetch_add(n as u64, Ordering::SeqCst);
                Ok(n)
            }
            Err(PushError::Full) => {
                self.inner.rejected.fetch_add(n as u64, Ordering::SeqCst);
                Err(EngineError::QueueFull)
            }
            Err(PushError::Closed) => Err(EngineError::NotRunning),
        }
    }

    /// Waits until every accepted event has been processed or evicted.
    pub fn flush(&self) {
        let mut processed = self.inner.processed.lock();
        loop {
            let target = self.inner.accepted.load(Ordering::SeqCst) - self.inner.queue.dropped();
            if *processed >= target || *self.inner.lifecycle.lock() != Lifecycle::Running {
                return;
            }
            self.inner.progress.wait_for(&mut processed, Duration::from_millis(50));
        }
    }

    /// Stops accepting events, processes what is queued, runs a final
    /// cycle if any events arrived since the last one, and joins the
    /// analyzer.
    pub fn stop(&self) -> Result<StopReport, EngineError> {
        {
            let mut life = self.inner.lifecycle.lock();
            if *life != Lifecycle::Running {
                return Err(EngineError::NotRunning);
            }
            *life = Lifecycle::Stopped;
        }
        self.inner.queue.close();
        let handle = self.inner.worker.lock().take();
        let analyzer = handle.and_then(|h| h.join().ok());
        if let Some(out) = self.inner.trace_log.lock().as_mut() {
            out.flush()?;
        }
        let store = self.inner.store.read();
        Ok(StopReport {
            cycles: store.cycle,
            applied: self.inner.applied.load(Ordering::SeqCst),
            invalid: self.inner.invalid.load(Ordering::SeqCst),
            dropped: self.inner.queue.dropped(),
            snapshot: store.snapshot.clone(),
            results: store.results.iter().map(|e| e.result.clone()).collect(),
            alerts: store.alerts.newest_first(),
            model: analyzer.map(|a| a.model().clone()),
        })
    }

    pub fn metrics(&self) -> Metrics {
        let store = self.inner.store.read();
        Metrics {
            lifecycle: self.lifecycle(),
            agent: store.agent,
            accepted: self.inner.accepted.load(Ordering::SeqCst),
            rejected: self.inner.rejected.load(Ordering::SeqCst),
            dropped: self.inner.queue.dropped(),
            applied: self.inner.applied.load(Ordering::SeqCst),
            invalid: self.inner.invalid.load(Ordering::SeqCst),
            queued: self.inner.queue.len(),
            cycles: store.cycle,
        }
    }

    /// Latest complete snapshot; `None` before the first cycle.
    pub fn snapshot(&self) -> Option<Arc<ModelSnapshot>> {
        self.inner.store.read().snapshot.clone()
    }

    pub fn cycle(&self) -> u64 {
        self.inner.store.read().cycle
    }

    /// Latest result per property, in configuration order.
    pub fn results(&self) -> Vec<ResultEntry> {
        self.inner.store.read().results.clone()
    }

    /// Cycle, snapshot and results read together.
    pub fn view(&self) -> (u64, Option<Arc<ModelSnapshot>>, Vec<ResultEntry>) {
        let s = self.inner.store.read();
        (s.cycle, s.snapshot.clone(), s.results.clone())
    }

    pub fn alerts(&self) -> Vec<Alert> {
        self.inner.store.read().alerts.newest_first()
    }

    pub fn audit(&self) -> Vec<AuditEntry> {
        self.inner.actuators.lock().audit()
    }

    /// Recent event errors reported by the learner.
    pub fn errors(&self) -> Vec<String> {
        self.inner.store.read().errors.iter().cloned().collect()
    }

    /// Routes a command to its callback and records it in the audit log.
    /// A failing callback is reported in the entry, not as an error.
    pub fn dispatch(&self, cmd: ActuatorCommand) -> Result<AuditEntry, EngineError> {
        dispatch(&self.inner, &cmd)
    }
}

impl Drop for Guard {
    fn drop(&mut self) {
        if self.lifecycle() == Lifecycle::Running {
            let _ = self.stop();
        }
    }
}

fn dispatch(inner: &Inner, cmd: &ActuatorCommand) -> Result<AuditEntry, EngineError> {
    let _serial = inner.dispatch_lock.lock();
    let revision = inner.store.read().snapshot.as_ref().map_or(0, |s| s.revision());
    if cmd.command == Command::Acknowledge {
        let id = cmd
            .alert_id
            .ok_or_else(|| EngineError::MalformedCommand("acknowledge needs an alert id".into()))?;
        inner
            .store
            .write()
            .alerts
            .acknowledge(id)
            .ok_or(EngineError::UnknownAlert(id))?;
        return Ok(inner.actuators.lock().record(cmd, revision, Ok(())));
    }
    let cb = inner.actuators.lock().callback(cmd)?.expect("non-acknowledge commands have callbacks");
    let alert = match cmd.alert_id {
        Some(id) => Some(
            inner
                .store
                .read()
                .alerts
                .get(id)
                .cloned()
                .ok_or(EngineError::UnknownAlert(id))?,
        ),
        None => None,
    };
    let outcome = invoke(
        &cb,
        &Dispatch {
            command: cmd,
            alert: alert.as_ref(),
            revision,
        },
    );
    if outcome.is_ok() {
        let status = match cmd.command {
            Command::Pause => Some(AgentStatus::Paused),
            Command::Resume => Some(AgentStatus::Running),
            Command::Terminate => Some(AgentStatus::Terminated),
            _ => None,
        };
        if let Some(s) = status {
            inner.store.write().agent = s;
        }
    }
    Ok(inner.actuators.lock().record(cmd, revision, outcome))
}

fn run_cycle(inner: &Inner, analyzer: &mut Analyzer) {
    let report = analyzer.run_cycle();
    let mut raised = {
        let mut store = inner.store.write();
        store.snapshot = Some(report.snapshot.clone());
        store.cycle = report.cycle;
        store.results = report
            .results
            .iter()
            .map(|r| ResultEntry {
                cycle: report.cycle,
                result: r.clone(),
            })
            .collect();
        evaluate_thresholds(&report.results, &inner.cfg, &mut store.alerts, report.cycle, analyzer.last_ts())
    };
    for alert in &mut raised {
        let Some(name) = alert.on_violation.clone() else { continue };
        let cmd = ActuatorCommand {
            command: Command::from_name(&name),
            source: Source::Auto,
            alert_id: Some(alert.id),
        };
        let err = match dispatch(inner, &cmd) {
            Ok(entry) => entry.error,
            Err(e) => Some(e.to_string()),
        };
        if let Some(e) = err {
            inner.store.write().alerts.set_callback_error(alert.id, e.clone());
            alert.callback_error = Some(e);
        }
    }
    for r in &report.results {
        if let Some(e) = &r.error {
            log::warn!("property `{}`: {e}", r.property);
        }
    }
    for sink in inner.sinks.read().iter() {
        sink.on_cycle(&report, &raised);
    }
}

fn process(inner: &Inner, analyzer: &mut Analyzer, mut ev: TransitionEvent, seq: u64) {
    ev.timestamp.get_or_insert(seq);
    if let Some(out) = inner.trace_log.lock().as_mut() {
        let rec = TraceRecord::from_event(seq, "live", &ev);
        if let Err(e) = writeln!(out, "{}", rec.to_json_line()) {
            log::error!("trace log write failed: {e}");
        }
    }
    match analyzer.apply(&ev) {
        Ok(()) => {
            inner.applied.fetch_add(1, Ordering::SeqCst);
        }
        Err(e) => {
            inner.invalid.fetch_add(1, Ordering::SeqCst);
            log::warn!("event {seq} rejected: {e}");
            inner.store.write().note_error(format!("event {seq}: {e}"));
        }
    }
    if analyzer.cycle_due() {
        run_cycle(inner, analyzer);
    }
}

fn analyzer_loop(inner: &Inner) -> Analyzer {
    let mut analyzer = Analyzer::new(inner.cfg.clone());
    let tick = inner.cfg.analysis.also_every_ms.map(Duration::from_millis);
    let mut next_tick = tick.map(|t| Instant::now() + t);
    let mut seq = 0u64;
    loop {
        let timeout = next_tick.map(|d| d.saturating_duration_since(Instant::now()));
        match inner.queue.pop_all(timeout) {
            Popped::Items(batch) => {
                let n = batch.len() as u64;
                for ev in batch {
                    process(inner, &mut analyzer, ev, seq);
                    seq += 1;
                }
                *inner.processed.lock() += n;
                inner.progress.notify_all();
            }
            Popped::Timeout => {}
            Popped::Closed => break,
        }
        if let (Some(t), Some(due)) = (tick, next_tick) {
            let now = Instant::now();
            if now >= due {
                if analyzer.pending() > 0 {
                    run_cycle(inner, &mut analyzer);
                }
                next_tick = Some(now + t);
            }
        }
    }
    if analyzer.pending() > 0 {
        run_cycle(inner, &mut analyzer);
    }
    inner.progress.notify_all();
    analyzer
}
