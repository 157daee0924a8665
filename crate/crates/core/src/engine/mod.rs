//! The live loop: producers log transitions into a bounded queue, a single
//! analyzer thread applies them to the learner and, every
//! `analysis.every_events` applied events, snapshots the model, checks every
//! configured property, raises alerts and dispatches actuator commands.
//!
//! ```no_run
//! use agentguard_core::config::load_config;
//! use agentguard_core::engine::Guard;
//!
//! let cfg = load_config(&std::fs::read_to_string("configs/repairagent.yaml").unwrap()).unwrap();
//! let guard = Guard::new(cfg);
//! guard.start().unwrap();
//! guard.log_transition("understand_bug", "express_hypothesis", "hypothesis", None).unwrap();
//! let report = guard.stop().unwrap();
//! println!("{} cycles", report.cycles);
//! ```

mod actuator;
mod alerts;
mod analyzer;
mod guard;
mod queue;
mod replay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::VerificationResult;
use crate::mdp::MdpError;
use crate::trace::TraceError;

pub use actuator::{ActuatorCommand, AuditEntry, Callback, Command, Dispatch, Source, BUILTIN_COMMANDS};
pub use alerts::{evaluate_thresholds, Alert, AlertBook};
pub use analyzer::{Analyzer, CycleReport};
pub use guard::{AgentStatus, Guard, Metrics, ResultEntry, Sink, StopReport};
pub use replay::{replay_trace, ReplayOptions, Speed};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("the engine is not running")]
    NotRunning,
    #[error("the engine was already started")]
    AlreadyStarted,
    #[error("the event queue is full")]
    QueueFull,
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
    #[error("unknown alert {0}")]
    UnknownAlert(u64),
    #[error("malformed command: {0}")]
    MalformedCommand(String),
    #[error("event {index}: {source}")]
    InvalidEvent { index: usize, source: MdpError },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("trace log: {0}")]
    Io(#[from] std::io::Error),
}

/// Whether any property's latest result is a violated threshold. The CLI
/// turns this into exit code 4.
pub fn any_violation<'a>(results: impl IntoIterator<Item = &'a VerificationResult>) -> bool {
    results.into_iter().any(|r| r.satisfied == Some(false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Created,
    Running,
    Stopped,
}
