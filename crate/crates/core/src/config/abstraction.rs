//! Raw instrumentation events to abstract transitions.
//!
//! A `tool_call` is held until the next `tool_result` of the same session;
//! the pair becomes `(current, tool, outcome state)`. A `state_decl` moves
//! the tracked state directly through the reserved `__goto__` action.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GuardConfig, OTHER_STATE};
use crate::mdp::{TransitionEvent, GOTO_ACTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawKind {
    ToolCall,
    ToolResult,
    StateDecl,
}

/// One line of a raw trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEvent {
    pub kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_state: Option<String>,
    /// Opaque to the engine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    pub ts: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
}

impl RawEvent {
    pub fn tool_call(tool: &str, ts: u64) -> Self {
        Self::bare(RawKind::ToolCall, ts).with(|e| e.tool = Some(tool.to_owned()))
    }

    pub fn tool_result(outcome: &str, ts: u64) -> Self {
        Self::bare(RawKind::ToolResult, ts).with(|e| e.outcome = Some(outcome.to_owned()))
    }

    pub fn state_decl(state: &str, ts: u64) -> Self {
        Self::bare(RawKind::StateDecl, ts).with(|e| e.declared_state = Some(state.to_owned()))
    }

    fn bare(kind: RawKind, ts: u64) -> Self {
        Self {
            kind,
            tool: None,
            outcome: None,
            declared_state: None,
            payload: None,
            ts,
            session: None,
        }
    }

    fn with(mut self, f: impl FnOnce(&mut Self)) -> Self {
        f(&mut self);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbstractionError {
    #[error("tool_result without a pending tool_call")]
    OrphanResult,
    #[error("{kind:?} event is missing `{field}`")]
    MissingField { kind: RawKind, field: &'static str },
    #[error("tool_result for `{result}` but the pending call is `{pending}`")]
    ToolMismatch { pending: String, result: String },
    #[error("outcome `{0}` maps to no state")]
    UnmappedOutcome(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
}

/// Abstraction state of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    pub current: String,
    pub pending: Option<String>,
    /// Raw events that produced neither a transition nor a pending call.
    pub dropped: u64,
}

impl Tracker {
    pub fn new(initial: impl Into<String>) -> Self {
        Self {
            current: initial.into(),
            pending: None,
            dropped: 0,
        }
    }

    /// [`abstract_event`], logging and counting failures as drops.
    pub fn observe(&mut self, cfg: &GuardConfig, raw: &RawEvent) -> Option<TransitionEvent> {
        match abstract_event(cfg, self, raw) {
            Ok(ev) => ev,
            Err(e) => {
                log::warn!("dropping raw event at ts {}: {e}", raw.ts);
                self.dropped += 1;
                None
            }
        }
    }
}

/// Maps one raw event. Only a completed call/result pair or a state
/// declaration yields a transition.
pub fn abstract_event(
    cfg: &GuardConfig,
    tracker: &mut Tracker,
    raw: &RawEvent,
) -> Result<Option<TransitionEvent>, AbstractionError> {
    let open = cfg.is_open();
    let missing = |field| AbstractionError::MissingField { kind: raw.kind, field };
    match raw.kind {
        RawKind::ToolCall => {
            let tool = raw.tool.as_deref().ok_or(missing("tool"))?;
            if !open && !cfg.has_action(tool) {
                return Err(AbstractionError::UnknownAction(tool.to_owned()));
            }
            if let Some(prev) = tracker.pending.replace(tool.to_owned()) {
                log::warn!("tool_call `{tool}` replaces unanswered call `{prev}`");
                tracker.dropped += 1;
            }
            Ok(None)
        }
        RawKind::ToolResult => {
            let outcome = raw.outcome.as_deref().ok_or(missing("outcome"))?;
            let pending = tracker.pending.take().ok_or(AbstractionError::OrphanResult)?;
            if let Some(tool) = raw.tool.as_deref().filter(|t| *t != pending) {
                return Err(AbstractionError::ToolMismatch {
                    pending,
                    result: tool.to_owned(),
                });
            }
            let next = if let Some(s) = cfg.outcomes.get(outcome) {
                s.clone()
            } else if cfg.has_state(outcome) {
                outcome.to_owned()
            } else if open {
                OTHER_STATE.to_owned()
            } else {
                return Err(AbstractionError::UnmappedOutcome(outcome.to_owned()));
            };
            let ev = TransitionEvent {
                state: std::mem::replace(&mut tracker.current, next.clone()),
                action: pending,
                next_state: next,
                reward: None,
                timestamp: Some(raw.ts),
            };
            Ok(Some(ev))
        }
        RawKind::StateDecl => {
            let declared = raw.declared_state.as_deref().ok_or(missing("declared_state"))?;
            if !open && !cfg.has_state(declared) {
                return Err(AbstractionError::UnknownState(declared.to_owned()));
            }
            let ev = TransitionEvent {
                state: std::mem::replace(&mut tracker.current, declared.to_owned()),
                action: GOTO_ACTION.to_owned(),
                next_state: declared.to_owned(),
                reward: None,
                timestamp: Some(raw.ts),
            };
            Ok(Some(ev))
        }
    }
}

/// Independent trackers keyed by session id; events without a session go
/// to the `""` session.
#[derive(Debug, Clone)]
pub struct SessionTracker {
    initial: String,
    sessions: BTreeMap<String, Tracker>,
}

impl SessionTracker {
    pub fn new(cfg: &GuardConfig) -> Self {
        Self {
            initial: cfg.initial.clone(),
            sessions: BTreeMap::new(),
        }
    }

    pub fn observe(&mut self, cfg: &GuardConfig, raw: &RawEvent) -> Option<TransitionEvent> {
        let key = raw.session.clone().unwrap_or_default();
        self.sessions
            .entry(key)
            .or_insert_with(|| Tracker::new(self.initial.clone()))
            .observe(cfg, raw)
    }

    pub fn dropped(&self) -> u64 {
        self.sessions.values().map(|t| t.dropped).sum()
    }

    pub fn session(&self, id: &str) -> Option<&Tracker> {
        self.sessions.get(id)
    }
}
