//! Actuator commands, their callbacks, and the audit log.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::alerts::Alert;
use super::EngineError;

/// Commands that always have a callback (a logging no-op unless replaced).
pub const BUILTIN_COMMANDS: [&str; 3] = ["pause", "resume", "terminate"];

/// Callbacks should return quickly; anything over this is logged.
const WATCHDOG: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Pause,
    Resume,
    Terminate,
    Acknowledge,
    Custom(String),
}

impl Command {
    /// The command an `on_violation` entry names.
    pub fn from_name(name: &str) -> Self {
        match name {
            "pause" => Command::Pause,
            "resume" => Command::Resume,
            "terminate" => Command::Terminate,
            "acknowledge" => Command::Acknowledge,
            other => Command::Custom(other.to_owned()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Terminate => "terminate",
            Command::Acknowledge => "acknowledge",
            Command::Custom(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Auto,
    #[default]
    Human,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireCommand {
    command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alert_id: Option<u64>,
    #[serde(default)]
    source: Source,
}

/// `{"command": "pause"}`, `{"command": "acknowledge", "alert_id": 3}`,
/// `{"command": "custom", "name": "page_oncall"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WireCommand", into = "WireCommand")]
pub struct ActuatorCommand {
    pub command: Command,
    pub source: Source,
    pub alert_id: Option<u64>,
}

impl ActuatorCommand {
    pub fn human(command: Command) -> Self {
        Self {
            command,
            source: Source::Human,
            alert_id: None,
        }
    }

    pub fn acknowledge(alert_id: u64) -> Self {
        Self {
            command: Command::Acknowledge,
            source: Source::Human,
            alert_id: Some(alert_id),
        }
    }
}

impl TryFrom<WireCommand> for ActuatorCommand {
    type Error = String;

    fn try_from(w: WireCommand) -> Result<Self, String> {
        let command = match (w.command.as_str(), w.name) {
            ("custom", Some(name)) => {
                if BUILTIN_COMMANDS.contains(&name.as_str()) || name == "acknowledge" || name.is_empty() {
                    return Err(format!("`{name}` cannot be a custom command"));
                }
                Command::Custom(name)
            }
            ("custom", None) => return Err("custom commands need a `name`".into()),
            (c @ ("pause" | "resume" | "terminate" | "acknowledge"), None) => Command::from_name(c),
            (_, Some(_)) => return Err("only custom commands take a `name`".into()),
            (other, None) => return Err(format!("unknown command kind `{other}`")),
        };
        if command == Command::Acknowledge && w.alert_id.is_none() {
            return Err("acknowledge needs an `alert_id`".into());
        }
        Ok(Self {
            command,
            source: w.source,
            alert_id: w.alert_id,
        })
    }
}

impl From<ActuatorCommand> for WireCommand {
    fn from(c: ActuatorCommand) -> Self {
        let (command, name) = match c.command {
            Command::Custom(n) => ("custom".to_owned(), Some(n)),
            other => (other.name().to_owned(), None),
        };
        WireCommand {
            command,
            name,
            alert_id: c.alert_id,
            source: c.source,
        }
    }
}

/// What a callback is invoked with.
#[derive(Debug)]
pub struct Dispatch<'a> {
    pub command: &'a ActuatorCommand,
    /// The alert that triggered an automatic dispatch, or the one named by
    /// a human command.
    pub alert: Option<&'a Alert>,
    pub revision: u64,
}

pub type Callback = Arc<dyn Fn(&Dispatch<'_>) -> Result<(), String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub command: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert_id: Option<u64>,
    pub revision: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub(crate) struct Actuators {
    callbacks: HashMap<String, Callback>,
    audit: VecDeque<AuditEntry>,
    limit: usize,
    next_seq: u64,
}

impl Actuators {
    pub fn new(limit: usize) -> Self {
        let mut callbacks: HashMap<String, Callback> = HashMap::new();
        for name in BUILTIN_COMMANDS {
            callbacks.insert(
                name.to_owned(),
                Arc::new(move |d: &Dispatch<'_>| {
                    log::info!("{name} requested by {:?} at revision {}", d.command.source, d.revision);
                    Ok(())
                }),
            );
        }
        Self {
            callbacks,
            audit: VecDeque::new(),
            limit: limit.max(1),
            next_seq: 0,
        }
    }

    pub fn register(&mut self, name: &str, cb: Callback) {
        self.callbacks.insert(name.to_owned(), cb);
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.callbacks.contains_key(name)
    }

    pub fn callback(&self, cmd: &ActuatorCommand) -> Result<Option<Callback>, EngineError> {
        match &cmd.command {
            Command::Acknowledge => Ok(None),
            c => self
                .callbacks
                .get(c.name())
                .cloned()
                .map(Some)
                .ok_or_else(|| EngineError::UnknownCommand(c.name().to_owned())),
        }
    }

    pub fn record(&mut self, cmd: &ActuatorCommand, revision: u64, outcome: Result<(), String>) -> AuditEntry {
        let entry = AuditEntry {
            seq: self.next_seq,
            command: cmd.command.name().to_owned(),
            source: cmd.source,
            alert_id: cmd.alert_id,
            revision,
            ok: outcome.is_ok(),
            error: outcome.err(),
        };
        self.next_seq += 1;
        if self.audit.len() == self.limit {
            self.audit.pop_front();
        }
        self.audit.push_back(entry.clone());
        entry
    }

    pub fn audit(&self) -> Vec<AuditEntry> {
        self.audit.iter().cloned().collect()
    }
}

/// Runs `cb`, turning panics into errors and logging slow callbacks.
pub(crate) fn invoke(cb: &Callback, d: &Dispatch<'_>) -> Result<(), String> {
    let started = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(|| cb(d))).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "callback panicked".to_owned());
        Err(format!("panic: {msg}"))
    });
    let took = started.elapsed();
    if took > WATCHDOG {
        log::warn!("actuator `{}` took {took:?}; callbacks must not block", d.command.command.name());
    }
    if let Err(e) = &out {
        log::error!("actuator `{}` failed: {e}", d.command.command.name());
    }
    out
}
