//! The YAML configuration: declared states, actions, labels, rewards,
//! properties with thresholds, and learner/checker/analysis settings.
//!
//! ```yaml
//! states:
//!   - name: start
//!   - name: done
//!     labels: [goal]
//! actions: [work]
//! initial: start
//! terminal: [done]
//! properties:
//!   - name: reach
//!     formula: 'Pmax=? [ F "goal" ]'
//!     threshold: { op: ">=", value: 0.9 }
//! ```

mod abstraction;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::CheckSettings;
use crate::mdp::{
    is_identifier, is_reserved_action, LearnedMdp, LearnerSettings, ModelSnapshot, Registration, RewardStructure,
    DEFAULT_PRUNE_EPSILON, OBSERVED_REWARDS, STEPS_REWARDS,
};
use crate::pctl::{validate, Bound, CheckMode, Property, Vocabulary};

pub use abstraction::{abstract_event, AbstractionError, RawEvent, RawKind, SessionTracker, Tracker};

/// State that unknown tool outcomes map to in open mode.
pub const OTHER_STATE: &str = "__other__";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    /// Location in the document, e.g. `properties[2].formula`. Empty for
    /// errors about the document as a whole.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum StateEntry {
    Name(String),
    Full(StateDecl),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDecl {
    pub name: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    #[default]
    Warn,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProperty {
    name: String,
    formula: String,
    #[serde(default)]
    threshold: Option<Bound>,
    #[serde(default)]
    on_violation: Option<String>,
    #[serde(default)]
    severity: Severity,
}

/// A configured property with its effective threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertySpec {
    pub property: Property,
    pub formula: String,
    /// From the formula itself (`Pmax>=0.9 [...]`) or from `threshold:`.
    pub threshold: Option<Bound>,
    /// Actuator command dispatched when the threshold is violated.
    pub on_violation: Option<String>,
    pub severity: Severity,
}

impl PropertySpec {
    pub fn name(&self) -> &str {
        &self.property.name
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySettings {
    pub lambda: f64,
    /// Apply the decay once every this many applied events.
    pub every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub mode: Registration,
    pub smoothing_alpha: f64,
    pub decay: Option<DecaySettings>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            mode: Registration::Strict,
            smoothing_alpha: 0.0,
            decay: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckerConfig {
    pub epsilon: f64,
    pub max_iterations: u64,
    pub gamma: f64,
    pub mode: CheckMode,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        let s = CheckSettings::default();
        Self {
            epsilon: s.epsilon,
            max_iterations: s.max_iterations,
            gamma: s.gamma,
            mode: CheckMode::Both,
        }
    }
}

impl CheckerConfig {
    pub fn settings(&self) -> CheckSettings {
        CheckSettings {
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub every_events: u64,
    pub also_every_ms: Option<u64>,
    /// Retained results and alerts.
    pub history: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            every_events: 25,
            also_every_ms: None,
            history: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueFullPolicy {
    #[default]
    Block,
    DropOldest,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    pub capacity: usize,
    pub on_full: QueueFullPolicy,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            on_full: QueueFullPolicy::Block,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    states: Vec<StateEntry>,
    #[serde(default)]
    actions: Vec<String>,
    initial: String,
    #[serde(default)]
    terminal: Vec<String>,
    #[serde(default)]
    action_labels: BTreeMap<String, String>,
    #[serde(default)]
    outcomes: BTreeMap<String, String>,
    #[serde(default)]
    rewards: Vec<RewardStructure>,
    #[serde(default)]
    properties: Vec<RawProperty>,
    #[serde(default)]
    learner: LearnerConfig,
    #[serde(default)]
    checker: CheckerConfig,
    #[serde(default)]
    analysis: AnalysisConfig,
    #[serde(default)]
    queue: QueueConfig,
}

/// A validated configuration. Immutable after [`load_config`].
#[derive(Debug, Clone, PartialEq)]
pub struct GuardConfig {
    pub states: Vec<StateDecl>,
    pub actions: Vec<String>,
    pub initial: String,
    pub terminal: Vec<String>,
    /// Action name to the label carried by every post-state of that action.
    pub action_labels: BTreeMap<String, String>,
    /// Tool outcome to the state it leads to.
    pub outcomes: BTreeMap<String, String>,
    pub rewards: Vec<RewardStructure>,
    pub properties: Vec<PropertySpec>,
    pub learner: LearnerConfig,
    pub checker: CheckerConfig,
    pub analysis: AnalysisConfig,
    pub queue: QueueConfig,
}

/// Parses and fully validates a configuration document.
pub fn load_config(text: &str) -> Result<GuardConfig, ConfigError> {
    let de = serde_yaml::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        ConfigError::at(path, e.into_inner())
    })?;
    GuardConfig::from_raw(raw)
}

impl GuardConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
        load_config(&text)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let states: Vec<StateDecl> = raw
            .states
            .into_iter()
            .map(|e| match e {
                StateEntry::Name(name) => StateDecl { name, labels: Vec::new() },
                StateEntry::Full(d) => d,
            })
            .collect();
        let mut state_names = BTreeSet::new();
        if states.is_empty() {
            return Err(ConfigError::at("states", "at least one state is required"));
        }
        for (i, s) in states.iter().enumerate() {
            if !is_identifier(&s.name) {
                return Err(ConfigError::at(format!("states[{i}].name"), format!("`{}` is not a valid name", s.name)));
            }
            if !state_names.insert(s.name.as_str()) {
                return Err(ConfigError::at(format!("states[{i}].name"), format!("duplicate state `{}`", s.name)));
            }
            for (j, l) in s.labels.iter().enumerate() {
                if l.is_empty() || l.contains('"') {
                    return Err(ConfigError::at(format!("states[{i}].labels[{j}]"), format!("invalid label `{l}`")));
                }
            }
        }
        let mut action_names = BTreeSet::new();
        for (i, a) in raw.actions.iter().enumerate() {
            if !is_identifier(a) || is_reserved_action(a) {
                return Err(ConfigError::at(format!("actions[{i}]"), format!("`{a}` is not a valid action name")));
            }
            if !action_names.insert(a.as_str()) {
                return Err(ConfigError::at(format!("actions[{i}]"), format!("duplicate action `{a}`")));
            }
        }
        if !state_names.contains(raw.initial.as_str()) {
            return Err(ConfigError::at("initial", format!("unknown state `{}`", raw.initial)));
        }
        for (i, t) in raw.terminal.iter().enumerate() {
            if !state_names.contains(t.as_str()) {
                return Err(ConfigError::at(format!("terminal[{i}]"), format!("unknown state `{t}`")));
            }
        }
        for (a, l) in &raw.action_labels {
            if !action_names.contains(a.as_str()) {
                return Err(ConfigError::at(format!("action_labels.{a}"), format!("unknown action `{a}`")));
            }
            if l.is_empty() || l.contains('"') {
                return Err(ConfigError::at(format!("action_labels.{a}"), format!("invalid label `{l}`")));
            }
        }
        for (o, s) in &raw.outcomes {
            if !state_names.contains(s.as_str()) {
                return Err(ConfigError::at(format!("outcomes.{o}"), format!("unknown state `{s}`")));
            }
        }

        let mut reward_names = BTreeSet::from([STEPS_REWARDS.to_owned(), OBSERVED_REWARDS.to_owned()]);
        for (i, r) in raw.rewards.iter().enumerate() {
            let path = format!("rewards[{i}]");
            if !reward_names.insert(r.name.clone()) {
                return Err(ConfigError::at(format!("{path}.name"), format!("duplicate reward structure `{}`", r.name)));
            }
            r.validate().map_err(|e| ConfigError::at(&path, e))?;
            for (j, ov) in r.overrides.iter().enumerate() {
                let p = format!("{path}.overrides[{j}]");
                for s in [&ov.state, &ov.next_state].into_iter().flatten() {
                    if !state_names.contains(s.as_str()) {
                        return Err(ConfigError::at(&p, format!("unknown state `{s}`")));
                    }
                }
                if let Some(a) = &ov.action {
                    if !action_names.contains(a.as_str()) {
                        return Err(ConfigError::at(&p, format!("unknown action `{a}`")));
                    }
                }
            }
        }

        let l = &raw.learner;
        if !(l.smoothing_alpha >= 0.0 && l.smoothing_alpha.is_finite()) {
            return Err(ConfigError::at("learner.smoothing_alpha", "must be a finite number >= 0"));
        }
        if let Some(d) = &l.decay {
            if !(d.lambda > 0.0 && d.lambda <= 1.0) {
                return Err(ConfigError::at("learner.decay.lambda", "must be in (0, 1]"));
            }
            if d.every == 0 {
                return Err(ConfigError::at("learner.decay.every", "must be >= 1"));
            }
        }
        raw.checker
            .settings()
            .validate()
            .map_err(|e| ConfigError::at("checker", e))?;
        if raw.analysis.every_events == 0 {
            return Err(ConfigError::at("analysis.every_events", "must be >= 1"));
        }
        if raw.analysis.also_every_ms == Some(0) {
            return Err(ConfigError::at("analysis.also_every_ms", "must be >= 1"));
        }
        if raw.queue.capacity == 0 {
            return Err(ConfigError::at("queue.capacity", "must be >= 1"));
        }

        let mut vocab = Vocabulary::new(raw.checker.mode);
        vocab.open = l.mode == Registration::Open;
        vocab.labels.extend(states.iter().map(|s| s.name.clone()));
        vocab.labels.extend(states.iter().flat_map(|s| s.labels.iter().cloned()));
        vocab.labels.extend(raw.action_labels.values().cloned());
        vocab.reward_structures = reward_names;

        let mut property_names = BTreeSet::new();
        let mut properties = Vec::with_capacity(raw.properties.len());
        for (i, p) in raw.properties.into_iter().enumerate() {
            let path = format!("properties[{i}]");
            if p.name.is_empty() {
                return Err(ConfigError::at(format!("{path}.name"), "property names must not be empty"));
            }
            if !property_names.insert(p.name.clone()) {
                return Err(ConfigError::at(format!("{path}.name"), format!("duplicate property `{}`", p.name)));
            }
            let property =
                Property::parse(p.name.clone(), &p.formula).map_err(|e| ConfigError::at(format!("{path}.formula"), e))?;
            validate(&property.query, &vocab).map_err(|e| ConfigError::at(format!("{path}.formula"), e))?;
            let threshold = match (property.query.bound(), p.threshold) {
                (Some(_), Some(_)) => {
                    return Err(ConfigError::at(
                        format!("{path}.threshold"),
                        "the formula already has a bound; drop `threshold`",
                    ))
                }
                (Some(b), None) => Some(b),
                (None, Some(t)) => {
                    check_threshold(&t, property.query.is_reward())
                        .map_err(|m| ConfigError::at(format!("{path}.threshold"), m))?;
                    Some(t)
                }
                (None, None) => None,
            };
            if let Some(cmd) = &p.on_violation {
                if threshold.is_none() {
                    return Err(ConfigError::at(
                        format!("{path}.on_violation"),
                        "on_violation needs a threshold",
                    ));
                }
                if !is_identifier(cmd) {
                    return Err(ConfigError::at(format!("{path}.on_violation"), format!("invalid command `{cmd}`")));
                }
            }
            properties.push(PropertySpec {
                property,
                formula: p.formula,
                threshold,
                on_violation: p.on_violation,
                severity: p.severity,
            });
        }

        Ok(GuardConfig {
            states,
            actions: raw.actions,
            initial: raw.initial,
            terminal: raw.terminal,
            action_labels: raw.action_labels,
            outcomes: raw.outcomes,
            rewards: raw.rewards,
            properties,
            learner: raw.learner,
            checker: raw.checker,
            analysis: raw.analysis,
            queue: raw.queue,
        })
    }

    pub fn has_state(&self, name: &str) -> bool {
        self.states.iter().any(|s| s.name == name)
    }

    pub fn has_action(&self, name: &str) -> bool {
        self.actions.iter().any(|a| a == name)
    }

    pub fn is_open(&self) -> bool {
        self.learner.mode == Registration::Open
    }

    pub fn check_settings(&self) -> CheckSettings {
        self.checker.settings()
    }

    /// A fresh model with every declared name, label, terminal and reward
    /// structure registered, in declaration order.
    pub fn learned_mdp(&self) -> LearnedMdp {
        let mut m = LearnedMdp::new(
            self.initial.clone(),
            LearnerSettings {
                registration: self.learner.mode,
                smoothing_alpha: self.learner.smoothing_alpha,
                prune_epsilon: DEFAULT_PRUNE_EPSILON,
            },
        );
        for s in &self.states {
            m.declare_state(&s.name).expect("validated");
            for l in &s.labels {
                m.add_label(l, &s.name);
            }
        }
        for a in &self.actions {
            m.declare_action(a).expect("validated");
        }
        for (a, l) in &self.action_labels {
            m.set_action_label(a, l);
        }
        for t in &self.terminal {
            m.add_terminal(t);
        }
        for r in &self.rewards {
            m.add_reward_structure(r.clone()).expect("validated");
        }
        m
    }
}

fn check_threshold(t: &Bound, reward: bool) -> Result<(), String> {
    if !t.value.is_finite() {
        return Err(format!("threshold {} is not finite", t.value));
    }
    if reward && t.value < 0.0 {
        return Err(format!("reward threshold {} must be >= 0", t.value));
    }
    if !reward && !(0.0..=1.0).contains(&t.value) {
        return Err(format!("probability threshold {} is outside [0, 1]", t.value));
    }
    Ok(())
}

/// Label name to the states carrying it: declared state labels plus the
/// observed post-states of labelled actions.
pub fn label_states(cfg: &GuardConfig, snap: &ModelSnapshot) -> BTreeMap<String, BTreeSet<usize>> {
    let mut out: BTreeMap<String, BTreeSet<usize>> = snap.labels().clone();
    for s in &cfg.states {
        for l in &s.labels {
            out.entry(l.clone()).or_default();
        }
    }
    for l in cfg.action_labels.values() {
        out.entry(l.clone()).or_default();
    }
    out
}
