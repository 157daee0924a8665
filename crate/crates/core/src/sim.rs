//! Synthetic agent traces from a ground-truth MDP and behaviour policy.
//!
//! Randomness comes from ChaCha8 seeded with the scenario's 64-bit seed.
//! Episode `k` draws from stream `k` of that generator, so episodes are
//! independent of how many draws earlier episodes made. Each step draws
//! two uniforms in `[0, 1)`: one for the action, one for the successor.
//! Categorical sampling walks outcomes in name order.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{RewardOverride, RewardStructure, TransitionEvent};
use crate::trace::TraceRecord;

pub type Distribution = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("`{0}` is terminal")]
    TerminalState(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub initial: String,
    #[serde(default)]
    pub terminals: Vec<String>,
    pub max_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drift {
    /// Applied before the event with this index is generated.
    pub after_events: u64,
    /// Replaces the whole distribution of each listed state.
    #[serde(default)]
    pub policy: BTreeMap<String, Distribution>,
    /// Replaces the whole distribution of each listed `(state, action)`.
    #[serde(default)]
    pub dynamics: BTreeMap<String, BTreeMap<String, Distribution>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub policy: BTreeMap<String, Distribution>,
    pub dynamics: BTreeMap<String, BTreeMap<String, Distribution>>,
    /// Reward patterns; when present every event carries a reward.
    #[serde(default)]
    pub rewards: Vec<RewardOverride>,
    #[serde(default)]
    pub drift: Vec<Drift>,
    pub seed: u64,
    pub episode: Episode,
    #[serde(default = "default_session")]
    pub session: String,
}

fn default_session() -> String {
    "sim".to_owned()
}

fn check_distribution(what: &str, d: &Distribution, known: &BTreeSet<&str>) -> Result<(), SimError> {
    let bad = |m: String| SimError::InvalidScenario(format!("{what}: {m}"));
    if d.is_empty() {
        return Err(bad("empty distribution".into()));
    }
    for (k, &p) in d {
        if !known.contains(k.as_str()) {
            return Err(bad(format!("unknown name `{k}`")));
        }
        if !(p.is_finite() && p >= 0.0) {
            return Err(bad(format!("probability {p} of `{k}`")));
        }
    }
    let sum: f64 = d.values().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(bad(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

impl Scenario {
    pub fn from_yaml(text: &str) -> Result<Self, SimError> {
        let de = serde_yaml::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de)
            .map_err(|e| SimError::InvalidScenario(format!("{}: {}", e.path(), e.inner())))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidScenario(format!("cannot read {}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }

    pub fn is_terminal(&self, s: &str) -> bool {
        self.episode.terminals.iter().any(|t| t == s)
    }

    fn check_tables(
        &self,
        policy: &BTreeMap<String, Distribution>,
        dynamics: &BTreeMap<String, BTreeMap<String, Distribution>>,
    ) -> Result<(), SimError> {
        let states: BTreeSet<&str> = self.states.iter().map(String::as_str).collect();
        let actions: BTreeSet<&str> = self.actions.iter().map(String::as_str).collect();
        for (s, d) in policy {
            if !states.contains(s.as_str()) {
                return Err(SimError::InvalidScenario(format!("policy: unknown state `{s}`")));
            }
            check_distribution(&format!("policy.{s}"), d, &actions)?;
        }
        for (s, row) in dynamics {
            if !states.contains(s.as_str()) {
                return Err(SimError::InvalidScenario(format!("dynamics: unknown state `{s}`")));
            }
            for (a, d) in row {
                check_distribution(&format!("dynamics.{s}.{a}"), d, &states)?;
            }
        }
        Ok(())
    }

    /// Every non-terminal state needs a policy, and every action it may
    /// pick needs dynamics.
    fn check_complete(
        &self,
        policy: &BTreeMap<String, Distribution>,
        dynamics: &BTreeMap<String, BTreeMap<String, Distribution>>,
    ) -> Result<(), SimError> {
        for s in self.states.iter().filter(|s| !self.is_terminal(s)) {
            let pi = policy
                .get(s)
                .ok_or_else(|| SimError::InvalidScenario(format!("no policy for non-terminal state `{s}`")))?;
            for (a, &p) in pi {
                if p > 0.0 && dynamics.get(s).and_then(|r| r.get(a)).is_none() {
                    return Err(SimError::InvalidScenario(format!("no dynamics for `{s}`/`{a}`")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let uniq: BTreeSet<&String> = self.states.iter().collect();
        if uniq.len() != self.states.len() || self.states.is_empty() {
            return Err(SimError::InvalidScenario("states must be non-empty and unique".into()));
        }
        let uniq: BTreeSet<&String> = self.actions.iter().collect();
        if uniq.len() != self.actions.len() {
            return Err(SimError::InvalidScenario("duplicate action".into()));
        }
        for s in std::iter::once(&self.episode.initial).chain(&self.episode.terminals) {
            if !self.states.contains(s) {
                return Err(SimError::InvalidScenario(format!("episode: unknown state `{s}`")));
            }
        }
        if self.episode.max_steps == 0 {
            return Err(SimError::InvalidScenario("episode.max_steps must be >= 1".into()));
        }
        if self.is_terminal(&self.episode.initial) {
            return Err(SimError::InvalidScenario("the initial state is terminal".into()));
        }
        RewardStructure { name: "sim".into(), per_step: 0.0, overrides: self.rewards.clone() }
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        self.check_tables(&self.policy, &self.dynamics)?;
        self.check_complete(&self.policy, &self.dynamics)?;
        let mut policy = self.policy.clone();
        let mut dynamics = self.dynamics.clone();
        let mut prev = None;
        for d in &self.drift {
            if prev.is_some_and(|p| d.after_events <= p) {
                return Err(SimError::InvalidScenario("drift points must be strictly increasing".into()));
            }
            prev = Some(d.after_events);
            self.check_tables(&d.policy, &d.dynamics)?;
            apply_drift(&mut policy, &mut dynamics, d);
            self.check_complete(&policy, &dynamics)?;
        }
        Ok(())
    }

    fn reward(&self, s: &str, a: &str, t: &str) -> Option<f64> {
        if self.rewards.is_empty() {
            return None;
        }
        let rs = RewardStructure { name: String::new(), per_step: 0.0, overrides: self.rewards.clone() };
        Some(rs.reward(s, a, t))
    }
}

fn apply_drift(
    policy: &mut BTreeMap<String, Distribution>,
    dynamics: &mut BTreeMap<String, BTreeMap<String, Distribution>>,
    d: &Drift,
) {
    for (s, pi) in &d.policy {
        policy.insert(s.clone(), pi.clone());
    }
    for (s, row) in &d.dynamics {
        for (a, dist) in row {
            dynamics.entry(s.clone()).or_default().insert(a.clone(), dist.clone());
        }
    }
}

fn sample<'a>(d: &'a Distribution, u: f64) -> &'a str {
    let mut acc = 0.0;
    let mut last = None;
    for (k, &p) in d {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(k.as_str());
        if u < acc {
            return k;
        }
    }
    last.expect("validated distributions have positive mass")
}

/// One step from `current` under the given tables.
fn step_with(
    sc: &Scenario,
    policy: &BTreeMap<String, Distribution>,
    dynamics: &BTreeMap<String, BTreeMap<String, Distribution>>,
    rng: &mut ChaCha8Rng,
    current: &str,
) -> Result<TransitionEvent, SimError> {
    if sc.is_terminal(current) {
        return Err(SimError::TerminalState(current.to_owned()));
    }
    let pi = policy
        .get(current)
        .ok_or_else(|| SimError::InvalidScenario(format!("no policy for `{current}`")))?;
    let action = sample(pi, rng.random::<f64>());
    let next = sample(&dynamics[current][action], rng.random::<f64>());
    Ok(TransitionEvent {
        state: current.to_owned(),
        action: action.to_owned(),
        next_state: next.to_owned(),
        reward: sc.reward(current, action, next),
        timestamp: None,
    })
}

/// Samples one transition from `current` with the scenario's initial
/// (pre-drift) tables.
pub fn step(sc: &Scenario, rng: &mut ChaCha8Rng, current: &str) -> Result<TransitionEvent, SimError> {
    step_with(sc, &sc.policy, &sc.dynamics, rng, current)
}

/// Deterministic stream of trace records for a validated scenario.
pub struct Simulator<'a> {
    sc: &'a Scenario,
    policy: BTreeMap<String, Distribution>,
    dynamics: BTreeMap<String, BTreeMap<String, Distribution>>,
    rng: ChaCha8Rng,
    episode: u64,
    steps_in_episode: u64,
    current: String,
    emitted: u64,
    next_drift: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(sc: &'a Scenario) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        rng.set_stream(0);
        Self {
            sc,
            policy: sc.policy.clone(),
            dynamics: sc.dynamics.clone(),
            rng,
            episode: 0,
            steps_in_episode: 0,
            current: sc.episode.initial.clone(),
            emitted: 0,
            next_drift: 0,
        }
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    fn restart(&mut self) {
        self.episode += 1;
        self.steps_in_episode = 0;
        self.current = self.sc.episode.initial.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.sc.seed);
        rng.set_stream(self.episode);
        self.rng = rng;
    }
}

impl Iterator for Simulator<'_> {
    type Item = TraceRecord;

    fn next(&mut self) -> Option<TraceRecord> {
        while let Some(d) = self.sc.drift.get(self.next_drift) {
            if d.after_events > self.emitted {
                break;
            }
            apply_drift(&mut self.policy, &mut self.dynamics, d);
            self.next_drift += 1;
        }
        let mut ev = step_with(self.sc, &self.policy, &self.dynamics, &mut self.rng, &self.current)
            .expect("validated scenarios never step from a terminal state");
        ev.timestamp = Some(self.emitted);
        let rec = TraceRecord::from_event(self.emitted, &self.sc.session, &ev);
        self.emitted += 1;
        self.steps_in_episode += 1;
        self.current = ev.next_state;
        if self.sc.is_terminal(&self.current) || self.steps_in_episode >= self.sc.episode.max_steps {
            self.restart();
        }
        Some(rec)
    }
}

pub fn generate_trace(sc: &Scenario, n_events: u64) -> Vec<TraceRecord> {
    Simulator::new(sc).take(n_events as usize).collect()
}
