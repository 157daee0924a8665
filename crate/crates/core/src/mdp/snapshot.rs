use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::model::LearnedMdp;
use super::names::{ActionId, StateId};
use super::reward::{RewardStructure, OBSERVED_REWARDS, STEPS_REWARDS};
use super::{is_reserved_action, MdpError};

/// The single action of a policy-induced chain.
pub const POLICY_ACTION: &str = "__policy__";

/// One observed `(s, a)` pair: its successor weights, sorted by successor index.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub action: usize,
    /// Weights after smoothing. With smoothing off these are the raw counts.
    pub successors: Vec<(usize, f64)>,
    /// Σ of `successors` weights.
    pub total: f64,
    /// Σ of raw observation weights, used for the empirical policy.
    pub raw_total: f64,
}

impl Choice {
    pub fn probability(&self, next: usize) -> f64 {
        self.successors
            .iter()
            .find(|&&(t, _)| t == next)
            .map_or(0.0, |&(_, w)| w / self.total)
    }

    /// `(successor, probability)` pairs in successor order.
    pub fn distribution(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.successors.iter().map(move |&(t, w)| (t, w / self.total))
    }
}

/// Immutable view of a [`LearnedMdp`] at one revision, with derived
/// probabilities. Cheap to share behind an `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    states: Vec<String>,
    state_index: HashMap<String, usize>,
    actions: Vec<String>,
    action_index: HashMap<String, usize>,
    /// Raw `(s, a, s', weight)` sorted lexicographically.
    counts: Vec<(usize, usize, usize, f64)>,
    rows: Vec<Vec<Choice>>,
    labels: BTreeMap<String, BTreeSet<usize>>,
    initial: Option<usize>,
    terminal: BTreeSet<usize>,
    reward_structures: BTreeMap<String, RewardStructure>,
    /// Expected immediate reward per `(s, a)`, for models that only carry
    /// choice-level rewards (imported or policy-induced).
    choice_rewards: BTreeMap<String, BTreeMap<(usize, usize), f64>>,
    /// `(s, a, s') -> (sum, weight)` of rewards reported with events.
    observed_rewards: BTreeMap<(usize, usize, usize), (f64, f64)>,
    smoothing_alpha: f64,
    revision: u64,
}

impl ModelSnapshot {
    pub(super) fn from_model(model: &LearnedMdp) -> Self {
        let states = model.states.names().to_vec();
        let actions = model.actions.names().to_vec();
        let counts = model
            .counts
            .iter()
            .flat_map(|(&(s, a), row)| row.iter().map(move |(&t, &w)| (s, a, t, w)))
            .collect();
        let labels = static_labels(model);
        let mut snap = Self::assemble(Parts {
            states,
            actions,
            counts,
            labels,
            initial: model.states.get(&model.initial),
            terminal: model
                .terminal
                .iter()
                .filter_map(|t| model.states.get(t))
                .collect(),
            reward_structures: model.reward_structures.clone(),
            choice_rewards: BTreeMap::new(),
            observed_rewards: model.observed_rewards.clone(),
            smoothing_alpha: model.settings.smoothing_alpha,
            revision: model.revision,
        });
        // every observed post-state of a labelled action carries the label
        for (action, label) in &model.action_labels {
            if let Some(a) = model.actions.get(action) {
                let targets: Vec<usize> = snap
                    .counts
                    .iter()
                    .filter(|c| c.1 == a)
                    .map(|c| c.2)
                    .collect();
                snap.labels.entry(label.clone()).or_default().extend(targets);
            }
        }
        snap
    }

    fn assemble(parts: Parts) -> Self {
        let n = parts.states.len();
        let alpha = parts.smoothing_alpha;
        let mut rows: Vec<Vec<Choice>> = vec![Vec::new(); n];
        let mut i = 0;
        let counts = parts.counts;
        while i < counts.len() {
            let (s, a, _, _) = counts[i];
            let mut j = i;
            let mut raw: Vec<(usize, f64)> = Vec::new();
            while j < counts.len() && counts[j].0 == s && counts[j].1 == a {
                raw.push((counts[j].2, counts[j].3));
                j += 1;
            }
            let raw_total: f64 = raw.iter().map(|&(_, w)| w).sum();
            let successors: Vec<(usize, f64)> = if alpha > 0.0 {
                (0..n)
                    .map(|t| {
                        let w = raw.iter().find(|&&(u, _)| u == t).map_or(0.0, |&(_, w)| w);
                        (t, w + alpha)
                    })
                    .collect()
            } else {
                raw
            };
            let total = successors.iter().map(|&(_, w)| w).sum();
            rows[s].push(Choice {
                action: a,
                successors,
                total,
                raw_total,
            });
            i = j;
        }
        let state_index = index_of(&parts.states);
        let action_index = index_of(&parts.actions);
        Self {
            states: parts.states,
            state_index,
            actions: parts.actions,
            action_index,
            counts,
            rows,
            labels: parts.labels,
            initial: parts.initial,
            terminal: parts.terminal,
            reward_structures: parts.reward_structures,
            choice_rewards: parts.choice_rewards,
            observed_rewards: parts.observed_rewards,
            smoothing_alpha: alpha,
            revision: parts.revision,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.state_index.get(name).copied().map(StateId)
    }

    pub fn action_id(&self, name: &str) -> Option<ActionId> {
        self.action_index.get(name).copied().map(ActionId)
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.states[s.0]
    }

    pub fn action_name(&self, a: ActionId) -> &str {
        &self.actions[a.0]
    }

    pub fn initial(&self) -> Option<StateId> {
        self.initial.map(StateId)
    }

    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminal.contains(&s.0)
    }

    pub fn terminal(&self) -> impl Iterator<Item = StateId> + '_ {
        self.terminal.iter().copied().map(StateId)
    }

    /// Raw `(s, a, s', weight)` quadruples in lexicographic order.
    pub fn counts(&self) -> &[(usize, usize, usize, f64)] {
        &self.counts
    }

    /// Observed choices of state `s`, sorted by action index.
    pub fn choices(&self, s: StateId) -> &[Choice] {
        &self.rows[s.0]
    }

    pub fn labels(&self) -> &BTreeMap<String, BTreeSet<usize>> {
        &self.labels
    }

    /// States carrying `label`. Bare state names act as singleton labels.
    pub fn label_states(&self, label: &str) -> Option<BTreeSet<usize>> {
        if let Some(set) = self.labels.get(label) {
            return Some(set.clone());
        }
        self.state_index.get(label).map(|&s| BTreeSet::from([s]))
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.contains_key(label) || self.state_index.contains_key(label)
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }

    /// Whether every derived weight is an integer, so probabilities can be
    /// written as exact fractions.
    pub fn has_integral_weights(&self) -> bool {
        self.rows
            .iter()
            .flatten()
            .flat_map(|c| c.successors.iter())
            .all(|&(_, w)| w.fract() == 0.0 && w < 9.007_199_254_740_992e15)
    }

    /// Whether the initial state occurs in any recorded observation.
    pub fn initial_visited(&self) -> bool {
        match self.initial {
            None => false,
            Some(i) => self.counts.iter().any(|c| c.0 == i || c.2 == i),
        }
    }

    fn choice(&self, s: StateId, a: ActionId) -> Option<&Choice> {
        self.rows
            .get(s.0)?
            .iter()
            .find(|c| c.action == a.0)
    }

    /// `P(s2 | s, a)`. Fails with `NeverObserved` when `(s, a)` has no weight,
    /// which is distinct from a probability of zero.
    pub fn transition_probability(&self, s: StateId, a: ActionId, s2: StateId) -> Result<f64, MdpError> {
        self.choice(s, a)
            .map(|c| c.probability(s2.0))
            .ok_or_else(|| self.never_observed(s, Some(a)))
    }

    /// Actions with positive weight in `s`. Empty marks a dead end.
    pub fn enabled_actions(&self, s: StateId) -> Vec<ActionId> {
        self.rows
            .get(s.0)
            .map(|row| row.iter().map(|c| ActionId(c.action)).collect())
            .unwrap_or_default()
    }

    /// Observed action frequencies in `s`, excluding reserved actions.
    pub fn empirical_policy(&self, s: StateId) -> Result<BTreeMap<ActionId, f64>, MdpError> {
        let row = self.rows.get(s.0).map(Vec::as_slice).unwrap_or_default();
        let real: Vec<&Choice> = row
            .iter()
            .filter(|c| !is_reserved_action(&self.actions[c.action]))
            .collect();
        let sum: f64 = real.iter().map(|c| c.raw_total).sum();
        if real.is_empty() || sum <= 0.0 {
            return Err(self.never_observed(s, None));
        }
        Ok(real
            .into_iter()
            .map(|c| (ActionId(c.action), c.raw_total / sum))
            .collect())
    }

    fn never_observed(&self, s: StateId, a: Option<ActionId>) -> MdpError {
        let state = self.states.get(s.0).map_or("?", String::as_str);
        match a {
            Some(a) => MdpError::NeverObserved(format!(
                "state `{state}` under action `{}`",
                self.actions.get(a.0).map_or("?", String::as_str)
            )),
            None => MdpError::NeverObserved(format!("state `{state}`")),
        }
    }

    /// Names of every reward structure this snapshot can evaluate.
    pub fn reward_structure_names(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = self.reward_structures.keys().cloned().collect();
        names.extend(self.choice_rewards.keys().cloned());
        names.insert(OBSERVED_REWARDS.to_owned());
        names
    }

    pub fn has_reward_structure(&self, name: &str) -> bool {
        name == OBSERVED_REWARDS
            || self.reward_structures.contains_key(name)
            || self.choice_rewards.contains_key(name)
    }

    pub fn reward_structures(&self) -> impl Iterator<Item = &RewardStructure> {
        self.reward_structures.values()
    }

    /// Expected immediate reward `Σ_{s'} P(s'|s,a) · R(s,a,s')` of the choice
    /// at `index` in `choices(s)`. `None` when the structure is unknown.
    pub fn expected_choice_reward(&self, structure: &str, s: StateId, index: usize) -> Option<f64> {
        let choice = &self.rows[s.0][index];
        if let Some(table) = self.choice_rewards.get(structure) {
            return Some(table.get(&(s.0, choice.action)).copied().unwrap_or(0.0));
        }
        if structure == OBSERVED_REWARDS {
            return Some(
                choice
                    .distribution()
                    .map(|(t, p)| {
                        let mean = self
                            .observed_rewards
                            .get(&(s.0, choice.action, t))
                            .map_or(0.0, |&(sum, w)| sum / w);
                        p * mean
                    })
                    .sum(),
            );
        }
        let rs = self.reward_structures.get(structure)?;
        let (sn, an) = (&self.states[s.0], &self.actions[choice.action]);
        if rs.overrides.is_empty() {
            return Some(rs.per_step);
        }
        Some(
            choice
                .distribution()
                .map(|(t, p)| p * rs.reward(sn, an, &self.states[t]))
                .sum(),
        )
    }

    /// Markov chain induced by the empirical policy: one implicit action per
    /// state, `P(s'|s) = Σ_a π(a|s) P(s'|s,a)`. Rewards compose the same way.
    ///
    /// The mixture weights are the raw observation totals of every observed
    /// action, reserved ones included, since those are real steps of the
    /// trace.
    pub fn induced_chain(&self) -> ModelSnapshot {
        let n = self.states.len();
        let exact = self.smoothing_alpha == 0.0;
        let mut counts = Vec::new();
        let mut per_state_pi: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (s, row) in self.rows.iter().enumerate() {
            let sum: f64 = row.iter().map(|c| c.raw_total).sum();
            let pi: Vec<f64> = row.iter().map(|c| c.raw_total / sum).collect();
            if !row.is_empty() {
                let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
                for (c, &p) in row.iter().zip(&pi) {
                    for &(t, w) in &c.successors {
                        // raw weights sum directly: Σ_a (W_a/W)(w/W_a) = Σ_a w / W
                        let add = if exact { w } else { p * w / c.total };
                        *merged.entry(t).or_insert(0.0) += add;
                    }
                }
                counts.extend(merged.into_iter().map(|(t, w)| (s, 0, t, w)));
            }
            per_state_pi.push(pi);
        }
        let mut choice_rewards = BTreeMap::new();
        for name in self.reward_structure_names() {
            let mut table = BTreeMap::new();
            for (s, pi) in per_state_pi.iter().enumerate() {
                if pi.is_empty() {
                    continue;
                }
                let r: f64 = pi
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p * self.expected_choice_reward(&name, StateId(s), i).unwrap_or(0.0))
                    .sum();
                table.insert((s, 0), r);
            }
            choice_rewards.insert(name, table);
        }
        Self::assemble(Parts {
            states: self.states.clone(),
            actions: vec![POLICY_ACTION.to_owned()],
            counts,
            labels: self.labels.clone(),
            initial: self.initial,
            terminal: self.terminal.clone(),
            reward_structures: BTreeMap::new(),
            choice_rewards,
            observed_rewards: BTreeMap::new(),
            smoothing_alpha: 0.0,
            revision: self.revision,
        })
    }

    /// Builds a snapshot from explicit parts. Used by importers.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        states: Vec<String>,
        actions: Vec<String>,
        mut counts: Vec<(usize, usize, usize, f64)>,
        labels: BTreeMap<String, BTreeSet<usize>>,
        initial: Option<usize>,
        reward_structures: Vec<RewardStructure>,
        choice_rewards: BTreeMap<String, BTreeMap<(usize, usize), f64>>,
        revision: u64,
    ) -> Result<Self, MdpError> {
        counts.sort_by(|x, y| (x.0, x.1, x.2).cmp(&(y.0, y.1, y.2)));
        let doc = SnapshotDocument {
            revision,
            states,
            actions,
            initial,
            terminal: Vec::new(),
            counts: counts.into_iter().map(|c| Quad(c.0, c.1, c.2, c.3)).collect(),
            labels: labels
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
            reward_structures,
            choice_rewards: choice_rewards
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().map(|((s, a), r)| (s, a, r)).collect()))
                .collect(),
            observed_rewards: Vec::new(),
            smoothing_alpha: 0.0,
        };
        Self::from_document(doc)
    }

    pub fn to_document(&self) -> SnapshotDocument {
        SnapshotDocument {
            revision: self.revision,
            states: self.states.clone(),
            actions: self.actions.clone(),
            initial: self.initial,
            terminal: self.terminal.iter().copied().collect(),
            counts: self.counts.iter().map(|c| Quad(c.0, c.1, c.2, c.3)).collect(),
            labels: self
                .labels
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().copied().collect()))
                .collect(),
            reward_structures: self.reward_structures.values().cloned().collect(),
            choice_rewards: self
                .choice_rewards
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|(&(s, a), &r)| (s, a, r)).collect()))
                .collect(),
            observed_rewards: self
                .observed_rewards
                .iter()
                .map(|(&(s, a, t), &(sum, w))| (s, a, t, sum, w))
                .collect(),
            smoothing_alpha: self.smoothing_alpha,
        }
    }

    pub fn from_document(doc: SnapshotDocument) -> Result<Self, MdpError> {
        let bad = |msg: String| MdpError::Document(msg);
        let n = doc.states.len();
        let m = doc.actions.len();
        if index_of(&doc.states).len() != n {
            return Err(bad("duplicate state names".into()));
        }
        if index_of(&doc.actions).len() != m {
            return Err(bad("duplicate action names".into()));
        }
        let mut prev: Option<(usize, usize, usize)> = None;
        for q in &doc.counts {
            if q.0 >= n || q.2 >= n || q.1 >= m {
                return Err(bad(format!("count [{}, {}, {}] is out of range", q.0, q.1, q.2)));
            }
            if !(q.3.is_finite() && q.3 > 0.0) {
                return Err(bad(format!("count [{}, {}, {}] has weight {}", q.0, q.1, q.2, q.3)));
            }
            let key = (q.0, q.1, q.2);
            if prev.is_some_and(|p| p >= key) {
                return Err(bad("counts are not strictly sorted".into()));
            }
            prev = Some(key);
        }
        if doc.initial.is_some_and(|i| i >= n) {
            return Err(bad("initial state is out of range".into()));
        }
        if doc.terminal.iter().chain(doc.labels.values().flatten()).any(|&s| s >= n) {
            return Err(bad("label or terminal state is out of range".into()));
        }
        if !(doc.smoothing_alpha.is_finite() && doc.smoothing_alpha >= 0.0) {
            return Err(bad("smoothing_alpha must be a nonnegative number".into()));
        }
        let mut reward_structures = BTreeMap::new();
        for rs in doc.reward_structures {
            rs.validate()?;
            reward_structures.insert(rs.name.clone(), rs);
        }
        reward_structures
            .entry(STEPS_REWARDS.to_owned())
            .or_insert_with(RewardStructure::steps);
        let mut choice_rewards = BTreeMap::new();
        for (name, entries) in doc.choice_rewards {
            let mut table = BTreeMap::new();
            for (s, a, r) in entries {
                if s >= n || a >= m || !r.is_finite() {
                    return Err(bad(format!("reward table `{name}` has an invalid entry")));
                }
                table.insert((s, a), r);
            }
            choice_rewards.insert(name, table);
        }
        let mut observed_rewards = BTreeMap::new();
        for (s, a, t, sum, w) in doc.observed_rewards {
            if s >= n || a >= m || t >= n || !sum.is_finite() || !(w.is_finite() && w > 0.0) {
                return Err(bad("observed reward entry is invalid".into()));
            }
            observed_rewards.insert((s, a, t), (sum, w));
        }
        Ok(Self::assemble(Parts {
            states: doc.states,
            actions: doc.actions,
            counts: doc.counts.into_iter().map(|q| (q.0, q.1, q.2, q.3)).collect(),
            labels: doc
                .labels
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
            initial: doc.initial,
            terminal: doc.terminal.into_iter().collect(),
            reward_structures,
            choice_rewards,
            observed_rewards,
            smoothing_alpha: doc.smoothing_alpha,
            revision: doc.revision,
        }))
    }

    /// Canonical JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("snapshot documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let doc: SnapshotDocument =
            serde_json::from_str(text).map_err(|e| MdpError::Document(e.to_string()))?;
        Self::from_document(doc)
    }
}

struct Parts {
    states: Vec<String>,
    actions: Vec<String>,
    counts: Vec<(usize, usize, usize, f64)>,
    labels: BTreeMap<String, BTreeSet<usize>>,
    initial: Option<usize>,
    terminal: BTreeSet<usize>,
    reward_structures: BTreeMap<String, RewardStructure>,
    choice_rewards: BTreeMap<String, BTreeMap<(usize, usize), f64>>,
    observed_rewards: BTreeMap<(usize, usize, usize), (f64, f64)>,
    smoothing_alpha: f64,
    revision: u64,
}

fn index_of(names: &[String]) -> HashMap<String, usize> {
    names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect()
}

fn static_labels(model: &LearnedMdp) -> BTreeMap<String, BTreeSet<usize>> {
    model
        .labels
        .iter()
        .map(|(label, states)| {
            let set = states.iter().filter_map(|s| model.states.get(s)).collect();
            (label.clone(), set)
        })
        .collect()
}

/// A `[s, a, s', weight]` count entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad(pub usize, pub usize, pub usize, pub f64);

/// Serialized form of a [`ModelSnapshot`]; this is the `GET /api/v1/model`
/// payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotDocument {
    pub revision: u64,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub initial: Option<usize>,
    #[serde(default)]
    pub terminal: Vec<usize>,
    pub counts: Vec<Quad>,
    #[serde(default)]
    pub labels: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub reward_structures: Vec<RewardStructure>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub choice_rewards: BTreeMap<String, Vec<(usize, usize, f64)>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observed_rewards: Vec<(usize, usize, usize, f64, f64)>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub smoothing_alpha: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}
