//! Quantitative verification of properties against a [`ModelSnapshot`].
//!
//! Unbounded reachability first classifies states whose optimal value is
//! exactly 0 or 1 by graph analysis, then runs value iteration on the rest
//! until the max-norm change between sweeps is at most `epsilon`. Bounded
//! reachability runs exactly `k` sweeps. `G` is computed through its dual:
//! `Pmax[G φ] = 1 − Pmin[F ¬φ]`. Expected rewards are `+inf` unless the goal
//! is reached almost surely under the optimising regime.
//!
//! Dead ends and terminal states are absorbing. Non-convergence is reported
//! in the result (`converged = false`), never as an error.

mod graph;
mod matrix;
mod numeric;

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::mdp::{ModelSnapshot, StateId};
use crate::pctl::{Bound, Extremum, Opt, PathFormula, Property, Query, StateFormula};

use matrix::SparseMdp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSettings {
    /// Absolute stopping tolerance on the max-norm change between sweeps.
    pub epsilon: f64,
    pub max_iterations: u64,
    /// Discount applied to expected rewards only.
    pub gamma: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_iterations: 100_000,
            gamma: 1.0,
        }
    }
}

impl CheckSettings {
    pub fn validate(&self) -> Result<(), CheckError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CheckError::InvalidSettings(format!("epsilon {} must be > 0", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(CheckError::InvalidSettings("max_iterations must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CheckError::InvalidSettings(format!("gamma {} is outside (0, 1]", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckError {
    #[error("the initial state has not been observed")]
    EmptyModel,
    #[error("unknown reward structure `{0}`")]
    UnknownRewardStructure(String),
    #[error("reward structure `{0}` has negative rewards")]
    NegativeReward(String),
    #[error("invalid checker settings: {0}")]
    InvalidSettings(String),
}

/// A checked quantity: a number, `+inf`, or undefined (the check failed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Number(f64),
    Infinity,
    Undefined,
}

impl Value {
    pub fn from_f64(x: f64) -> Self {
        if x == f64::INFINITY {
            Value::Infinity
        } else if x.is_nan() {
            Value::Undefined
        } else {
            Value::Number(x)
        }
    }

    pub fn as_f64(self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(x),
            Value::Infinity => Some(f64::INFINITY),
            Value::Undefined => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Infinity => f.write_str("inf"),
            Value::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Number(x) => s.serialize_f64(*x),
            Value::Infinity => s.serialize_str("inf"),
            Value::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Value::Number(x)),
            Raw::Text(t) if t == "inf" => Ok(Value::Infinity),
            Raw::Text(t) if t == "undefined" => Ok(Value::Undefined),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unexpected value `{t}`"))),
        }
    }
}

/// Outcome of one numeric computation from the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub value: Value,
    pub iterations: u64,
    pub converged: bool,
    /// Last max-norm change, when iteration stopped without converging.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub property: String,
    pub value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satisfied: Option<bool>,
    pub iterations: u64,
    pub converged: bool,
    pub revision: u64,
    pub micros: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl VerificationResult {
    /// A result carrying a per-property error; the value is undefined.
    pub fn failed(property: &str, revision: u64, error: impl fmt::Display) -> Self {
        Self {
            property: property.to_owned(),
            value: Value::Undefined,
            satisfied: None,
            iterations: 0,
            converged: false,
            revision,
            micros: 0,
            residual: None,
            error: Some(error.to_string()),
        }
    }

    /// Sets `satisfied` from `bound`; undefined values leave it unset.
    pub fn apply_bound(&mut self, bound: Bound) {
        self.satisfied = self.value.as_f64().map(|v| bound.op.holds(v, bound.value));
    }

    /// One JSON object, as printed by the CLI and streamed by the API.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("results always serialize")
    }
}

/// Membership vector of the states satisfying `f`.
pub fn state_set(snap: &ModelSnapshot, f: &StateFormula) -> Vec<bool> {
    let sets: Vec<(&str, BTreeSet<usize>)> = f
        .labels()
        .into_iter()
        .map(|l| (l, snap.label_states(l).unwrap_or_default()))
        .collect();
    (0..snap.num_states())
        .map(|s| {
            f.eval(&|label: &str| {
                sets.iter()
                    .find(|(l, _)| *l == label)
                    .is_some_and(|(_, set)| set.contains(&s))
            })
        })
        .collect()
}

/// States with optimal probability of reaching `goal` exactly 0 and exactly 1.
pub fn qualitative_precompute(snap: &ModelSnapshot, goal: &BTreeSet<usize>, opt: Extremum) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let m = SparseMdp::from_snapshot(snap);
    let n = m.num_states();
    let goal: Vec<bool> = (0..n).map(|s| goal.contains(&s)).collect();
    let hold = vec![true; n];
    let (prob0, prob1) = graph::precompute(&m, &hold, &goal, opt == Extremum::Max);
    let collect = |v: Vec<bool>| v.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    (collect(prob0), collect(prob1))
}

fn initial_state(snap: &ModelSnapshot) -> Result<StateId, CheckError> {
    match snap.initial() {
        Some(i) if snap.initial_visited() => Ok(i),
        _ => Err(CheckError::EmptyModel),
    }
}

/// The model a query runs on: the MDP itself or its policy-induced chain.
fn model_for(snap: &ModelSnapshot, opt: Opt) -> (std::borrow::Cow<'_, ModelSnapshot>, bool) {
    match opt {
        Opt::Max => (std::borrow::Cow::Borrowed(snap), true),
        Opt::Min => (std::borrow::Cow::Borrowed(snap), false),
        Opt::Policy => (std::borrow::Cow::Owned(snap.induced_chain()), true),
    }
}

fn quantity(it: numeric::Iterated, at: StateId) -> Quantity {
    Quantity {
        value: Value::from_f64(it.values[at.0]),
        iterations: it.iterations,
        converged: it.converged,
        residual: (!it.converged).then_some(it.residual),
    }
}

/// `P_opt [ hold U<=bound goal ]`; `hold = None` is `true`, i.e. `F goal`.
pub fn reachability_probability(
    snap: &ModelSnapshot,
    hold: Option<&StateFormula>,
    goal: &StateFormula,
    opt: Opt,
    bound: Option<u64>,
    settings: &CheckSettings,
) -> Result<Quantity, CheckError> {
    settings.validate()?;
    let init = initial_state(snap)?;
    let (model, maximize) = model_for(snap, opt);
    let m = SparseMdp::from_snapshot(&model);
    let hold = match hold {
        Some(f) => state_set(&model, f),
        None => vec![true; m.num_states()],
    };
    let goal = state_set(&model, goal);
    let it = match bound {
        Some(k) => numeric::reach_bounded(&m, &hold, &goal, maximize, k),
        None => numeric::reach_unbounded(&m, &hold, &goal, maximize, settings.epsilon, settings.max_iterations),
    };
    Ok(quantity(it, init))
}

/// `P_opt [ G<=bound safe ]` by duality with reachability of `!safe`.
pub fn globally_probability(
    snap: &ModelSnapshot,
    safe: &StateFormula,
    opt: Opt,
    bound: Option<u64>,
    settings: &CheckSettings,
) -> Result<Quantity, CheckError> {
    let dual = match opt {
        Opt::Max => Opt::Min,
        Opt::Min => Opt::Max,
        Opt::Policy => Opt::Policy,
    };
    let unsafe_states = StateFormula::not(safe.clone());
    let mut q = reachability_probability(snap, None, &unsafe_states, dual, bound, settings)?;
    if let Value::Number(p) = q.value {
        q.value = Value::Number(1.0 - p);
    }
    Ok(q)
}

/// `R{structure}_opt [ F goal ]`
pub fn expected_reward(
    snap: &ModelSnapshot,
    structure: &str,
    goal: &StateFormula,
    opt: Opt,
    settings: &CheckSettings,
) -> Result<Quantity, CheckError> {
    settings.validate()?;
    if !snap.has_reward_structure(structure) {
        return Err(CheckError::UnknownRewardStructure(structure.to_owned()));
    }
    let init = initial_state(snap)?;
    let (model, maximize) = model_for(snap, opt);
    let m = SparseMdp::from_snapshot(&model);
    let mut rewards = Vec::with_capacity(m.choice_origin.len());
    for s in 0..m.num_states() {
        for c in m.choices(s) {
            let r = match m.choice_origin[c] {
                Some(i) => model
                    .expected_choice_reward(structure, StateId(s), i)
                    .ok_or_else(|| CheckError::UnknownRewardStructure(structure.to_owned()))?,
                None => 0.0,
            };
            if r < 0.0 {
                return Err(CheckError::NegativeReward(structure.to_owned()));
            }
            rewards.push(r);
        }
    }
    let goal = state_set(&model, goal);
    let it = numeric::total_reward(
        &m,
        &rewards,
        &goal,
        maximize,
        settings.gamma,
        settings.epsilon,
        settings.max_iterations,
    );
    Ok(quantity(it, init))
}

fn compute(snap: &ModelSnapshot, query: &Query, settings: &CheckSettings) -> Result<Quantity, CheckError> {
    let path_quantity = |path: &PathFormula, opt: Opt| match path {
        PathFormula::Eventually { target, bound } => reachability_probability(snap, None, target, opt, *bound, settings),
        PathFormula::Until { hold, target, bound } => {
            reachability_probability(snap, Some(hold), target, opt, *bound, settings)
        }
        PathFormula::Globally { invariant, bound } => globally_probability(snap, invariant, opt, *bound, settings),
    };
    match query {
        Query::Probability { opt, path } => path_quantity(path, *opt),
        Query::ProbabilityBound { opt, path, .. } => path_quantity(path, (*opt).into()),
        Query::Reward { .. } | Query::RewardBound { .. } => {
            let structure = query.reward_structure().unwrap_or(crate::mdp::STEPS_REWARDS);
            let target = query.state_formulas()[0];
            expected_reward(snap, structure, target, query.opt(), settings)
        }
    }
}

/// Checks `property` from the snapshot's initial state. Bound forms also get
/// `satisfied`, compared exactly against the converged value.
pub fn check(snap: &ModelSnapshot, property: &Property, settings: &CheckSettings) -> Result<VerificationResult, CheckError> {
    let started = Instant::now();
    let q = compute(snap, &property.query, settings)?;
    let mut result = VerificationResult {
        property: property.name.clone(),
        value: q.value,
        satisfied: None,
        iterations: q.iterations,
        converged: q.converged,
        revision: snap.revision(),
        micros: started.elapsed().as_micros() as u64,
        residual: q.residual,
        error: None,
    };
    if let Some(bound) = property.query.bound() {
        result.apply_bound(bound);
    }
    Ok(result)
}
