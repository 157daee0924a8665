use serde::{Deserialize, Serialize};

use super::MdpError;

/// Name of the built-in structure that assigns 1 to every transition.
pub const STEPS_REWARDS: &str = "steps";
/// Name of the structure holding the mean of rewards reported with events.
pub const OBSERVED_REWARDS: &str = "observed";

/// A reward pattern. `None` fields match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_state: Option<String>,
    pub value: f64,
}

impl RewardOverride {
    fn specificity(&self) -> usize {
        [&self.state, &self.action, &self.next_state]
            .iter()
            .filter(|f| f.is_some())
            .count()
    }

    fn matches(&self, state: &str, action: &str, next_state: &str) -> bool {
        self.state.as_deref().is_none_or(|s| s == state)
            && self.action.as_deref().is_none_or(|a| a == action)
            && self.next_state.as_deref().is_none_or(|n| n == next_state)
    }

    fn same_pattern(&self, other: &RewardOverride) -> bool {
        self.state == other.state
            && self.action == other.action
            && self.next_state == other.next_state
    }
}

/// Reward function `R(s, a, s')`: a default per-step value plus overrides.
///
/// The override with the most bound fields wins; among equally specific
/// matches the one declared first wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardStructure {
    pub name: String,
    #[serde(default)]
    pub per_step: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<RewardOverride>,
}

impl RewardStructure {
    pub fn new(name: impl Into<String>, per_step: f64) -> Self {
        Self {
            name: name.into(),
            per_step,
            overrides: Vec::new(),
        }
    }

    pub fn steps() -> Self {
        Self::new(STEPS_REWARDS, 1.0)
    }

    pub fn with_override(mut self, ov: RewardOverride) -> Self {
        self.overrides.push(ov);
        self
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        let invalid = |reason: String| MdpError::InvalidRewardStructure {
            name: self.name.clone(),
            reason,
        };
        if !self.per_step.is_finite() {
            return Err(invalid(format!("per_step {} is not finite", self.per_step)));
        }
        for (i, ov) in self.overrides.iter().enumerate() {
            if !ov.value.is_finite() {
                return Err(invalid(format!("override {i} value {} is not finite", ov.value)));
            }
            if self.overrides[..i].iter().any(|prev| prev.same_pattern(ov)) {
                return Err(invalid(format!("override {i} duplicates an earlier pattern")));
            }
        }
        Ok(())
    }

    pub fn reward(&self, state: &str, action: &str, next_state: &str) -> f64 {
        let mut best: Option<&RewardOverride> = None;
        for ov in &self.overrides {
            if ov.matches(state, action, next_state)
                && best.is_none_or(|b| ov.specificity() > b.specificity())
            {
                best = Some(ov);
            }
        }
        best.map_or(self.per_step, |ov| ov.value)
    }

    /// Smallest value this structure can produce.
    pub fn min_value(&self) -> f64 {
        self.overrides
            .iter()
            .map(|ov| ov.value)
            .fold(self.per_step, f64::min)
    }
}
