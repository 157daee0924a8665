//! Online-learned Markov decision process.
//!
//! [`LearnedMdp`] is the mutable, single-owner model that the analyzer feeds
//! with [`TransitionEvent`]s. It stores raw observation weights only; every
//! derived quantity (transition probabilities, the empirical policy, the
//! policy-induced chain) lives on the immutable [`ModelSnapshot`].

mod model;
mod names;
mod reward;
mod snapshot;

use thiserror::Error;

pub use model::{LearnedMdp, LearnerSettings, Registration, DEFAULT_PRUNE_EPSILON};
pub use names::{is_identifier, ActionId, Interner, StateId};
pub use reward::{RewardOverride, RewardStructure, OBSERVED_REWARDS, STEPS_REWARDS};
pub use snapshot::{Choice, ModelSnapshot, Quad, SnapshotDocument, POLICY_ACTION};

/// Reserved action for the synthetic self-loop on absorbing states.
pub const SELF_LOOP_ACTION: &str = "__self__";
/// Reserved action for declared-state transitions.
pub const GOTO_ACTION: &str = "__goto__";

/// Reserved actions are kept out of the empirical policy statistics.
pub fn is_reserved_action(name: &str) -> bool {
    name == SELF_LOOP_ACTION || name == GOTO_ACTION || name == POLICY_ACTION
}

/// One abstracted observation `state -> action -> next_state`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransitionEvent {
    pub state: String,
    pub action: String,
    pub next_state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl TransitionEvent {
    pub fn new(
        state: impl Into<String>,
        action: impl Into<String>,
        next_state: impl Into<String>,
    ) -> Self {
        Self {
            state: state.into(),
            action: action.into(),
            next_state: next_state.into(),
            reward: None,
            timestamp: None,
        }
    }

    pub fn with_reward(mut self, reward: f64) -> Self {
        self.reward = Some(reward);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("`{0}` is not a valid identifier")]
    InvalidName(String),
    #[error("no observations for {0}")]
    NeverObserved(String),
    #[error("decay factor {0} is outside (0, 1]")]
    InvalidDecay(f64),
    #[error("reward {0} is not finite")]
    NonFiniteReward(f64),
    #[error("invalid reward structure `{name}`: {reason}")]
    InvalidRewardStructure { name: String, reason: String },
    #[error("malformed model document: {0}")]
    Document(String),
}
