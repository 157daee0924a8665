use std::collections::{BTreeMap, BTreeSet};

use super::names::{is_identifier, Interner};
use super::reward::{RewardStructure, OBSERVED_REWARDS, STEPS_REWARDS};
use super::snapshot::ModelSnapshot;
use super::{MdpError, TransitionEvent, GOTO_ACTION};

pub const DEFAULT_PRUNE_EPSILON: f64 = 1e-9;

/// How unknown state/action names are handled by [`LearnedMdp::record_transition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Registration {
    /// Unknown names are rejected.
    #[default]
    Strict,
    /// Unknown names are registered on first sight.
    Open,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSettings {
    pub registration: Registration,
    /// Laplace pseudo-count added to every state as a successor of an
    /// observed `(s, a)` when snapshots are derived. Zero disables smoothing.
    pub smoothing_alpha: f64,
    /// Weights below this are removed after a decay step.
    pub prune_epsilon: f64,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        Self {
            registration: Registration::Strict,
            smoothing_alpha: 0.0,
            prune_epsilon: DEFAULT_PRUNE_EPSILON,
        }
    }
}

/// The mutable model. Only raw observation weights are stored; the totals
/// per `(s, a)` are always recomputed from them, so `action_counts` equals
/// the sum of `counts` exactly.
#[derive(Debug, Clone)]
pub struct LearnedMdp {
    pub(super) settings: LearnerSettings,
    pub(super) states: Interner,
    pub(super) actions: Interner,
    /// `(s, a) -> s' -> weight`
    pub(super) counts: BTreeMap<(usize, usize), BTreeMap<usize, f64>>,
    /// `(s, a, s') -> (reward sum, weight of reward-carrying events)`
    pub(super) observed_rewards: BTreeMap<(usize, usize, usize), (f64, f64)>,
    pub(super) labels: BTreeMap<String, BTreeSet<String>>,
    pub(super) action_labels: BTreeMap<String, String>,
    pub(super) initial: String,
    pub(super) terminal: BTreeSet<String>,
    pub(super) reward_structures: BTreeMap<String, RewardStructure>,
    pub(super) revision: u64,
}

impl LearnedMdp {
    pub fn new(initial: impl Into<String>, settings: LearnerSettings) -> Self {
        let mut reward_structures = BTreeMap::new();
        reward_structures.insert(STEPS_REWARDS.to_owned(), RewardStructure::steps());
        Self {
            settings,
            states: Interner::new(),
            actions: Interner::new(),
            counts: BTreeMap::new(),
            observed_rewards: BTreeMap::new(),
            labels: BTreeMap::new(),
            action_labels: BTreeMap::new(),
            initial: initial.into(),
            terminal: BTreeSet::new(),
            reward_structures,
            revision: 0,
        }
    }

    /// An open-registration model, convenient for tests and exploration.
    pub fn open(initial: impl Into<String>) -> Self {
        Self::new(
            initial,
            LearnerSettings {
                registration: Registration::Open,
                ..LearnerSettings::default()
            },
        )
    }

    pub fn settings(&self) -> &LearnerSettings {
        &self.settings
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn initial(&self) -> &str {
        &self.initial
    }

    pub fn states(&self) -> &[String] {
        self.states.names()
    }

    pub fn actions(&self) -> &[String] {
        self.actions.names()
    }

    pub fn declare_state(&mut self, name: &str) -> Result<usize, MdpError> {
        check_name(name)?;
        Ok(self.states.intern(name))
    }

    pub fn declare_action(&mut self, name: &str) -> Result<usize, MdpError> {
        if name != GOTO_ACTION {
            check_name(name)?;
        }
        Ok(self.actions.intern(name))
    }

    pub fn add_label(&mut self, label: &str, state: &str) {
        self.labels
            .entry(label.to_owned())
            .or_default()
            .insert(state.to_owned());
    }

    /// Every observed post-state of `action` carries `label`.
    pub fn set_action_label(&mut self, action: &str, label: &str) {
        self.action_labels.insert(action.to_owned(), label.to_owned());
        self.labels.entry(label.to_owned()).or_default();
    }

    pub fn add_terminal(&mut self, state: &str) {
        self.terminal.insert(state.to_owned());
    }

    pub fn add_reward_structure(&mut self, structure: RewardStructure) -> Result<(), MdpError> {
        structure.validate()?;
        if structure.name == OBSERVED_REWARDS {
            return Err(MdpError::InvalidRewardStructure {
                name: structure.name,
                reason: "the name is reserved".into(),
            });
        }
        self.reward_structures.insert(structure.name.clone(), structure);
        Ok(())
    }

    /// Weight of `(s, a, s')`, zero if never seen or unknown.
    pub fn count(&self, state: &str, action: &str, next_state: &str) -> f64 {
        let (Some(s), Some(a), Some(t)) = (
            self.states.get(state),
            self.actions.get(action),
            self.states.get(next_state),
        ) else {
            return 0.0;
        };
        self.counts
            .get(&(s, a))
            .and_then(|row| row.get(&t))
            .copied()
            .unwrap_or(0.0)
    }

    /// `Σ_{s'} counts(s, a, s')`
    pub fn action_count(&self, state: &str, action: &str) -> f64 {
        let (Some(s), Some(a)) = (self.states.get(state), self.actions.get(action)) else {
            return 0.0;
        };
        self.counts
            .get(&(s, a))
            .map_or(0.0, |row| row.values().sum())
    }

    fn resolve_state(&self, name: &str) -> Result<Option<usize>, MdpError> {
        match self.states.get(name) {
            Some(i) => Ok(Some(i)),
            None => match self.settings.registration {
                Registration::Strict => Err(MdpError::UnknownState(name.to_owned())),
                Registration::Open => check_name(name).map(|_| None),
            },
        }
    }

    fn resolve_action(&self, name: &str) -> Result<Option<usize>, MdpError> {
        match self.actions.get(name) {
            Some(i) => Ok(Some(i)),
            None if name == GOTO_ACTION => Ok(None),
            None => match self.settings.registration {
                Registration::Strict => Err(MdpError::UnknownAction(name.to_owned())),
                Registration::Open => check_name(name).map(|_| None),
            },
        }
    }

    /// Checks that `ev` would be accepted without mutating the model.
    pub fn validate_event(&self, ev: &TransitionEvent) -> Result<(), MdpError> {
        if let Some(r) = ev.reward {
            if !r.is_finite() {
                return Err(MdpError::NonFiniteReward(r));
            }
        }
        self.resolve_state(&ev.state)?;
        self.resolve_action(&ev.action)?;
        self.resolve_state(&ev.next_state)?;
        Ok(())
    }

    /// Adds one observation and returns the new revision.
    pub fn record_transition(&mut self, ev: &TransitionEvent) -> Result<u64, MdpError> {
        self.validate_event(ev)?;
        let s = self.states.intern(&ev.state);
        let a = self.actions.intern(&ev.action);
        let t = self.states.intern(&ev.next_state);
        *self.counts.entry((s, a)).or_default().entry(t).or_insert(0.0) += 1.0;
        if let Some(r) = ev.reward {
            let entry = self.observed_rewards.entry((s, a, t)).or_insert((0.0, 0.0));
            entry.0 += r;
            entry.1 += 1.0;
        }
        self.revision += 1;
        Ok(self.revision)
    }

    /// Multiplies every weight by `lambda` and prunes weights that fall below
    /// the configured epsilon. `lambda == 1` leaves the model untouched.
    pub fn apply_forgetting(&mut self, lambda: f64) -> Result<(), MdpError> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(MdpError::InvalidDecay(lambda));
        }
        if lambda == 1.0 {
            return Ok(());
        }
        let eps = self.settings.prune_epsilon;
        self.counts.retain(|_, row| {
            row.retain(|_, w| {
                *w *= lambda;
                *w >= eps
            });
            !row.is_empty()
        });
        self.observed_rewards.retain(|_, (sum, weight)| {
            *sum *= lambda;
            *weight *= lambda;
            *weight >= eps
        });
        self.revision += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot::from_model(self)
    }
}

fn check_name(name: &str) -> Result<(), MdpError> {
    if is_identifier(name) {
        Ok(())
    } else {
        Err(MdpError::InvalidName(name.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, a: &str, t: &str) -> TransitionEvent {
        TransitionEvent::new(s, a, t)
    }

    #[test]
    fn counts_follow_observations() {
        let mut m = LearnedMdp::open("hypothesis");
        for _ in 0..3 {
            m.record_transition(&ev("hypothesis", "search_code_base", "info_found")).unwrap();
        }
        m.record_transition(&ev("hypothesis", "search_code_base", "no_results")).unwrap();
        assert_eq!(m.count("hypothesis", "search_code_base", "info_found"), 3.0);
        assert_eq!(m.action_count("hypothesis", "search_code_base"), 4.0);
        assert_eq!(m.revision(), 4);
    }

    #[test]
    fn strict_mode_rejects_unknown_names_without_mutation() {
        let mut m = LearnedMdp::new("a", LearnerSettings::default());
        m.declare_state("a").unwrap();
        m.declare_action("go").unwrap();
        let err = m.record_transition(&ev("a", "go", "b")).unwrap_err();
        assert_eq!(err, MdpError::UnknownState("b".into()));
        let err = m.record_transition(&ev("a", "jump", "a")).unwrap_err();
        assert_eq!(err, MdpError::UnknownAction("jump".into()));
        assert_eq!(m.revision(), 0);
        assert!(m.counts.is_empty());
        // the declared-state action is always available
        m.record_transition(&ev("a", GOTO_ACTION, "a")).unwrap();
    }

    #[test]
    fn open_mode_rejects_non_identifiers() {
        let mut m = LearnedMdp::open("a");
        assert_eq!(
            m.record_transition(&ev("a", "go", "b c")).unwrap_err(),
            MdpError::InvalidName("b c".into())
        );
    }

    #[test]
    fn non_finite_reward_is_rejected() {
        let mut m = LearnedMdp::open("a");
        let err = m
            .record_transition(&ev("a", "go", "a").with_reward(f64::INFINITY))
            .unwrap_err();
        assert!(matches!(err, MdpError::NonFiniteReward(_)));
    }

    #[test]
    fn forgetting_scales_and_prunes() {
        let mut m = LearnedMdp::open("s");
        for _ in 0..4 {
            m.record_transition(&ev("s", "a", "x")).unwrap();
            m.record_transition(&ev("s", "a", "y")).unwrap();
        }
        m.apply_forgetting(0.5).unwrap();
        assert_eq!(m.count("s", "a", "x"), 2.0);
        assert_eq!(m.count("s", "a", "y"), 2.0);
        for lambda in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(m.apply_forgetting(lambda), Err(MdpError::InvalidDecay(_))));
        }
        let rev = m.revision();
        m.apply_forgetting(1.0).unwrap();
        assert_eq!(m.revision(), rev);
        // 2 * 1e-5^2 = 2e-10 < 1e-9
        m.apply_forgetting(1e-5).unwrap();
        m.apply_forgetting(1e-5).unwrap();
        assert_eq!(m.action_count("s", "a"), 0.0);
        assert!(m.counts.is_empty());
    }
}
