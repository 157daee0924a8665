use std::collections::BTreeSet;

use super::{PctlError, Query};
use crate::mdp::{OBSERVED_REWARDS, STEPS_REWARDS};

/// Which model classes a configuration allows properties to target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckMode {
    /// Optimal values over all schedulers of the learned MDP.
    Mdp,
    /// The chain induced by the agent's empirical policy.
    Dtmc,
    #[default]
    Both,
}

impl CheckMode {
    pub fn permits(self, needed: CheckMode) -> bool {
        self == CheckMode::Both || self == needed
    }
}

/// Names a property may refer to.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    /// Declared labels and state names.
    pub labels: BTreeSet<String>,
    pub reward_structures: BTreeSet<String>,
    pub mode: CheckMode,
    /// Open registration: labels may name states that have not been seen
    /// yet, so unknown labels are accepted.
    pub open: bool,
}

impl Vocabulary {
    pub fn new(mode: CheckMode) -> Self {
        let mut v = Vocabulary { mode, ..Default::default() };
        v.reward_structures.insert(STEPS_REWARDS.to_owned());
        v.reward_structures.insert(OBSERVED_REWARDS.to_owned());
        v
    }

    pub fn from_snapshot(snap: &crate::mdp::ModelSnapshot) -> Self {
        let mut v = Vocabulary::new(CheckMode::Both);
        v.labels.extend(snap.labels().keys().cloned());
        v.labels.extend(snap.states().iter().cloned());
        v.reward_structures.extend(snap.reward_structure_names());
        v
    }
}

/// Checks that every label and reward structure in `q` resolves and that the
/// query's model class is permitted.
pub fn validate(q: &Query, vocab: &Vocabulary) -> Result<(), PctlError> {
    if !vocab.open {
        for f in q.state_formulas() {
            if let Some(l) = f.labels().into_iter().find(|l| !vocab.labels.contains(*l)) {
                return Err(PctlError::UnknownLabel(l.to_owned()));
            }
        }
    }
    if let Some(name) = q.reward_structure() {
        if !vocab.reward_structures.contains(name) {
            return Err(PctlError::UnknownRewardStructure(name.to_owned()));
        }
    }
    let needed = q.mode_hint();
    if !vocab.mode.permits(needed) {
        return Err(PctlError::ModeMismatch(format!(
            "`{q}` needs {} checking but the configuration only allows {}",
            mode_name(needed),
            mode_name(vocab.mode)
        )));
    }
    Ok(())
}

fn mode_name(m: CheckMode) -> &'static str {
    match m {
        CheckMode::Mdp => "mdp",
        CheckMode::Dtmc => "dtmc",
        CheckMode::Both => "both",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pctl::parse_property;

    fn vocab(mode: CheckMode) -> Vocabulary {
        let mut v = Vocabulary::new(mode);
        v.labels.extend(["g".to_owned(), "fix_success".to_owned()]);
        v
    }

    #[test]
    fn resolves_names() {
        let q = parse_property(r#"Pmax=? [ F "fix_success" ]"#).unwrap();
        assert_eq!(validate(&q, &vocab(CheckMode::Both)), Ok(()));
        let q = parse_property(r#"Pmax=? [ F "no_such" ]"#).unwrap();
        assert_eq!(
            validate(&q, &vocab(CheckMode::Both)),
            Err(PctlError::UnknownLabel("no_such".into()))
        );
        let q = parse_property(r#"R{"cost"}min=? [ F "g" ]"#).unwrap();
        assert_eq!(
            validate(&q, &vocab(CheckMode::Both)),
            Err(PctlError::UnknownRewardStructure("cost".into()))
        );
    }

    #[test]
    fn mode_checks() {
        let q = parse_property(r#"P=? [ F "g" ]"#).unwrap();
        assert!(matches!(validate(&q, &vocab(CheckMode::Mdp)), Err(PctlError::ModeMismatch(_))));
        assert!(validate(&q, &vocab(CheckMode::Dtmc)).is_ok());
        let q = parse_property(r#"Pmax=? [ F "g" ]"#).unwrap();
        assert!(matches!(validate(&q, &vocab(CheckMode::Dtmc)), Err(PctlError::ModeMismatch(_))));
    }

    #[test]
    fn open_vocabulary_accepts_unseen_labels() {
        let mut v = vocab(CheckMode::Both);
        v.open = true;
        let q = parse_property(r#"Pmax=? [ F "later" ]"#).unwrap();
        assert!(validate(&q, &v).is_ok());
    }
}
