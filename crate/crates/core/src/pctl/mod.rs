//! The property language: a PCTL subset with probability and reward
//! operators.
//!
//! ```text
//! query  := P-op "[" path "]" | R-op "[" "F" sf "]"
//! P-op   := ("Pmax" | "Pmin" | "P") "=?" | ("Pmax" | "Pmin" | "P") cmp number
//! R-op   := "R" ("{" "\"" name "\"" "}")? ("max" | "min")? ("=?" | cmp number)
//! path   := "F" ("<=" k)? sf | "G" ("<=" k)? sf | sf "U" ("<=" k)? sf
//! sf     := sf "|" sf | sf "&" sf | "!" sf | "(" sf ")" | "true" | "false" | "\"" label "\""
//! ```
//!
//! `&` binds tighter than `|`, and `!` binds tightest. Labels are always
//! quoted. A bound form without an explicit `max`/`min` ranges over the
//! maximising scheduler.

mod format;
mod parser;
mod validate;

use thiserror::Error;

pub use format::format_property;
pub use parser::{parse_property, parse_state_formula};
pub use validate::{validate, CheckMode, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StateFormula {
    True,
    False,
    Label(String),
    Not(Box<StateFormula>),
    And(Box<StateFormula>, Box<StateFormula>),
    Or(Box<StateFormula>, Box<StateFormula>),
}

impl StateFormula {
    pub fn label(name: impl Into<String>) -> Self {
        StateFormula::Label(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: StateFormula) -> Self {
        StateFormula::Not(Box::new(f))
    }

    pub fn and(l: StateFormula, r: StateFormula) -> Self {
        StateFormula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: StateFormula, r: StateFormula) -> Self {
        StateFormula::Or(Box::new(l), Box::new(r))
    }

    /// Every label name mentioned in the formula.
    pub fn labels(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_labels(&mut out);
        out
    }

    fn collect_labels<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            StateFormula::True | StateFormula::False => {}
            StateFormula::Label(l) => out.push(l),
            StateFormula::Not(f) => f.collect_labels(out),
            StateFormula::And(l, r) | StateFormula::Or(l, r) => {
                l.collect_labels(out);
                r.collect_labels(out);
            }
        }
    }

    /// Evaluates the formula given the truth of each label.
    pub fn eval(&self, holds: &impl Fn(&str) -> bool) -> bool {
        match self {
            StateFormula::True => true,
            StateFormula::False => false,
            StateFormula::Label(l) => holds(l),
            StateFormula::Not(f) => !f.eval(holds),
            StateFormula::And(l, r) => l.eval(holds) && r.eval(holds),
            StateFormula::Or(l, r) => l.eval(holds) || r.eval(holds),
        }
    }
}

/// Path operators. `bound` is an upper step bound `<=k`, `k >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PathFormula {
    Eventually {
        target: StateFormula,
        bound: Option<u64>,
    },
    Globally {
        invariant: StateFormula,
        bound: Option<u64>,
    },
    Until {
        hold: StateFormula,
        target: StateFormula,
        bound: Option<u64>,
    },
}

impl PathFormula {
    pub fn eventually(target: StateFormula) -> Self {
        PathFormula::Eventually { target, bound: None }
    }

    pub fn globally(invariant: StateFormula) -> Self {
        PathFormula::Globally { invariant, bound: None }
    }

    pub fn bound(&self) -> Option<u64> {
        match self {
            PathFormula::Eventually { bound, .. }
            | PathFormula::Globally { bound, .. }
            | PathFormula::Until { bound, .. } => *bound,
        }
    }

    pub fn state_formulas(&self) -> Vec<&StateFormula> {
        match self {
            PathFormula::Eventually { target, .. } => vec![target],
            PathFormula::Globally { invariant, .. } => vec![invariant],
            PathFormula::Until { hold, target, .. } => vec![hold, target],
        }
    }
}

/// How the nondeterminism of the model is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opt {
    Max,
    Min,
    /// The agent's empirical policy (the induced Markov chain).
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Max,
    Min,
}

impl From<Extremum> for Opt {
    fn from(e: Extremum) -> Opt {
        match e {
            Extremum::Max => Opt::Max,
            Extremum::Min => Opt::Min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Comparison {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
}

impl Comparison {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Ge => value >= threshold,
            Comparison::Gt => value > threshold,
            Comparison::Le => value <= threshold,
            Comparison::Lt => value < threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Ge => ">=",
            Comparison::Gt => ">",
            Comparison::Le => "<=",
            Comparison::Lt => "<",
        }
    }
}

/// A threshold `op value`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bound {
    pub op: Comparison,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    /// `Pmax=? [ path ]`, `Pmin=? [ path ]`, `P=? [ path ]`
    Probability { opt: Opt, path: PathFormula },
    /// `Pmax>=0.9 [ path ]`
    ProbabilityBound {
        opt: Extremum,
        bound: Bound,
        path: PathFormula,
    },
    /// `R{"name"}min=? [ F sf ]`; no selector means the `steps` structure.
    Reward {
        opt: Opt,
        structure: Option<String>,
        target: StateFormula,
    },
    RewardBound {
        opt: Extremum,
        structure: Option<String>,
        bound: Bound,
        target: StateFormula,
    },
}

impl Query {
    pub fn opt(&self) -> Opt {
        match self {
            Query::Probability { opt, .. } | Query::Reward { opt, .. } => *opt,
            Query::ProbabilityBound { opt, .. } | Query::RewardBound { opt, .. } => (*opt).into(),
        }
    }

    pub fn bound(&self) -> Option<Bound> {
        match self {
            Query::ProbabilityBound { bound, .. } | Query::RewardBound { bound, .. } => Some(*bound),
            _ => None,
        }
    }

    pub fn is_reward(&self) -> bool {
        matches!(self, Query::Reward { .. } | Query::RewardBound { .. })
    }

    /// Model class the query needs: the policy-induced chain or the MDP.
    pub fn mode_hint(&self) -> CheckMode {
        if self.opt() == Opt::Policy {
            CheckMode::Dtmc
        } else {
            CheckMode::Mdp
        }
    }

    pub fn reward_structure(&self) -> Option<&str> {
        match self {
            Query::Reward { structure, .. } | Query::RewardBound { structure, .. } => {
                Some(structure.as_deref().unwrap_or(crate::mdp::STEPS_REWARDS))
            }
            _ => None,
        }
    }

    pub fn state_formulas(&self) -> Vec<&StateFormula> {
        match self {
            Query::Probability { path, .. } | Query::ProbabilityBound { path, .. } => path.state_formulas(),
            Query::Reward { target, .. } | Query::RewardBound { target, .. } => vec![target],
        }
    }
}

/// A named query.
#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub query: Query,
}

impl Property {
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self, PctlError> {
        Ok(Self {
            name: name.into(),
            query: parse_property(text)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PctlError {
    #[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("step bound `{value}` at byte {offset} must be an integer >= 1")]
    Bound { offset: usize, value: String },
    #[error("threshold {value} at byte {offset} is out of range")]
    Threshold { offset: usize, value: String },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown reward structure `{0}`")]
    UnknownRewardStructure(String),
    #[error("{0}")]
    ModeMismatch(String),
}

impl PctlError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            PctlError::Syntax { offset, .. }
            | PctlError::Bound { offset, .. }
            | PctlError::Threshold { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}
