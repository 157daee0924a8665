use std::fmt;

use super::{Bound, Extremum, Opt, PathFormula, Property, Query, StateFormula};

// binding strength, loosest first
const OR: u8 = 1;
const AND: u8 = 2;
const NOT: u8 = 3;

impl StateFormula {
    fn precedence(&self) -> u8 {
        match self {
            StateFormula::Or(..) => OR,
            StateFormula::And(..) => AND,
            _ => NOT,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let parens = self.precedence() < min;
        if parens {
            f.write_str("(")?;
        }
        match self {
            StateFormula::True => f.write_str("true")?,
            StateFormula::False => f.write_str("false")?,
            StateFormula::Label(l) => write!(f, "\"{l}\"")?,
            StateFormula::Not(x) => {
                f.write_str("!")?;
                x.write(f, NOT)?;
            }
            // left-associative: a right operand of equal strength needs parentheses
            StateFormula::And(l, r) => {
                l.write(f, AND)?;
                f.write_str(" & ")?;
                r.write(f, AND + 1)?;
            }
            StateFormula::Or(l, r) => {
                l.write(f, OR)?;
                f.write_str(" | ")?;
                r.write(f, OR + 1)?;
            }
        }
        if parens {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for StateFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, OR)
    }
}

fn step_bound(bound: Option<u64>) -> String {
    bound.map(|k| format!("<={k}")).unwrap_or_default()
}

impl fmt::Display for PathFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFormula::Eventually { target, bound } => write!(f, "F{} {target}", step_bound(*bound)),
            PathFormula::Globally { invariant, bound } => write!(f, "G{} {invariant}", step_bound(*bound)),
            PathFormula::Until { hold, target, bound } => {
                write!(f, "{hold} U{} {target}", step_bound(*bound))
            }
        }
    }
}

fn opt_suffix(opt: Opt) -> &'static str {
    match opt {
        Opt::Max => "max",
        Opt::Min => "min",
        Opt::Policy => "",
    }
}

fn bound_text(b: &Bound) -> String {
    format!("{}{}", b.op.symbol(), b.value)
}

fn selector(structure: &Option<String>) -> String {
    structure
        .as_ref()
        .map(|s| format!("{{\"{s}\"}}"))
        .unwrap_or_default()
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Probability { opt, path } => write!(f, "P{}=? [ {path} ]", opt_suffix(*opt)),
            Query::ProbabilityBound { opt, bound, path } => {
                write!(f, "P{}{} [ {path} ]", opt_suffix(Opt::from(*opt)), bound_text(bound))
            }
            Query::Reward { opt, structure, target } => {
                write!(f, "R{}{}=? [ F {target} ]", selector(structure), opt_suffix(*opt))
            }
            Query::RewardBound { opt, structure, bound, target } => write!(
                f,
                "R{}{}{} [ F {target} ]",
                selector(structure),
                opt_suffix(Opt::from(*opt)),
                bound_text(bound)
            ),
        }
    }
}

impl fmt::Display for Extremum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(opt_suffix(Opt::from(*self)))
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.query.fmt(f)
    }
}

/// Canonical text of a query; `parse_property` of the result gives back an
/// equal AST.
pub fn format_property(q: &Query) -> String {
    q.to_string()
}
