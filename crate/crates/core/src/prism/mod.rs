//! PRISM-language export of a snapshot, and an importer for the same subset.
//!
//! ```text
//! mdp
//!
//! // s=0 s0
//! // s=1 goal
//! // a=0 a
//! module agent
//!   s : [0..1] init 0;
//!   [a] s=0 -> 3/4:(s'=0) + 1/4:(s'=1);
//!   [__self__] s=1 -> 1/1:(s'=1);
//! endmodule
//!
//! label "done" = s=1;
//!
//! rewards "steps"
//!   [a] s=0 : 1;
//! endrewards
//! ```
//!
//! Probabilities are written as `weight/total` fractions when every weight
//! of a command is integral, and as 17-significant-digit decimals otherwise.
//! Dead ends and terminal states get a `__self__` loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::mdp::{ModelSnapshot, StateId, SELF_LOOP_ACTION};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrismError {
    #[error("the model has no states or no initial state")]
    EmptyModel,
    #[error("line {line}: unsupported construct `{text}`")]
    UnsupportedConstruct { line: usize, text: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

fn is_integral(w: f64) -> bool {
    w.fract() == 0.0 && w.abs() < 9.007_199_254_740_992e15
}

/// Effective transition relation as the checker sees it: one entry per
/// `(state, action)`, with absorbing states as a `__self__` loop.
pub fn transition_matrix(snap: &ModelSnapshot) -> BTreeMap<(usize, String), Vec<(usize, f64)>> {
    let mut out = BTreeMap::new();
    for s in 0..snap.num_states() {
        let choices = snap.choices(StateId(s));
        if choices.is_empty() || snap.is_terminal(StateId(s)) {
            out.insert((s, SELF_LOOP_ACTION.to_owned()), vec![(s, 1.0)]);
            continue;
        }
        for c in choices {
            let name = snap.actions()[c.action].clone();
            out.insert((s, name), c.distribution().collect());
        }
    }
    out
}

/// Renders `snap` in the PRISM language. The output depends only on the
/// snapshot contents.
pub fn export_prism(snap: &ModelSnapshot) -> Result<String, PrismError> {
    let n = snap.num_states();
    let init = match snap.initial() {
        Some(i) if n > 0 => i.0,
        _ => return Err(PrismError::EmptyModel),
    };
    let mut out = String::new();
    out.push_str("mdp\n\n");
    for (k, name) in snap.states().iter().enumerate() {
        let _ = writeln!(out, "// s={k} {name}");
    }
    for (k, name) in snap.actions().iter().enumerate() {
        let _ = writeln!(out, "// a={k} {name}");
    }
    out.push_str("module agent\n");
    let _ = writeln!(out, "  s : [0..{}] init {init};", n - 1);
    for s in 0..n {
        let choices = snap.choices(StateId(s));
        if choices.is_empty() || snap.is_terminal(StateId(s)) {
            let _ = writeln!(out, "  [{SELF_LOOP_ACTION}] s={s} -> 1/1:(s'={s});");
            continue;
        }
        for c in choices {
            let exact = is_integral(c.total) && c.successors.iter().all(|&(_, w)| is_integral(w));
            let terms: Vec<String> = c
                .successors
                .iter()
                .map(|&(t, w)| {
                    if exact {
                        format!("{w}/{}:(s'={t})", c.total)
                    } else {
                        format!("{:.16e}:(s'={t})", w / c.total)
                    }
                })
                .collect();
            let _ = writeln!(out, "  [{}] s={s} -> {};", snap.actions()[c.action], terms.join(" + "));
        }
    }
    out.push_str("endmodule\n");

    if !snap.labels().is_empty() {
        out.push('\n');
    }
    for (label, states) in snap.labels() {
        let guard = if states.is_empty() {
            "false".to_owned()
        } else {
            states.iter().map(|s| format!("s={s}")).collect::<Vec<_>>().join(" | ")
        };
        let _ = writeln!(out, "label \"{label}\" = {guard};");
    }

    for name in snap.reward_structure_names() {
        let _ = writeln!(out, "\nrewards \"{name}\"");
        for s in 0..n {
            if snap.is_terminal(StateId(s)) {
                continue;
            }
            for (i, c) in snap.choices(StateId(s)).iter().enumerate() {
                let r = snap
                    .expected_choice_reward(&name, StateId(s), i)
                    .expect("listed structures exist");
                if r != 0.0 {
                    let _ = writeln!(out, "  [{}] s={s} : {r};", snap.actions()[c.action]);
                }
            }
        }
        out.push_str("endrewards\n");
    }
    Ok(out)
}

struct Line<'a> {
    no: usize,
    text: &'a str,
}

impl Line<'_> {
    fn unsupported(&self) -> PrismError {
        PrismError::UnsupportedConstruct {
            line: self.no,
            text: self.text.to_owned(),
        }
    }

    fn invalid(&self, message: impl Into<String>) -> PrismError {
        PrismError::Invalid {
            line: self.no,
            message: message.into(),
        }
    }
}

fn parse_state_guard(line: &Line, text: &str, n: usize) -> Result<usize, PrismError> {
    let k = text
        .trim()
        .strip_prefix("s=")
        .and_then(|v| v.trim().parse::<usize>().ok())
        .ok_or_else(|| line.unsupported())?;
    if k >= n {
        return Err(line.invalid(format!("state {k} is out of range")));
    }
    Ok(k)
}

fn parse_quoted<'a>(line: &Line, text: &'a str) -> Result<(&'a str, &'a str), PrismError> {
    let rest = text.trim_start().strip_prefix('"').ok_or_else(|| line.unsupported())?;
    let end = rest.find('"').ok_or_else(|| line.unsupported())?;
    Ok((&rest[..end], &rest[end + 1..]))
}

fn parse_action<'a>(line: &Line, text: &'a str) -> Result<(&'a str, &'a str), PrismError> {
    let rest = text.strip_prefix('[').ok_or_else(|| line.unsupported())?;
    let end = rest.find(']').ok_or_else(|| line.unsupported())?;
    let name = rest[..end].trim();
    if name.is_empty() {
        return Err(line.unsupported());
    }
    Ok((name, &rest[end + 1..]))
}

enum Prob {
    Fraction(f64, f64),
    Decimal(f64),
}

fn parse_prob(line: &Line, text: &str) -> Result<Prob, PrismError> {
    let text = text.trim();
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| line.invalid(format!("bad probability `{text}`")))
    };
    match text.split_once('/') {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if b == 0.0 {
                return Err(line.invalid("zero denominator"));
            }
            Ok(Prob::Fraction(a, b))
        }
        None => Ok(Prob::Decimal(num(text)?)),
    }
}

#[derive(Default)]
struct Imported {
    states: Vec<String>,
    init: Option<usize>,
    n: Option<usize>,
    actions: Vec<String>,
    commands: BTreeMap<(usize, usize), Vec<(usize, f64)>>,
    labels: BTreeMap<String, BTreeSet<usize>>,
    rewards: BTreeMap<String, BTreeMap<(usize, usize), f64>>,
}

impl Imported {
    fn action(&mut self, name: &str) -> usize {
        match self.actions.iter().position(|a| a == name) {
            Some(i) => i,
            None => {
                self.actions.push(name.to_owned());
                self.actions.len() - 1
            }
        }
    }
}

/// Parses text in the subset written by [`export_prism`].
pub fn import_prism(text: &str) -> Result<ModelSnapshot, PrismError> {
    enum Section {
        Header,
        Top,
        Module,
        Rewards(String),
    }
    let mut section = Section::Header;
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    let mut m = Imported::default();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = Line {
            no: i + 1,
            text: raw.trim(),
        };
        last_line = line.no;
        let t = line.text;
        if let Some(comment) = t.strip_prefix("//") {
            if let Some((k, name)) = comment.trim().strip_prefix("s=").and_then(|r| r.split_once(' ')) {
                if let Ok(k) = k.parse::<usize>() {
                    names.insert(k, name.trim().to_owned());
                }
            } else if let Some((k, name)) = comment.trim().strip_prefix("a=").and_then(|r| r.split_once(' ')) {
                // keeps the source's action order
                if k.parse::<usize>() == Ok(m.actions.len()) {
                    m.action(name.trim());
                }
            }
            continue;
        }
        if t.is_empty() {
            continue;
        }
        match &section {
            Section::Header => {
                if t != "mdp" {
                    return Err(line.unsupported());
                }
                section = Section::Top;
            }
            Section::Top => {
                if let Some(rest) = t.strip_prefix("module ") {
                    if m.n.is_some() || rest.trim().is_empty() {
                        return Err(line.unsupported());
                    }
                    section = Section::Module;
                } else if let Some(rest) = t.strip_prefix("label ") {
                    let (label, rest) = parse_quoted(&line, rest)?;
                    let guard = rest
                        .trim()
                        .strip_prefix('=')
                        .and_then(|g| g.trim().strip_suffix(';'))
                        .ok_or_else(|| line.unsupported())?;
                    let n = m.n.ok_or_else(|| line.invalid("label before the module"))?;
                    let mut set = BTreeSet::new();
                    if guard.trim() != "false" {
                        for part in guard.split('|') {
                            set.insert(parse_state_guard(&line, part, n)?);
                        }
                    }
                    if m.labels.insert(label.to_owned(), set).is_some() {
                        return Err(line.invalid(format!("duplicate label `{label}`")));
                    }
                } else if let Some(rest) = t.strip_prefix("rewards ") {
                    let (name, rest) = parse_quoted(&line, rest)?;
                    if !rest.trim().is_empty() {
                        return Err(line.unsupported());
                    }
                    if m.rewards.insert(name.to_owned(), BTreeMap::new()).is_some() {
                        return Err(line.invalid(format!("duplicate reward structure `{name}`")));
                    }
                    section = Section::Rewards(name.to_owned());
                } else {
                    return Err(line.unsupported());
                }
            }
            Section::Module => {
                if t == "endmodule" {
                    if m.n.is_none() {
                        return Err(line.invalid("module declares no state variable"));
                    }
                    section = Section::Top;
                } else if let Some(rest) = t.strip_prefix("s :") {
                    let (n, init) = parse_variable(&line, rest)?;
                    m.n = Some(n);
                    m.init = Some(init);
                } else if t.starts_with('[') {
                    let n = m.n.ok_or_else(|| line.invalid("command before the state variable"))?;
                    parse_command(&line, &mut m, n)?;
                } else {
                    return Err(line.unsupported());
                }
            }
            Section::Rewards(name) => {
                if t == "endrewards" {
                    section = Section::Top;
                    continue;
                }
                let n = m.n.ok_or_else(|| line.invalid("rewards before the module"))?;
                let (action, rest) = parse_action(&line, t)?;
                let (guard, value) = rest.split_once(':').ok_or_else(|| line.unsupported())?;
                let s = parse_state_guard(&line, guard, n)?;
                let r: f64 = value
                    .trim()
                    .strip_suffix(';')
                    .and_then(|v| v.trim().parse().ok())
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| line.invalid(format!("bad reward `{}`", value.trim())))?;
                let a = m.action(action);
                let name = name.clone();
                if m.rewards.get_mut(&name).expect("opened").insert((s, a), r).is_some() {
                    return Err(line.invalid("duplicate reward entry"));
                }
            }
        }
    }
    match section {
        Section::Top => {}
        Section::Header => return Err(PrismError::EmptyModel),
        _ => return Err(PrismError::Invalid { line: last_line, message: "unexpected end of input".into() }),
    }
    let n = m.n.ok_or(PrismError::EmptyModel)?;
    m.states = (0..n)
        .map(|k| names.get(&k).cloned().unwrap_or_else(|| format!("s{k}")))
        .collect();
    let counts = m
        .commands
        .iter()
        .flat_map(|(&(s, a), succ)| succ.iter().map(move |&(t, w)| (s, a, t, w)))
        .collect();
    for (name, table) in &m.rewards {
        for &(s, a) in table.keys() {
            if !m.commands.contains_key(&(s, a)) {
                return Err(PrismError::Invalid {
                    line: 0,
                    message: format!("reward structure `{name}` names a missing command [{}] s={s}", m.actions[a]),
                });
            }
        }
    }
    ModelSnapshot::from_parts(m.states, m.actions, counts, m.labels, m.init, Vec::new(), m.rewards, 0)
        .map_err(|e| PrismError::Invalid { line: 0, message: e.to_string() })
}

fn parse_variable(line: &Line, rest: &str) -> Result<(usize, usize), PrismError> {
    // ` [0..N] init I;`
    let rest = rest.trim().strip_prefix("[0..").ok_or_else(|| line.unsupported())?;
    let (hi, rest) = rest.split_once(']').ok_or_else(|| line.unsupported())?;
    let init = rest
        .trim()
        .strip_prefix("init")
        .and_then(|r| r.trim().strip_suffix(';'))
        .ok_or_else(|| line.unsupported())?;
    let hi: usize = hi.trim().parse().map_err(|_| line.unsupported())?;
    let init: usize = init.trim().parse().map_err(|_| line.unsupported())?;
    if init > hi {
        return Err(line.invalid("initial state is out of range"));
    }
    Ok((hi + 1, init))
}

fn parse_command(line: &Line, m: &mut Imported, n: usize) -> Result<(), PrismError> {
    let (action, rest) = parse_action(line, line.text)?;
    let (guard, updates) = rest.split_once("->").ok_or_else(|| line.unsupported())?;
    let s = parse_state_guard(line, guard, n)?;
    let updates = updates.trim().strip_suffix(';').ok_or_else(|| line.unsupported())?;
    let mut terms = Vec::new();
    for term in updates.split(" + ") {
        let (p, target) = term.split_once(':').ok_or_else(|| line.unsupported())?;
        let target = target
            .trim()
            .strip_prefix("(s'=")
            .and_then(|t| t.strip_suffix(')'))
            .and_then(|t| t.trim().parse::<usize>().ok())
            .ok_or_else(|| line.unsupported())?;
        if target >= n {
            return Err(line.invalid(format!("state {target} is out of range")));
        }
        if terms.iter().any(|(t, _)| *t == target) {
            return Err(line.invalid(format!("successor {target} appears twice")));
        }
        terms.push((target, parse_prob(line, p)?));
    }
    // a command whose fractions share one denominator and whose numerators
    // add up to it keeps its integral weights
    let shared = match terms.first() {
        Some((_, Prob::Fraction(_, d))) => {
            let d = *d;
            let all = terms.iter().all(|(_, p)| matches!(p, Prob::Fraction(_, e) if *e == d));
            let sum: f64 = terms.iter().map(|(_, p)| if let Prob::Fraction(w, _) = p { *w } else { 0.0 }).sum();
            (all && sum == d).then_some(d)
        }
        _ => None,
    };
    let succ: Vec<(usize, f64)> = terms
        .into_iter()
        .filter_map(|(t, p)| {
            let w = match p {
                Prob::Fraction(w, d) => if shared.is_some() { w } else { w / d },
                Prob::Decimal(x) => x,
            };
            (w > 0.0).then_some((t, w))
        })
        .collect();
    let total: f64 = succ.iter().map(|&(_, w)| w).sum();
    let expected = shared.unwrap_or(1.0);
    if succ.is_empty() || (total - expected).abs() > 1e-9 * expected {
        return Err(line.invalid(format!("probabilities of [{action}] s={s} do not sum to 1")));
    }
    let a = m.action(action);
    let mut succ = succ;
    succ.sort_by_key(|&(t, _)| t);
    if m.commands.insert((s, a), succ).is_some() {
        return Err(line.invalid(format!("duplicate command [{action}] s={s}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
