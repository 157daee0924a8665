use super::{Bound, Comparison, Extremum, Opt, PathFormula, PctlError, Query, StateFormula};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(String),
    EqQ,
    Cmp(Comparison),
    LBracket,
    RBracket,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Not,
    And,
    Or,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("\"{s}\""),
            Tok::Num(n) => format!("`{n}`"),
            Tok::EqQ => "`=?`".into(),
            Tok::Cmp(c) => format!("`{}`", c.symbol()),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Not => "`!`".into(),
            Tok::And => "`&`".into(),
            Tok::Or => "`|`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn syntax(&self, offset: usize, expected: &[&str], found: String) -> PctlError {
        PctlError::Syntax {
            offset: clamp_offset(self.src, offset),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, PctlError> {
        let bytes = self.src.as_bytes();
        let mut out = Vec::new();
        loop {
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            let start = self.pos;
            let Some(&c) = bytes.get(self.pos) else {
                out.push((start, Tok::Eof));
                return Ok(out);
            };
            let two = |b: u8| bytes.get(start + 1) == Some(&b);
            let tok = match c {
                b'[' => Tok::LBracket,
                b']' => Tok::RBracket,
                b'(' => Tok::LParen,
                b')' => Tok::RParen,
                b'{' => Tok::LBrace,
                b'}' => Tok::RBrace,
                b'!' => Tok::Not,
                b'&' => Tok::And,
                b'|' => Tok::Or,
                b'=' if two(b'?') => {
                    self.pos += 1;
                    Tok::EqQ
                }
                b'>' | b'<' => {
                    let eq = two(b'=');
                    if eq {
                        self.pos += 1;
                    }
                    Tok::Cmp(match (c, eq) {
                        (b'>', true) => Comparison::Ge,
                        (b'>', false) => Comparison::Gt,
                        (_, true) => Comparison::Le,
                        _ => Comparison::Lt,
                    })
                }
                b'"' => {
                    let end = self.src[start + 1..]
                        .find('"')
                        .ok_or_else(|| self.syntax(self.src.len(), &["`\"`"], "end of input".into()))?;
                    let label = &self.src[start + 1..start + 1 + end];
                    if !crate::mdp::is_identifier(label) {
                        return Err(self.syntax(start + 1, &["label name"], format!("\"{label}\"")));
                    }
                    self.pos = start + 1 + end;
                    Tok::Str(label.to_owned())
                }
                b'0'..=b'9' | b'-' | b'.' => {
                    let mut end = start + 1;
                    while end < bytes.len() {
                        let d = bytes[end];
                        let exp_sign = (d == b'+' || d == b'-') && matches!(bytes[end - 1], b'e' | b'E');
                        if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                            end += 1;
                        } else {
                            break;
                        }
                    }
                    self.pos = end - 1;
                    Tok::Num(self.src[start..end].to_owned())
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut end = start + 1;
                    while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                        end += 1;
                    }
                    self.pos = end - 1;
                    Tok::Ident(self.src[start..end].to_owned())
                }
                _ => {
                    let ch = self.src[start..].chars().next().unwrap_or('?');
                    return Err(self.syntax(start, &["a token"], format!("`{ch}`")));
                }
            };
            self.pos += 1;
            out.push((start, tok));
        }
    }
}

fn clamp_offset(src: &str, offset: usize) -> usize {
    if offset < src.len() {
        return offset;
    }
    // point at the start of the last character
    src.char_indices().last().map_or(0, |(i, _)| i)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        clamp_offset(self.src, self.toks[self.pos].0)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> PctlError {
        PctlError::Syntax {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok, name: &str) -> Result<(), PctlError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[name]))
        }
    }

    fn query(&mut self) -> Result<Query, PctlError> {
        let head = match self.peek() {
            Tok::Ident(s) if matches!(s.as_str(), "P" | "Pmax" | "Pmin" | "R" | "Rmax" | "Rmin") => s.clone(),
            _ => return Err(self.error(&["`Pmax`", "`Pmin`", "`P`", "`Rmin`", "`Rmax`", "`R`"])),
        };
        self.bump();
        let is_reward = head.starts_with('R');
        let mut opt = match &head[1..] {
            "max" => Some(Extremum::Max),
            "min" => Some(Extremum::Min),
            _ => None,
        };
        let mut structure = None;
        if head == "R" {
            if *self.peek() == Tok::LBrace {
                self.bump();
                let Tok::Str(name) = self.peek().clone() else {
                    return Err(self.error(&["reward structure name"]));
                };
                self.bump();
                structure = Some(name);
                self.expect(Tok::RBrace, "`}`")?;
            }
            if let Tok::Ident(s) = self.peek() {
                opt = match s.as_str() {
                    "max" => Some(Extremum::Max),
                    "min" => Some(Extremum::Min),
                    _ => return Err(self.error(&["`min`", "`max`", "`=?`", "comparison"])),
                };
                self.bump();
            }
        }
        let bound = match self.peek().clone() {
            Tok::EqQ => {
                self.bump();
                None
            }
            Tok::Cmp(op) => {
                self.bump();
                let offset = self.offset();
                let Tok::Num(text) = self.peek().clone() else {
                    return Err(self.error(&["threshold"]));
                };
                self.bump();
                let value: f64 = text.parse().map_err(|_| PctlError::Syntax {
                    offset,
                    expected: vec!["number".into()],
                    found: format!("`{text}`"),
                })?;
                let in_range = if is_reward {
                    value.is_finite() && value >= 0.0
                } else {
                    (0.0..=1.0).contains(&value)
                };
                if !in_range {
                    return Err(PctlError::Threshold { offset, value: text });
                }
                Some(Bound { op, value })
            }
            _ => return Err(self.error(&["`=?`", "comparison"])),
        };
        self.expect(Tok::LBracket, "`[`")?;
        let query = if is_reward {
            match self.peek() {
                Tok::Ident(s) if s == "F" => {
                    self.bump();
                }
                _ => return Err(self.error(&["`F`"])),
            }
            let target = self.or()?;
            match bound {
                None => Query::Reward {
                    opt: opt.map_or(Opt::Policy, Opt::from),
                    structure,
                    target,
                },
                Some(bound) => Query::RewardBound {
                    opt: opt.unwrap_or(Extremum::Max),
                    structure,
                    bound,
                    target,
                },
            }
        } else {
            let path = self.path()?;
            match bound {
                None => Query::Probability {
                    opt: opt.map_or(Opt::Policy, Opt::from),
                    path,
                },
                Some(bound) => Query::ProbabilityBound {
                    opt: opt.unwrap_or(Extremum::Max),
                    bound,
                    path,
                },
            }
        };
        self.expect(Tok::RBracket, "`]`")?;
        if *self.peek() != Tok::Eof {
            return Err(self.error(&["end of input"]));
        }
        Ok(query)
    }

    fn step_bound(&mut self) -> Result<Option<u64>, PctlError> {
        if *self.peek() != Tok::Cmp(Comparison::Le) {
            return Ok(None);
        }
        self.bump();
        let offset = self.offset();
        let Tok::Num(text) = self.peek().clone() else {
            return Err(self.error(&["step bound"]));
        };
        self.bump();
        match text.parse::<u64>() {
            Ok(k) if k >= 1 => Ok(Some(k)),
            _ => Err(PctlError::Bound { offset, value: text }),
        }
    }

    fn path(&mut self) -> Result<PathFormula, PctlError> {
        if let Tok::Ident(s) = self.peek() {
            match s.as_str() {
                "F" => {
                    self.bump();
                    let bound = self.step_bound()?;
                    let target = self.or()?;
                    return Ok(PathFormula::Eventually { target, bound });
                }
                "G" => {
                    self.bump();
                    let bound = self.step_bound()?;
                    let invariant = self.or()?;
                    return Ok(PathFormula::Globally { invariant, bound });
                }
                _ => {}
            }
        }
        let hold = self.or()?;
        match self.peek() {
            Tok::Ident(s) if s == "U" => {
                self.bump();
            }
            _ => return Err(self.error(&["`U`", "`&`", "`|`"])),
        }
        let bound = self.step_bound()?;
        let target = self.or()?;
        Ok(PathFormula::Until { hold, target, bound })
    }

    fn or(&mut self) -> Result<StateFormula, PctlError> {
        let mut left = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let right = self.and()?;
            left = StateFormula::or(left, right);
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<StateFormula, PctlError> {
        let mut left = self.unary()?;
        while *self.peek() == Tok::And {
            self.bump();
            let right = self.unary()?;
            left = StateFormula::and(left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<StateFormula, PctlError> {
        match self.peek().clone() {
            Tok::Not => {
                self.bump();
                Ok(StateFormula::not(self.unary()?))
            }
            Tok::LParen => {
                self.bump();
                let f = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Tok::Str(label) => {
                self.bump();
                Ok(StateFormula::Label(label))
            }
            Tok::Ident(s) if s == "true" => {
                self.bump();
                Ok(StateFormula::True)
            }
            Tok::Ident(s) if s == "false" => {
                self.bump();
                Ok(StateFormula::False)
            }
            _ => Err(self.error(&["`\"label\"`", "`true`", "`false`", "`!`", "`(`"])),
        }
    }
}

/// Parses a property such as `Pmax=? [ F "fix_success" ]`.
pub fn parse_property(text: &str) -> Result<Query, PctlError> {
    let toks = Lexer { src: text, pos: 0 }.tokens()?;
    Parser { src: text, toks, pos: 0 }.query()
}

/// Parses a bare state formula such as `"a" & !"b"`.
pub fn parse_state_formula(text: &str) -> Result<StateFormula, PctlError> {
    let toks = Lexer { src: text, pos: 0 }.tokens()?;
    let mut p = Parser { src: text, toks, pos: 0 };
    let f = p.or()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error(&["end of input"]));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pctl::StateFormula as SF;

    #[test]
    fn no_fix_property() {
        let q = parse_property(r#"Pmax=? [ G !"write_fix" ]"#).unwrap();
        assert_eq!(
            q,
            Query::Probability {
                opt: Opt::Max,
                path: PathFormula::globally(SF::not(SF::label("write_fix"))),
            }
        );
    }

    #[test]
    fn bare_bound_defaults_to_max() {
        let q = parse_property(r#"P>=1 [ F "goal" ]"#).unwrap();
        assert_eq!(
            q,
            Query::ProbabilityBound {
                opt: Extremum::Max,
                bound: Bound { op: Comparison::Ge, value: 1.0 },
                path: PathFormula::eventually(SF::label("goal")),
            }
        );
        let q = parse_property(r#"Pmin>0.5 [ F "goal" ]"#).unwrap();
        assert_eq!(q.opt(), Opt::Min);
    }

    #[test]
    fn step_bounds() {
        assert!(matches!(
            parse_property(r#"Pmax=? [ F<=0 "g" ]"#),
            Err(PctlError::Bound { offset: 12, .. })
        ));
        assert!(matches!(parse_property(r#"Pmax=? [ F<=-2 "g" ]"#), Err(PctlError::Bound { .. })));
        assert!(matches!(parse_property(r#"Pmax=? [ F<=1.5 "g" ]"#), Err(PctlError::Bound { .. })));
        let q = parse_property(r#"Pmax=? [ "a" U<=7 "b" ]"#).unwrap();
        assert_eq!(
            q,
            Query::Probability {
                opt: Opt::Max,
                path: PathFormula::Until { hold: SF::label("a"), target: SF::label("b"), bound: Some(7) },
            }
        );
    }

    #[test]
    fn thresholds() {
        assert!(matches!(parse_property(r#"P>=1.5 [ F "g" ]"#), Err(PctlError::Threshold { offset: 3, .. })));
        assert!(matches!(parse_property(r#"P>=-0.1 [ F "g" ]"#), Err(PctlError::Threshold { .. })));
        assert!(parse_property(r#"P>=0 [ F "g" ]"#).is_ok());
        assert!(parse_property(r#"Rmin<=12.5 [ F "g" ]"#).is_ok());
        assert!(matches!(parse_property(r#"Rmin<=-1 [ F "g" ]"#), Err(PctlError::Threshold { .. })));
    }

    #[test]
    fn reward_selectors() {
        let q = parse_property(r#"R{"cost"}min=? [ F "done" ]"#).unwrap();
        assert_eq!(
            q,
            Query::Reward { opt: Opt::Min, structure: Some("cost".into()), target: SF::label("done") }
        );
        assert_eq!(q.reward_structure(), Some("cost"));
        let q = parse_property(r#"Rmin=? [ F "done" ]"#).unwrap();
        assert_eq!(q.reward_structure(), Some("steps"));
        let q = parse_property(r#"R=? [ F "done" ]"#).unwrap();
        assert_eq!(q.opt(), Opt::Policy);
        assert!(parse_property(r#"Rmin=? [ G "done" ]"#).is_err());
    }

    #[test]
    fn precedence() {
        let f = parse_state_formula(r#""a" | "b" & !"c""#).unwrap();
        assert_eq!(
            f,
            SF::or(SF::label("a"), SF::and(SF::label("b"), SF::not(SF::label("c"))))
        );
        let f = parse_state_formula(r#"!!"a""#).unwrap();
        assert_eq!(f, SF::not(SF::not(SF::label("a"))));
        let f = parse_state_formula(r#"("a" | "b") & true"#).unwrap();
        assert_eq!(f, SF::and(SF::or(SF::label("a"), SF::label("b")), SF::True));
    }

    #[test]
    fn syntax_errors_report_offsets() {
        let err = parse_property(r#"Pmax=? [ F goal ]"#).unwrap_err();
        match err {
            PctlError::Syntax { offset, expected, .. } => {
                assert_eq!(offset, 11);
                assert!(expected.iter().any(|e| e.contains("label")));
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_property(r#"Pmax=? [ F "goal" "#).unwrap_err();
        assert_eq!(err.offset(), Some(17));
        assert_eq!(parse_property("").unwrap_err().offset(), Some(0));
        assert!(parse_property(r#"Pmax=? [ F "goal ]"#).is_err());
        assert!(parse_property(r#"Pmax=? [ F "goal" ] extra"#).is_err());
        assert!(parse_property(r#"Q=? [ F "goal" ]"#).is_err());
    }
}
