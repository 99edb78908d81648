//! Model formula mini-language.
//!
//! ```text
//! formula := ident '~' term ('+' term)*
//! term    := 's' '(' ident (',' arg)* ')'   smooth, optionally by a factor
//!          | 're' '(' ident ')'              random effect
//!          | ident                           parametric factor
//! arg     := 'by' '=' ident | 'k' '=' INT | 'bs' '=' ('"re"' | 're')
//! ```
//!
//! `s(f, bs="re")` is accepted as another spelling of `re(f)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{GammError, Result};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    Smooth,
    SmoothBy,
    ParametricFactor,
    RandomEffect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSpec {
    pub kind: TermKind,
    pub variable: String,
    pub by_factor: Option<String>,
    /// Basis dimension for smooth kinds; `None` otherwise.
    pub k: Option<usize>,
}

impl TermSpec {
    pub fn smooth(variable: &str, k: usize) -> Self {
        Self { kind: TermKind::Smooth, variable: variable.into(), by_factor: None, k: Some(k) }
    }

    pub fn smooth_by(variable: &str, by: &str, k: usize) -> Self {
        Self { kind: TermKind::SmoothBy, variable: variable.into(), by_factor: Some(by.into()), k: Some(k) }
    }

    pub fn factor(variable: &str) -> Self {
        Self { kind: TermKind::ParametricFactor, variable: variable.into(), by_factor: None, k: None }
    }

    pub fn random_effect(variable: &str) -> Self {
        Self { kind: TermKind::RandomEffect, variable: variable.into(), by_factor: None, k: None }
    }

    /// Label used as the term id, e.g. `s(log_Param)`, `s(x,by=Type)`, `re(Architecture)`.
    pub fn label(&self) -> String {
        match self.kind {
            TermKind::Smooth => format!("s({})", self.variable),
            TermKind::SmoothBy => format!("s({},by={})", self.variable, self.by_factor.as_deref().unwrap_or("")),
            TermKind::ParametricFactor => self.variable.clone(),
            TermKind::RandomEffect => format!("re({})", self.variable),
        }
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.k) {
            (TermKind::Smooth, Some(k)) if k != DEFAULT_K => write!(f, "s({}, k={k})", self.variable),
            (TermKind::SmoothBy, Some(k)) if k != DEFAULT_K => {
                write!(f, "s({}, by={}, k={k})", self.variable, self.by_factor.as_deref().unwrap_or(""))
            }
            (TermKind::SmoothBy, _) => write!(f, "s({}, by={})", self.variable, self.by_factor.as_deref().unwrap_or("")),
            _ => f.write_str(&self.label()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formula {
    pub response: String,
    pub terms: Vec<TermSpec>,
}

impl Formula {
    pub fn new(response: &str, terms: Vec<TermSpec>) -> Result<Self> {
        if terms.is_empty() {
            return Err(GammError::SyntaxError { column: 1, message: "formula needs at least one term".into() });
        }
        let f = Formula { response: response.into(), terms };
        f.check()?;
        Ok(f)
    }

    fn check(&self) -> Result<()> {
        for (i, t) in self.terms.iter().enumerate() {
            if t.k.is_some_and(|k| k < 4) {
                return Err(GammError::SyntaxError { column: 1, message: format!("k must be at least 4 in `{t}`") });
            }
            if self.terms[..i].iter().any(|u| same_term(u, t)) {
                return Err(GammError::DuplicateTerm(t.label()));
            }
        }
        Ok(())
    }

    /// Every column the formula reads, response first, without repeats.
    pub fn variables(&self) -> Vec<&str> {
        let mut out = vec![self.response.as_str()];
        for t in &self.terms {
            for v in std::iter::once(t.variable.as_str()).chain(t.by_factor.as_deref()) {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }
}

fn same_term(a: &TermSpec, b: &TermSpec) -> bool {
    match (a.kind, b.kind) {
        (TermKind::RandomEffect, TermKind::RandomEffect) => a.variable == b.variable,
        (x, y) => x == y && a.variable == b.variable && a.by_factor == b.by_factor,
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Formula {
    type Err = GammError;

    fn from_str(s: &str) -> Result<Self> {
        parse_formula(s)
    }
}

pub fn parse_formula(text: &str) -> Result<Formula> {
    let mut p = Parser { chars: text.chars().collect(), pos: 0 };
    p.skip_ws();
    let response = p.ident().ok_or_else(|| p.error_here("expected a response variable"))?;
    p.skip_ws();
    if !p.eat('~') {
        return Err(p.error_here("expected `~`"));
    }
    let mut terms: Vec<TermSpec> = Vec::new();
    loop {
        p.skip_ws();
        let start = p.column();
        let term = p.term(start)?;
        if term.variable == response || term.by_factor.as_deref() == Some(response.as_str()) {
            return Err(GammError::SyntaxError {
                column: start,
                message: format!("response `{response}` cannot appear in a term"),
            });
        }
        if terms.iter().any(|u| same_term(u, &term)) {
            return Err(GammError::DuplicateTerm(term.label()));
        }
        terms.push(term);
        p.skip_ws();
        if p.at_end() {
            break;
        }
        if !p.eat('+') {
            return Err(p.error_here("expected `+` or end of formula"));
        }
    }
    Ok(Formula { response, terms })
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn column(&self) -> usize {
        self.pos + 1
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error_here(&self, message: &str) -> GammError {
        GammError::SyntaxError { column: self.column(), message: message.into() }
    }

    fn ident(&mut self) -> Option<String> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_alphabetic() || c == '_' || c == '.' => self.pos += 1,
            _ => return None,
        }
        while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '.') {
            self.pos += 1;
        }
        Some(self.chars[start..self.pos].iter().collect())
    }

    fn term(&mut self, start: usize) -> Result<TermSpec> {
        let err = |message: String| GammError::SyntaxError { column: start, message };
        let name = self.ident().ok_or_else(|| err("expected a term".into()))?;
        self.skip_ws();
        if !self.eat('(') {
            return Ok(TermSpec::factor(&name));
        }
        self.skip_ws();
        let variable = self.ident().ok_or_else(|| err(format!("`{name}(...)` needs a variable")))?;
        let mut by = None;
        let mut k = None;
        let mut bs_re = false;
        loop {
            self.skip_ws();
            if self.eat(')') {
                break;
            }
            if !self.eat(',') {
                return Err(err(format!("expected `,` or `)` in `{name}(...)`")));
            }
            self.skip_ws();
            let key = self.ident().ok_or_else(|| err("expected an argument name".into()))?;
            self.skip_ws();
            if !self.eat('=') {
                return Err(err(format!("expected `=` after `{key}`")));
            }
            self.skip_ws();
            match key.as_str() {
                "by" if name == "s" && by.is_none() => {
                    by = Some(self.ident().ok_or_else(|| err("`by` needs a factor name".into()))?);
                }
                "k" if name == "s" && k.is_none() => {
                    let digits_start = self.pos;
                    while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                        self.pos += 1;
                    }
                    let digits: String = self.chars[digits_start..self.pos].iter().collect();
                    let value: usize = digits.parse().map_err(|_| err("`k` needs an integer".into()))?;
                    if value < 4 {
                        return Err(err(format!("k = {value} is below the minimum of 4")));
                    }
                    k = Some(value);
                }
                "bs" if name == "s" && !bs_re => {
                    let quoted = self.eat('"');
                    let v = self.ident().unwrap_or_default();
                    if quoted && !self.eat('"') {
                        return Err(err("unterminated string".into()));
                    }
                    if v != "re" {
                        return Err(err(format!("unsupported basis `{v}`")));
                    }
                    bs_re = true;
                }
                _ => return Err(err(format!("unexpected argument `{key}` in `{name}(...)`"))),
            }
        }
        match name.as_str() {
            "s" if bs_re => {
                if by.is_some() || k.is_some() {
                    return Err(err("`bs=\"re\"` takes no other arguments".into()));
                }
                Ok(TermSpec::random_effect(&variable))
            }
            "s" => Ok(match by {
                Some(b) => TermSpec::smooth_by(&variable, &b, k.unwrap_or(DEFAULT_K)),
                None => TermSpec::smooth(&variable, k.unwrap_or(DEFAULT_K)),
            }),
            "re" => Ok(TermSpec::random_effect(&variable)),
            other => Err(err(format!("unknown term function `{other}`"))),
        }
    }
}
