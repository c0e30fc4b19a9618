//! Query AST and its text form.
//!
//! ```text
//! query   := "all"
//!          | "code:" CODE
//!          | "vol:" CODE ":" range
//!          | "int:" CODE ":" range
//!          | "date:[" DATE? "," DATE? "]"
//!          | "patient:" (TOKEN | QUOTED)
//!          | ("and" | "or") "(" query ("," query)* ")"
//!          | "not(" query ")"
//! range   := "[" NUMBER? "," NUMBER? "]"
//! ```
//!
//! Ranges are inclusive; an empty bound is open. Whitespace between tokens
//! is ignored.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::SearchError;

pub const MAX_QUERY_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Query {
    MatchAll,
    HasCode(String),
    /// Some annotation with this code has a volume in range.
    VolumeInRange {
        code: String,
        min: Option<f64>,
        max: Option<f64>,
    },
    IntensityInRange {
        code: String,
        min: Option<f64>,
        max: Option<f64>,
    },
    DateInRange {
        min: Option<NaiveDate>,
        max: Option<NaiveDate>,
    },
    PatientIs(String),
    And(Vec<Query>),
    Or(Vec<Query>),
    Not(Box<Query>),
}

pub(crate) fn is_code_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-')
}

pub(crate) fn is_valid_code(code: &str) -> bool {
    !code.is_empty() && code.chars().all(is_code_char)
}

impl Query {
    pub fn and(children: impl IntoIterator<Item = Query>) -> Self {
        Query::And(children.into_iter().collect())
    }

    pub fn or(children: impl IntoIterator<Item = Query>) -> Self {
        Query::Or(children.into_iter().collect())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(q: Query) -> Self {
        Query::Not(Box::new(q))
    }

    /// Leaves have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Query::And(c) | Query::Or(c) => 1 + c.iter().map(Query::depth).max().unwrap_or(0),
            Query::Not(q) => 1 + q.depth(),
            _ => 1,
        }
    }

    /// True when the query contains no negation.
    pub fn is_monotone(&self) -> bool {
        match self {
            Query::Not(_) => false,
            Query::And(c) | Query::Or(c) => c.iter().all(Query::is_monotone),
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.depth() > MAX_QUERY_DEPTH {
            return Err(SearchError::MalformedQuery(format!(
                "query depth {} exceeds {MAX_QUERY_DEPTH}",
                self.depth()
            )));
        }
        self.validate_node()
    }

    fn validate_node(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::MalformedQuery(m));
        match self {
            Query::MatchAll => Ok(()),
            Query::HasCode(code) if !is_valid_code(code) => bad(format!("invalid code {code:?}")),
            Query::HasCode(_) => Ok(()),
            Query::VolumeInRange { code, min, max } | Query::IntensityInRange { code, min, max } => {
                if !is_valid_code(code) {
                    return bad(format!("invalid code {code:?}"));
                }
                if min.is_some_and(|v| !v.is_finite()) || max.is_some_and(|v| !v.is_finite()) {
                    return bad("range bounds must be finite".into());
                }
                if let (Some(lo), Some(hi)) = (min, max) {
                    if lo > hi {
                        return bad(format!("range [{lo},{hi}] has min > max"));
                    }
                }
                Ok(())
            }
            Query::DateInRange { min: Some(lo), max: Some(hi) } if lo > hi => {
                bad(format!("date range [{lo},{hi}] has min > max"))
            }
            Query::DateInRange { .. } => Ok(()),
            Query::PatientIs(p) if p.is_empty() => bad("empty patient pseudonym".into()),
            Query::PatientIs(_) => Ok(()),
            Query::And(c) | Query::Or(c) if c.is_empty() => bad("and/or need at least one operand".into()),
            Query::And(c) | Query::Or(c) => c.iter().try_for_each(Query::validate_node),
            Query::Not(q) => q.validate_node(),
        }
    }
}

fn write_bound<T: fmt::Display>(f: &mut fmt::Formatter<'_>, v: &Option<T>) -> fmt::Result {
    match v {
        Some(v) => write!(f, "{v}"),
        None => Ok(()),
    }
}

fn write_range<T: fmt::Display>(f: &mut fmt::Formatter<'_>, min: &Option<T>, max: &Option<T>) -> fmt::Result {
    f.write_str("[")?;
    write_bound(f, min)?;
    f.write_str(",")?;
    write_bound(f, max)?;
    f.write_str("]")
}

fn is_token_char(c: char) -> bool {
    is_code_char(c) || c == ':'
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::MatchAll => f.write_str("all"),
            Query::HasCode(c) => write!(f, "code:{c}"),
            Query::VolumeInRange { code, min, max } => {
                write!(f, "vol:{code}:")?;
                write_range(f, min, max)
            }
            Query::IntensityInRange { code, min, max } => {
                write!(f, "int:{code}:")?;
                write_range(f, min, max)
            }
            Query::DateInRange { min, max } => {
                f.write_str("date:")?;
                write_range(f, min, max)
            }
            Query::PatientIs(p) if !p.is_empty() && p.chars().all(is_token_char) => write!(f, "patient:{p}"),
            Query::PatientIs(p) => {
                f.write_str("patient:\"")?;
                for c in p.chars() {
                    if c == '"' || c == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("\"")
            }
            Query::And(c) | Query::Or(c) => {
                f.write_str(if matches!(self, Query::And(_)) { "and(" } else { "or(" })?;
                for (i, q) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{q}")?;
                }
                f.write_str(")")
            }
            Query::Not(q) => write!(f, "not({q})"),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl fmt::Display) -> Result<T, SearchError> {
        Err(SearchError::MalformedQuery(format!("at offset {}: {msg}", self.pos)))
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), SearchError> {
        if self.eat(s) {
            Ok(())
        } else {
            self.err(format!("expected {s:?}"))
        }
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let rest = self.rest();
        let end = rest.find(|c| !pred(c)).unwrap_or(rest.len());
        self.pos += end;
        &rest[..end]
    }

    fn code(&mut self) -> Result<String, SearchError> {
        self.skip_ws();
        let code = self.take_while(is_code_char);
        if code.is_empty() {
            return self.err("expected a code");
        }
        Ok(code.to_owned())
    }

    fn bound<T>(&mut self, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>, SearchError> {
        self.skip_ws();
        let raw = self.take_while(|c| c != ',' && c != ']').trim();
        if raw.is_empty() {
            return Ok(None);
        }
        match parse(raw) {
            Some(v) => Ok(Some(v)),
            None => self.err(format!("invalid bound {raw:?}")),
        }
    }

    fn range<T>(&mut self, parse: impl Fn(&str) -> Option<T>) -> Result<(Option<T>, Option<T>), SearchError> {
        self.expect("[")?;
        let min = self.bound(&parse)?;
        self.expect(",")?;
        let max = self.bound(&parse)?;
        self.expect("]")?;
        Ok((min, max))
    }

    fn number(raw: &str) -> Option<f64> {
        raw.parse::<f64>().ok().filter(|v| v.is_finite())
    }

    fn patient(&mut self) -> Result<String, SearchError> {
        self.skip_ws();
        if !self.eat("\"") {
            let token = self.take_while(is_token_char);
            if token.is_empty() {
                return self.err("expected a patient pseudonym");
            }
            return Ok(token.to_owned());
        }
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => break,
                },
                c => out.push(c),
            }
        }
        self.pos = self.src.len();
        self.err("unterminated quoted pseudonym")
    }

    fn query(&mut self, depth: usize) -> Result<Query, SearchError> {
        if depth > MAX_QUERY_DEPTH {
            return self.err(format!("query nests deeper than {MAX_QUERY_DEPTH}"));
        }
        self.skip_ws();
        let word = self.take_while(|c| c.is_ascii_alphabetic());
        match word {
            "all" => Ok(Query::MatchAll),
            "code" => {
                self.expect(":")?;
                Ok(Query::HasCode(self.code()?))
            }
            "vol" | "int" => {
                self.expect(":")?;
                let code = self.code()?;
                self.expect(":")?;
                let (min, max) = self.range(Self::number)?;
                Ok(if word == "vol" {
                    Query::VolumeInRange { code, min, max }
                } else {
                    Query::IntensityInRange { code, min, max }
                })
            }
            "date" => {
                self.expect(":")?;
                let (min, max) = self.range(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())?;
                Ok(Query::DateInRange { min, max })
            }
            "patient" => {
                self.expect(":")?;
                Ok(Query::PatientIs(self.patient()?))
            }
            "and" | "or" => {
                self.expect("(")?;
                let mut children = vec![self.query(depth + 1)?];
                while self.eat(",") {
                    children.push(self.query(depth + 1)?);
                }
                self.expect(")")?;
                Ok(if word == "and" { Query::And(children) } else { Query::Or(children) })
            }
            "not" => {
                self.expect("(")?;
                let inner = self.query(depth + 1)?;
                self.expect(")")?;
                Ok(Query::not(inner))
            }
            "" => self.err("expected a query"),
            other => self.err(format!("unknown operator {other:?}")),
        }
    }
}

/// Parses and validates the text form.
pub fn parse_query(text: &str) -> Result<Query, SearchError> {
    let mut p = Parser { src: text, pos: 0 };
    let q = p.query(1)?;
    p.skip_ws();
    if !p.rest().is_empty() {
        return p.err("trailing input");
    }
    q.validate()?;
    Ok(q)
}

impl std::str::FromStr for Query {
    type Err = SearchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_query(s)
    }
}
