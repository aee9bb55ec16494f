//! Filter expressions over node properties and the compact
//! `path op value` text grammar used in URLs and on the command line.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::QueryError;
use crate::attrs::type_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "in")]
    In,
    #[serde(rename = "like")]
    Like,
    #[serde(rename = "has_key")]
    HasKey,
    #[serde(rename = "of_type")]
    OfType,
}

impl Op {
    pub const ALL: [Op; 10] = [Op::Eq, Op::Ne, Op::Lt, Op::Le, Op::Gt, Op::Ge, Op::In, Op::Like, Op::HasKey, Op::OfType];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Eq => "==",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::In => "in",
            Op::Like => "like",
            Op::HasKey => "has_key",
            Op::OfType => "of_type",
        }
    }

    /// Spelling in the text grammar.
    pub fn token(self) -> &'static str {
        match self {
            Op::In => "=in=",
            Op::Like => "=like=",
            Op::HasKey => "=has_key=",
            Op::OfType => "=of_type=",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Op {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Op::ALL
            .into_iter()
            .find(|op| op.as_str() == s || op.token() == s)
            .ok_or_else(|| QueryError::MalformedFilter(format!("unknown operator `{s}`")))
    }
}

const TYPE_NAMES: [&str; 7] = ["null", "bool", "int", "float", "str", "list", "dict"];

/// One condition `path op operand`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterExpr {
    pub path: String,
    pub op: Op,
    pub value: Value,
}

impl FilterExpr {
    /// Builds a filter, checking that the operand suits the operator.
    pub fn new(path: impl Into<String>, op: Op, value: Value) -> Result<Self, QueryError> {
        let f = FilterExpr { path: path.into(), op, value };
        f.check_operand()?;
        Ok(f)
    }

    pub(crate) fn check_operand(&self) -> Result<(), QueryError> {
        if self.path.is_empty() || self.path.split('.').any(str::is_empty) {
            return Err(QueryError::MalformedFilter(format!("bad path `{}`", self.path)));
        }
        let bad = |why: &str| Err(QueryError::MalformedFilter(format!("{} {} {}: {why}", self.path, self.op, self.value)));
        match self.op {
            Op::Lt | Op::Le | Op::Gt | Op::Ge => {
                if !(self.value.is_number() || self.value.is_string()) {
                    return bad("ordering needs a number or string operand");
                }
            }
            Op::In => {
                if !self.value.is_array() {
                    return bad("`in` needs a list operand");
                }
            }
            Op::Like | Op::HasKey => {
                if !self.value.is_string() {
                    return bad("operand must be a string");
                }
            }
            Op::OfType => match self.value.as_str() {
                Some(t) if TYPE_NAMES.contains(&t) => {}
                _ => return bad("operand must name a value type"),
            },
            Op::Eq | Op::Ne => {}
        }
        Ok(())
    }

    /// Evaluates against the value found at `path`; a missing value never matches.
    pub fn matches(&self, found: Option<&Value>) -> bool {
        let Some(v) = found else { return false };
        match self.op {
            Op::Eq => values_equal(v, &self.value),
            Op::Ne => !values_equal(v, &self.value),
            Op::Lt => compare(v, &self.value) == Some(Ordering::Less),
            Op::Le => matches!(compare(v, &self.value), Some(Ordering::Less | Ordering::Equal)),
            Op::Gt => compare(v, &self.value) == Some(Ordering::Greater),
            Op::Ge => matches!(compare(v, &self.value), Some(Ordering::Greater | Ordering::Equal)),
            Op::In => self.value.as_array().is_some_and(|items| items.iter().any(|i| values_equal(v, i))),
            Op::Like => match (v.as_str(), self.value.as_str()) {
                (Some(s), Some(p)) => like(s, p),
                _ => false,
            },
            Op::HasKey => match (v.as_object(), self.value.as_str()) {
                (Some(m), Some(k)) => m.contains_key(k),
                _ => false,
            },
            Op::OfType => self.value.as_str() == Some(type_name(v)),
        }
    }
}

/// Equality with int/float coercion; no coercion between other types.
pub fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => match (x.as_i64(), y.as_i64()) {
            (Some(i), Some(j)) => i == j,
            _ => x.as_f64() == y.as_f64(),
        },
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| values_equal(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, p)| y.get(k).is_some_and(|q| values_equal(p, q)))
        }
        _ => a == b,
    }
}

fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => match (x.as_i64(), y.as_i64()) {
            (Some(i), Some(j)) => Some(i.cmp(&j)),
            _ => x.as_f64()?.partial_cmp(&y.as_f64()?),
        },
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

/// SQL-style pattern: `%` any run, `_` any single character.
pub fn like(s: &str, pattern: &str) -> bool {
    let s: Vec<char> = s.chars().collect();
    let p: Vec<char> = pattern.chars().collect();
    let (mut i, mut j) = (0, 0);
    let (mut star, mut mark) = (None, 0);
    while i < s.len() {
        if j < p.len() && (p[j] == '_' || p[j] == s[i]) && p[j] != '%' {
            i += 1;
            j += 1;
        } else if j < p.len() && p[j] == '%' {
            star = Some(j);
            mark = i;
            j += 1;
        } else if let Some(st) = star {
            j = st + 1;
            mark += 1;
            i = mark;
        } else {
            return false;
        }
    }
    while j < p.len() && p[j] == '%' {
        j += 1;
    }
    j == p.len()
}

fn is_path_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-'
}

/// Splits at commas that are outside quotes and brackets.
fn split_clauses(text: &str) -> Result<Vec<&str>, QueryError> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut in_str = false;
    let mut escaped = false;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if in_str {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '[' | '{' => depth += 1,
            ']' | '}' => {
                depth -= 1;
                if depth < 0 {
                    return Err(QueryError::Syntax(format!("unbalanced `{c}`")));
                }
            }
            ',' if depth == 0 => {
                out.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if in_str || depth != 0 {
        return Err(QueryError::Syntax("unterminated string or list".into()));
    }
    out.push(&text[start..]);
    Ok(out)
}

fn parse_literal(text: &str) -> Result<Value, QueryError> {
    let t = text.trim();
    if t.is_empty() {
        return Err(QueryError::Syntax("missing value".into()));
    }
    match serde_json::from_str::<Value>(t) {
        Ok(v) => Ok(v),
        Err(_) if t.starts_with(['"', '[', '{']) => Err(QueryError::Syntax(format!("bad literal `{t}`"))),
        Err(_) => Ok(Value::String(t.to_string())),
    }
}

/// Parses `path op value[,path op value...]`. Values use JSON literal syntax;
/// bare words are strings.
pub fn parse_filters(text: &str) -> Result<Vec<FilterExpr>, QueryError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut tokens: Vec<Op> = Op::ALL.to_vec();
    tokens.sort_by_key(|op| std::cmp::Reverse(op.token().len()));
    let mut out = Vec::new();
    for clause in split_clauses(text)? {
        let clause = clause.trim();
        let path_end = clause.find(|c: char| !is_path_char(c)).unwrap_or(clause.len());
        let path = &clause[..path_end];
        if path.is_empty() {
            return Err(QueryError::Syntax(format!("missing path in `{clause}`")));
        }
        let rest = clause[path_end..].trim_start();
        let op = tokens
            .iter()
            .copied()
            .find(|op| rest.starts_with(op.token()))
            .ok_or_else(|| QueryError::Syntax(format!("missing operator in `{clause}`")))?;
        let value = parse_literal(&rest[op.token().len()..])?;
        let f = FilterExpr { path: path.to_string(), op, value };
        f.check_operand().map_err(|e| QueryError::Syntax(e.to_string()))?;
        out.push(f);
    }
    Ok(out)
}

/// Inverse of [`parse_filters`].
pub fn format_filters(filters: &[FilterExpr]) -> String {
    filters
        .iter()
        .map(|f| format!("{}{}{}", f.path, f.op.token(), serde_json::to_string(&f.value).expect("json value")))
        .collect::<Vec<_>>()
        .join(",")
}
