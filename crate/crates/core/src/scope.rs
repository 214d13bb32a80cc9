//! Path-scoped capabilities.
//!
//! A [`Scope`] pairs one [`Operation`] with a normalized absolute path. The
//! textual form is `<op>:<path>`, e.g. `read:/ligo/frames`; lists of scopes
//! are serialized space-separated.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operation {
    Read,
    Write,
}

impl Operation {
    pub const ALL: [Operation; 2] = [Operation::Read, Operation::Write];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Read => "read",
            Operation::Write => "write",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operation {
    type Err = ScopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(Operation::Read),
            "write" => Ok(Operation::Write),
            other => Err(ScopeError::UnknownOperation(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScopeError {
    #[error("malformed scope {0:?}: expected <operation>:<path>")]
    MissingColon(String),
    #[error("unknown operation {0:?}")]
    UnknownOperation(String),
    #[error("path {0:?} is not absolute")]
    RelativePath(String),
    #[error("path {0:?} contains a dot segment")]
    DotSegment(String),
    #[error("path contains a NUL byte")]
    NulByte,
}

/// Normalize an absolute path: collapse repeated slashes, drop a trailing
/// slash, and reject `.`/`..` segments outright.
pub fn normalize_path(path: &str) -> Result<String, ScopeError> {
    if !path.starts_with('/') {
        return Err(ScopeError::RelativePath(path.to_string()));
    }
    if path.contains('\0') {
        return Err(ScopeError::NulByte);
    }
    let mut out = String::with_capacity(path.len());
    for segment in path.split('/').filter(|s| !s.is_empty()) {
        if segment == "." || segment == ".." {
            return Err(ScopeError::DotSegment(path.to_string()));
        }
        out.push('/');
        out.push_str(segment);
    }
    if out.is_empty() {
        out.push('/');
    }
    Ok(out)
}

/// One (operation, path-prefix) capability.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scope {
    operation: Operation,
    path: String,
}

impl Scope {
    /// Builds a scope, normalizing `path`.
    pub fn new(operation: Operation, path: &str) -> Result<Self, ScopeError> {
        Ok(Scope {
            operation,
            path: normalize_path(path)?,
        })
    }

    pub fn read(path: &str) -> Result<Self, ScopeError> {
        Self::new(Operation::Read, path)
    }

    pub fn write(path: &str) -> Result<Self, ScopeError> {
        Self::new(Operation::Write, path)
    }

    pub fn operation(&self) -> Operation {
        self.operation
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    fn segments(&self) -> impl Iterator<Item = &str> {
        self.path.split('/').filter(|s| !s.is_empty())
    }

    /// True iff this granted scope covers `requested`: same operation and
    /// this path is a segment-wise prefix of the requested path.
    pub fn permits(&self, requested: &Scope) -> bool {
        if self.operation != requested.operation {
            return false;
        }
        let mut wanted = requested.segments();
        self.segments().all(|granted| wanted.next() == Some(granted))
    }

    /// Greatest lower bound on the prefix lattice: the narrower of the two
    /// when one covers the other, otherwise nothing.
    pub fn meet(&self, other: &Scope) -> Option<Scope> {
        if self.permits(other) {
            Some(other.clone())
        } else if other.permits(self) {
            Some(self.clone())
        } else {
            None
        }
    }
}

/// Parses `<operation>:<path>` into a normalized [`Scope`].
pub fn parse_scope(text: &str) -> Result<Scope, ScopeError> {
    let (op, path) = text
        .split_once(':')
        .ok_or_else(|| ScopeError::MissingColon(text.to_string()))?;
    Scope::new(op.parse()?, path)
}

/// Standalone form of [`Scope::permits`].
pub fn scope_permits(granted: &Scope, requested: &Scope) -> bool {
    granted.permits(requested)
}

/// True iff every scope in `requested` is permitted by some scope in `granted`.
pub fn covers_all(granted: &[Scope], requested: &[Scope]) -> bool {
    requested
        .iter()
        .all(|r| granted.iter().any(|g| g.permits(r)))
}

/// Parses a space-separated scope list. Empty input yields an empty list.
pub fn parse_scope_list(text: &str) -> Result<Vec<Scope>, ScopeError> {
    text.split_whitespace().map(parse_scope).collect()
}

pub fn format_scope_list(scopes: &[Scope]) -> String {
    scopes
        .iter()
        .map(Scope::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Removes exact duplicates, keeping first occurrence order.
pub fn dedup_scopes(scopes: impl IntoIterator<Item = Scope>) -> Vec<Scope> {
    let mut out: Vec<Scope> = Vec::new();
    for s in scopes {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Order-insensitive equality of two scope lists.
pub fn same_scope_set(a: &[Scope], b: &[Scope]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    a.dedup();
    b.sort();
    b.dedup();
    a == b
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.operation, self.path)
    }
}

impl FromStr for Scope {
    type Err = ScopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_scope(s)
    }
}

impl Serialize for Scope {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_scope(&text).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `Vec<Scope>` as one space-separated string.
pub mod space_separated {
    use super::*;

    pub fn serialize<S: Serializer>(scopes: &[Scope], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_scope_list(scopes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<Scope>, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_scope_list(&text).map_err(serde::de::Error::custom)
    }
}
