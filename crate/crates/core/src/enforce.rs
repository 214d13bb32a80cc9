use std::fmt;

use crate::claims::TokenClaims;
use crate::scope::{Operation, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DenyReason {
    NoMatchingScope,
    OriginMismatch,
    BadPath,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::NoMatchingScope => "NoMatchingScope",
            DenyReason::OriginMismatch => "OriginMismatch",
            DenyReason::BadPath => "BadPath",
        }
    }
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

/// Authorizes `operation` on `path` for already-verified `claims`.
///
/// The origin binding is checked before scopes: a token bound to another
/// node is unusable here regardless of what it grants.
pub fn enforce(
    claims: &TokenClaims,
    operation: Operation,
    path: &str,
    local_origin: Option<&str>,
) -> Decision {
    let Ok(requested) = Scope::new(operation, path) else {
        return Decision::Deny(DenyReason::BadPath);
    };
    if let Some(bound) = claims.origin.as_deref() {
        if local_origin != Some(bound) {
            return Decision::Deny(DenyReason::OriginMismatch);
        }
    }
    if claims.scopes.iter().any(|granted| granted.permits(&requested)) {
        Decision::Allow
    } else {
        Decision::Deny(DenyReason::NoMatchingScope)
    }
}
