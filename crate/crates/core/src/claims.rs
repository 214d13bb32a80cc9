use serde::{Deserialize, Deserializer, Serialize};

use crate::scope::{space_separated, Scope};

/// Integer seconds since the Unix epoch.
pub type Timestamp = i64;

/// Profile tag carried in every token's `ver` claim.
pub const PROFILE_VERSION: &str = "captoken:1.0";

/// Audience entry accepted by every data service.
pub const ANY_AUDIENCE: &str = "any";

/// Default lifetime cap for access tokens, in seconds.
pub const DEFAULT_ACCESS_LIFETIME: i64 = 600;

/// Credential kinds in the model. Only access tokens are signed
/// capability tokens; refresh tokens are opaque handles that never leave
/// the submit domain, and identity tokens never travel with jobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Identity,
    Refresh,
    Access,
}

/// The capability payload of a signed access token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClaims {
    #[serde(rename = "iss")]
    pub issuer: String,
    #[serde(rename = "sub")]
    pub subject: String,
    #[serde(rename = "aud", deserialize_with = "one_or_many")]
    pub audience: Vec<String>,
    #[serde(rename = "scope", with = "space_separated")]
    pub scopes: Vec<Scope>,
    #[serde(rename = "iat")]
    pub issued_at: Timestamp,
    #[serde(rename = "nbf")]
    pub not_before: Timestamp,
    #[serde(rename = "exp")]
    pub expires_at: Timestamp,
    #[serde(rename = "jti")]
    pub token_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(rename = "ver")]
    pub version: String,
}

fn one_or_many<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(deserializer)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

impl TokenClaims {
    /// Structural checks that hold for every access token, independent of
    /// any particular issuer's lifetime policy.
    pub fn check(&self) -> Result<(), String> {
        if self.issuer.is_empty() {
            return Err("empty issuer".into());
        }
        if self.token_id.is_empty() {
            return Err("empty token id".into());
        }
        if self.audience.is_empty() {
            return Err("empty audience".into());
        }
        if self.scopes.is_empty() {
            return Err("access token without scopes".into());
        }
        if self.not_before > self.issued_at {
            return Err("not_before is after issued_at".into());
        }
        if self.issued_at > self.expires_at {
            return Err("expires_at is before issued_at".into());
        }
        Ok(())
    }

    /// [`check`](Self::check) plus the lifetime cap.
    pub fn check_with_lifetime(&self, max_lifetime: i64) -> Result<(), String> {
        self.check()?;
        if self.expires_at - self.issued_at > max_lifetime {
            return Err(format!("lifetime exceeds {max_lifetime}s"));
        }
        Ok(())
    }

    pub fn accepts_audience(&self, audience: &str) -> bool {
        self.audience.iter().any(|a| a == audience || a == ANY_AUDIENCE)
    }

    pub fn lifetime(&self) -> i64 {
        self.expires_at - self.issued_at
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TokenClaims {
        TokenClaims {
            issuer: "https://issuer.example".into(),
            subject: "alice".into(),
            audience: vec!["https://data.example".into()],
            scopes: vec![Scope::read("/ligo").unwrap()],
            issued_at: 1000,
            not_before: 1000,
            expires_at: 1600,
            token_id: "t1".into(),
            origin: None,
            version: PROFILE_VERSION.into(),
        }
    }

    #[test]
    fn wire_names_and_order() {
        let json = serde_json::to_string(&sample()).unwrap();
        assert_eq!(
            json,
            r#"{"iss":"https://issuer.example","sub":"alice","aud":["https://data.example"],"scope":"read:/ligo","iat":1000,"nbf":1000,"exp":1600,"jti":"t1","ver":"captoken:1.0"}"#
        );
    }

    #[test]
    fn audience_accepts_bare_string() {
        let json = r#"{"iss":"i","sub":"s","aud":"any","scope":"read:/","iat":1,"nbf":1,"exp":2,"jti":"j","ver":"v"}"#;
        let claims: TokenClaims = serde_json::from_str(json).unwrap();
        assert_eq!(claims.audience, vec!["any".to_string()]);
        assert!(claims.accepts_audience("https://whatever"));
    }

    #[test]
    fn window_invariants() {
        let mut c = sample();
        assert!(c.check_with_lifetime(600).is_ok());
        assert!(c.check_with_lifetime(599).is_err());
        c.expires_at = 999;
        assert!(c.check().is_err());
        let mut c = sample();
        c.not_before = 1001;
        assert!(c.check().is_err());
        let mut c = sample();
        c.scopes.clear();
        assert!(c.check().is_err());
    }
}
