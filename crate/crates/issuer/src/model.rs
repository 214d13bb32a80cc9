//! Persistent records of the token server.
//!
//! Secrets (client secrets, registration tokens, authorization codes and
//! refresh handles) are never stored in plaintext. Client credentials are
//! kept as salted hashes; codes and refresh handles, being 256-bit random
//! values, are indexed by their SHA-256 digest.

use std::collections::BTreeMap;
use std::fmt;

use captoken_core::secret::digest_hex;
use captoken_core::{Scope, Timestamp};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

/// Wildcard accepted in [`PolicyRule::client_id`].
pub const ANY_CLIENT: &str = "*";

/// `salt || SHA-256(salt || secret)`, encoded as `hex(salt)$hex(hash)`.
#[derive(Clone, PartialEq, Eq)]
pub struct SaltedHash {
    salt: [u8; 16],
    hash: [u8; 32],
}

impl SaltedHash {
    pub fn new<R: RngCore + CryptoRng>(secret: &str, rng: &mut R) -> Self {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        SaltedHash {
            salt,
            hash: Self::compute(&salt, secret),
        }
    }

    fn compute(salt: &[u8; 16], secret: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(salt);
        h.update(secret.as_bytes());
        h.finalize().into()
    }

    pub fn matches(&self, candidate: &str) -> bool {
        Self::compute(&self.salt, candidate).ct_eq(&self.hash).into()
    }
}

impl fmt::Debug for SaltedHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SaltedHash(..)")
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex<const N: usize>(s: &str) -> Option<[u8; N]> {
    if s.len() != 2 * N {
        return None;
    }
    let mut out = [0u8; N];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        out[i] = u8::from_str_radix(std::str::from_utf8(chunk).ok()?, 16).ok()?;
    }
    Some(out)
}

impl Serialize for SaltedHash {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("{}${}", hex(&self.salt), hex(&self.hash)))
    }
}

impl<'de> Deserialize<'de> for SaltedHash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        let (salt, hash) = text
            .split_once('$')
            .ok_or_else(|| serde::de::Error::custom("expected salt$hash"))?;
        Ok(SaltedHash {
            salt: unhex(salt).ok_or_else(|| serde::de::Error::custom("bad salt"))?,
            hash: unhex(hash).ok_or_else(|| serde::de::Error::custom("bad hash"))?,
        })
    }
}

/// Digest used to index single-use codes and refresh handles.
pub fn secret_id(secret: &str) -> String {
    digest_hex(secret.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: String,
    pub client_secret_hash: SaltedHash,
    pub display_name: String,
    pub allowed_scopes: Vec<Scope>,
    pub registration_token_hash: SaltedHash,
    pub created_at: Timestamp,
}

/// Client record as returned to its owner: no credential hashes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientView {
    pub client_id: String,
    pub display_name: String,
    pub allowed_scopes: Vec<Scope>,
    pub created_at: Timestamp,
}

impl From<&ClientRecord> for ClientView {
    fn from(c: &ClientRecord) -> Self {
        ClientView {
            client_id: c.client_id.clone(),
            display_name: c.display_name.clone(),
            allowed_scopes: c.allowed_scopes.clone(),
            created_at: c.created_at,
        }
    }
}

/// Attribute equality → grantable scopes, optionally restricted to one client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    #[serde(default = "any_client")]
    pub client_id: String,
    pub attribute_key: String,
    pub attribute_value: String,
    #[serde(alias = "scopes")]
    pub grantable_scopes: Vec<Scope>,
}

fn any_client() -> String {
    ANY_CLIENT.to_string()
}

impl PolicyRule {
    pub fn new(
        client_id: &str,
        attribute_key: &str,
        attribute_value: &str,
        grantable_scopes: Vec<Scope>,
    ) -> Self {
        PolicyRule {
            client_id: client_id.into(),
            attribute_key: attribute_key.into(),
            attribute_value: attribute_value.into(),
            grantable_scopes,
        }
    }

    pub fn applies(&self, client_id: &str, attributes: &BTreeMap<String, String>) -> bool {
        (self.client_id == ANY_CLIENT || self.client_id == client_id)
            && attributes.get(&self.attribute_key) == Some(&self.attribute_value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshTokenRecord {
    /// SHA-256 of the handle; the handle itself is only ever held by the client.
    pub handle_id: String,
    pub user: String,
    pub client_id: String,
    pub granted_scopes: Vec<Scope>,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub revoked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationGrant {
    pub code_id: String,
    pub user: String,
    pub client_id: String,
    pub approved_scopes: Vec<Scope>,
    pub expires_at: Timestamp,
    pub consumed: bool,
}

/// One minted access token, as seen by the attenuation audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub token_id: String,
    pub handle_id: String,
    pub minted_scopes: Vec<Scope>,
    pub minted_at: Timestamp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ClientEvent {
    Put(ClientRecord),
    Delete { client_id: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum GrantEvent {
    Issued(AuthorizationGrant),
    Consumed { code_id: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RefreshEvent {
    Issued(RefreshTokenRecord),
    Revoked { handle_id: String },
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn salted_hash_matches_and_roundtrips() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let h = SaltedHash::new("s3cret", &mut rng);
        assert!(h.matches("s3cret"));
        assert!(!h.matches("s3cre"));
        let json = serde_json::to_string(&h).unwrap();
        assert!(!json.contains("s3cret"));
        let back: SaltedHash = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
        let other = SaltedHash::new("s3cret", &mut rng);
        assert_ne!(other, h, "salt must differ");
    }

    #[test]
    fn rule_matching() {
        let rule = PolicyRule::new("*", "group", "ligo", vec![]);
        let attrs = BTreeMap::from([("group".to_string(), "ligo".to_string())]);
        assert!(rule.applies("c1", &attrs));
        assert!(!rule.applies("c1", &BTreeMap::new()));
        let pinned = PolicyRule::new("c2", "group", "ligo", vec![]);
        assert!(!pinned.applies("c1", &attrs));
        assert!(pinned.applies("c2", &attrs));
    }
}
