use serde::{Deserialize, Serialize};

use crate::keys::{Jwk, KeyError, KeyRecord};

/// Path, relative to the issuer URL, at which the discovery document lives.
pub const DISCOVERY_PATH: &str = "/.well-known/captoken-configuration";

pub fn discovery_url(issuer: &str) -> String {
    format!("{}{}", issuer.trim_end_matches('/'), DISCOVERY_PATH)
}

/// Issuer discovery document. `issuer` must match the `iss` claim of the
/// tokens this issuer signs, byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuerMetadata {
    pub issuer: String,
    pub keys: Vec<Jwk>,
    pub token_endpoint: String,
    pub revocation_endpoint: String,
    pub registration_endpoint: String,
}

impl IssuerMetadata {
    /// Builds the document for `issuer`. Only public halves are published.
    pub fn new<'a>(issuer: &str, keys: impl IntoIterator<Item = &'a KeyRecord>) -> Self {
        let base = issuer.trim_end_matches('/');
        IssuerMetadata {
            issuer: issuer.to_string(),
            keys: keys.into_iter().map(KeyRecord::to_jwk).collect(),
            token_endpoint: format!("{base}/token"),
            revocation_endpoint: format!("{base}/revoke"),
            registration_endpoint: format!("{base}/register"),
        }
    }

    pub fn find_key(&self, key_id: &str) -> Option<Result<KeyRecord, KeyError>> {
        self.keys
            .iter()
            .find(|k| k.kid == key_id)
            .map(KeyRecord::from_jwk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_shape() {
        let key = KeyRecord::from_seed("k1", [3u8; 32]);
        let meta = IssuerMetadata::new("https://issuer.example/", [&key]);
        assert_eq!(meta.token_endpoint, "https://issuer.example/token");
        assert_eq!(
            discovery_url("https://issuer.example/"),
            "https://issuer.example/.well-known/captoken-configuration"
        );
        let json = serde_json::to_value(&meta).unwrap();
        assert_eq!(json["keys"][0]["kid"], "k1");
        assert!(json["keys"][0].get("d").is_none());
        assert_eq!(meta.find_key("k1").unwrap().unwrap(), key.public_only());
        assert!(meta.find_key("k2").is_none());
    }
}
