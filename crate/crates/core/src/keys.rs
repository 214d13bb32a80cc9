//! Signing keys and their JWK encoding.

use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The single signature algorithm used by every deployment.
pub const ALGORITHM: &str = "EdDSA";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("unsupported key type {kty}/{crv}")]
    UnsupportedKeyType { kty: String, crv: String },
    #[error("unsupported algorithm {0}")]
    UnsupportedAlgorithm(String),
    #[error("bad key encoding: {0}")]
    Encoding(String),
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyRecord {
    pub key_id: String,
    pub algorithm: String,
    pub public_part: Vec<u8>,
    pub private_part: Option<Vec<u8>>,
}

impl fmt::Debug for KeyRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyRecord")
            .field("key_id", &self.key_id)
            .field("algorithm", &self.algorithm)
            .field("public_part", &URL_SAFE_NO_PAD.encode(&self.public_part))
            .field("private_part", &self.private_part.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl KeyRecord {
    pub fn from_seed(key_id: impl Into<String>, seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        KeyRecord {
            key_id: key_id.into(),
            algorithm: ALGORITHM.to_string(),
            public_part: signing.verifying_key().to_bytes().to_vec(),
            private_part: Some(seed.to_vec()),
        }
    }

    pub fn generate<R: RngCore + CryptoRng>(key_id: impl Into<String>, rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(key_id, seed)
    }

    /// Copy with the private half stripped.
    pub fn public_only(&self) -> KeyRecord {
        KeyRecord {
            private_part: None,
            ..self.clone()
        }
    }

    pub(crate) fn signing_key(&self) -> Option<SigningKey> {
        let bytes: [u8; 32] = self.private_part.as_deref()?.try_into().ok()?;
        Some(SigningKey::from_bytes(&bytes))
    }

    pub(crate) fn verifying_key(&self) -> Option<VerifyingKey> {
        let bytes: [u8; 32] = self.public_part.as_slice().try_into().ok()?;
        VerifyingKey::from_bytes(&bytes).ok()
    }

    pub fn to_jwk(&self) -> Jwk {
        Jwk {
            kty: "OKP".into(),
            crv: "Ed25519".into(),
            alg: self.algorithm.clone(),
            kid: self.key_id.clone(),
            key_use: "sig".into(),
            x: URL_SAFE_NO_PAD.encode(&self.public_part),
        }
    }

    pub fn to_private_jwk(&self) -> Option<PrivateJwk> {
        Some(PrivateJwk {
            public: self.to_jwk(),
            d: URL_SAFE_NO_PAD.encode(self.private_part.as_ref()?),
        })
    }

    pub fn from_jwk(jwk: &Jwk) -> Result<Self, KeyError> {
        if jwk.kty != "OKP" || jwk.crv != "Ed25519" {
            return Err(KeyError::UnsupportedKeyType {
                kty: jwk.kty.clone(),
                crv: jwk.crv.clone(),
            });
        }
        if jwk.alg != ALGORITHM {
            return Err(KeyError::UnsupportedAlgorithm(jwk.alg.clone()));
        }
        let public_part = decode_32(&jwk.x)?;
        let record = KeyRecord {
            key_id: jwk.kid.clone(),
            algorithm: jwk.alg.clone(),
            public_part,
            private_part: None,
        };
        if record.verifying_key().is_none() {
            return Err(KeyError::Encoding("not a valid Ed25519 point".into()));
        }
        Ok(record)
    }

    pub fn from_private_jwk(jwk: &PrivateJwk) -> Result<Self, KeyError> {
        let public = Self::from_jwk(&jwk.public)?;
        let seed: [u8; 32] = decode_32(&jwk.d)?.try_into().expect("checked length");
        let derived = Self::from_seed(public.key_id.clone(), seed);
        if derived.public_part != public.public_part {
            return Err(KeyError::Encoding("private key does not match public key".into()));
        }
        Ok(derived)
    }
}

fn decode_32(text: &str) -> Result<Vec<u8>, KeyError> {
    let bytes = URL_SAFE_NO_PAD
        .decode(text)
        .map_err(|e| KeyError::Encoding(e.to_string()))?;
    if bytes.len() != 32 {
        return Err(KeyError::Encoding(format!("expected 32 bytes, got {}", bytes.len())));
    }
    Ok(bytes)
}

/// Public key in JWK form, as published in discovery documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jwk {
    pub kty: String,
    pub crv: String,
    pub alg: String,
    pub kid: String,
    #[serde(rename = "use", default = "sig")]
    pub key_use: String,
    pub x: String,
}

fn sig() -> String {
    "sig".into()
}

/// Private JWK, used only for key files on the issuer side.
#[derive(Clone, Serialize, Deserialize)]
pub struct PrivateJwk {
    #[serde(flatten)]
    pub public: Jwk,
    pub d: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jwk_roundtrip_and_no_private_leak() {
        let key = KeyRecord::from_seed("k1", [7u8; 32]);
        let jwk = key.to_jwk();
        let json = serde_json::to_string(&jwk).unwrap();
        assert!(!json.contains("\"d\""));
        assert_eq!(KeyRecord::from_jwk(&jwk).unwrap(), key.public_only());

        let private = key.to_private_jwk().unwrap();
        let back = KeyRecord::from_private_jwk(&private).unwrap();
        assert_eq!(back, key);
        assert!(!format!("{key:?}").contains(&URL_SAFE_NO_PAD.encode([7u8; 32])));
    }

    #[test]
    fn rejects_other_algorithms() {
        let mut jwk = KeyRecord::from_seed("k1", [1u8; 32]).to_jwk();
        jwk.alg = "HS256".into();
        assert_eq!(
            KeyRecord::from_jwk(&jwk),
            Err(KeyError::UnsupportedAlgorithm("HS256".into()))
        );
        let mut jwk = KeyRecord::from_seed("k1", [1u8; 32]).to_jwk();
        jwk.kty = "oct".into();
        assert!(matches!(KeyRecord::from_jwk(&jwk), Err(KeyError::UnsupportedKeyType { .. })));
    }
}
