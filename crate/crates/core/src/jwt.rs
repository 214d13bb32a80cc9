//! Compact serialization, signing and verification of access tokens.
//!
//! Tokens are `header.payload.signature`, each segment unpadded base64url.
//! The header is `{"alg","kid","typ":"JWT"}`; the only accepted algorithm
//! is [`ALGORITHM`], so a token claiming any other (in particular a
//! symmetric one) never reaches signature verification.

use std::collections::HashMap;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{Signature, Signer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims::{TokenClaims, Timestamp};
use crate::keys::{KeyRecord, ALGORITHM};
use crate::metadata::IssuerMetadata;

/// Default tolerance, in seconds, applied to both ends of the validity window.
pub const DEFAULT_CLOCK_SKEW: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub alg: String,
    pub kid: String,
    pub typ: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignError {
    #[error("key has no private part")]
    MissingPrivateKey,
    #[error("invalid claims: {0}")]
    InvalidClaims(String),
}

/// Verification failure. Each variant names exactly one failed check.
#[derive(Debug, Clone, Copy, Error, PartialEq, Eq, Hash)]
pub enum VerifyError {
    #[error("malformed token")]
    Malformed,
    #[error("issuer is not trusted")]
    UnknownIssuer,
    #[error("no trusted key matches the token's key id")]
    UnknownKey,
    #[error("signature does not verify")]
    BadSignature,
    #[error("token has expired")]
    Expired,
    #[error("token is not yet valid")]
    NotYetValid,
    #[error("token is not intended for this audience")]
    AudienceMismatch,
}

impl VerifyError {
    pub fn reason(self) -> &'static str {
        match self {
            VerifyError::Malformed => "Malformed",
            VerifyError::UnknownIssuer => "UnknownIssuer",
            VerifyError::UnknownKey => "UnknownKey",
            VerifyError::BadSignature => "BadSignature",
            VerifyError::Expired => "Expired",
            VerifyError::NotYetValid => "NotYetValid",
            VerifyError::AudienceMismatch => "AudienceMismatch",
        }
    }
}

pub type TrustedIssuers = HashMap<String, IssuerMetadata>;

fn b64(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn sign_token(claims: &TokenClaims, key: &KeyRecord) -> Result<String, SignError> {
    let signing = key.signing_key().ok_or(SignError::MissingPrivateKey)?;
    claims.check().map_err(SignError::InvalidClaims)?;
    let header = Header {
        alg: key.algorithm.clone(),
        kid: key.key_id.clone(),
        typ: "JWT".into(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let payload = serde_json::to_vec(claims).expect("claims serialize");
    let signing_input = format!("{}.{}", b64(&header), b64(&payload));
    let signature = signing.sign(signing_input.as_bytes());
    Ok(format!("{signing_input}.{}", b64(&signature.to_bytes())))
}

struct Parts<'a> {
    signing_input: &'a str,
    header: Header,
    claims: TokenClaims,
    signature: Vec<u8>,
}

fn split(token: &str) -> Result<Parts<'_>, VerifyError> {
    let mut it = token.split('.');
    let (Some(h), Some(p), Some(s), None) = (it.next(), it.next(), it.next(), it.next()) else {
        return Err(VerifyError::Malformed);
    };
    let decode = |seg: &str| URL_SAFE_NO_PAD.decode(seg).map_err(|_| VerifyError::Malformed);
    let header: Header = serde_json::from_slice(&decode(h)?).map_err(|_| VerifyError::Malformed)?;
    if header.typ != "JWT" {
        return Err(VerifyError::Malformed);
    }
    let claims: TokenClaims =
        serde_json::from_slice(&decode(p)?).map_err(|_| VerifyError::Malformed)?;
    claims.check().map_err(|_| VerifyError::Malformed)?;
    Ok(Parts {
        signing_input: &token[..h.len() + 1 + p.len()],
        header,
        claims,
        signature: decode(s)?,
    })
}

/// Decodes header and payload as raw JSON without checking anything else.
pub fn decode_unverified(token: &str) -> Result<(serde_json::Value, serde_json::Value), VerifyError> {
    let segs: Vec<&str> = token.split('.').collect();
    if segs.len() != 3 {
        return Err(VerifyError::Malformed);
    }
    let json = |seg: &str| -> Result<serde_json::Value, VerifyError> {
        let bytes = URL_SAFE_NO_PAD.decode(seg).map_err(|_| VerifyError::Malformed)?;
        serde_json::from_slice(&bytes).map_err(|_| VerifyError::Malformed)
    };
    URL_SAFE_NO_PAD
        .decode(segs[2])
        .map_err(|_| VerifyError::Malformed)?;
    Ok((json(segs[0])?, json(segs[1])?))
}

/// Token verifier with a configurable clock-skew tolerance.
#[derive(Debug, Clone, Copy)]
pub struct Verifier {
    pub skew: i64,
}

impl Default for Verifier {
    fn default() -> Self {
        Verifier {
            skew: DEFAULT_CLOCK_SKEW,
        }
    }
}

impl Verifier {
    pub fn new(skew: i64) -> Self {
        Verifier { skew }
    }

    /// Checks run in a fixed order and the first failure is returned:
    /// structure, issuer trust, key lookup, signature, validity window,
    /// audience.
    pub fn verify(
        &self,
        token: &str,
        trusted: &TrustedIssuers,
        expected_audience: &str,
        now: Timestamp,
    ) -> Result<TokenClaims, VerifyError> {
        let parts = split(token)?;
        let issuer = trusted
            .get(&parts.claims.issuer)
            .ok_or(VerifyError::UnknownIssuer)?;
        let key = match issuer.find_key(&parts.header.kid) {
            Some(Ok(key)) => key,
            Some(Err(_)) | None => return Err(VerifyError::UnknownKey),
        };
        if parts.header.alg != ALGORITHM || key.algorithm != parts.header.alg {
            return Err(VerifyError::BadSignature);
        }
        let verifying = key.verifying_key().ok_or(VerifyError::UnknownKey)?;
        let signature: [u8; 64] = parts
            .signature
            .as_slice()
            .try_into()
            .map_err(|_| VerifyError::BadSignature)?;
        verifying
            .verify_strict(parts.signing_input.as_bytes(), &Signature::from_bytes(&signature))
            .map_err(|_| VerifyError::BadSignature)?;

        let claims = parts.claims;
        if now >= claims.expires_at + self.skew {
            return Err(VerifyError::Expired);
        }
        if now < claims.not_before - self.skew {
            return Err(VerifyError::NotYetValid);
        }
        if !claims.accepts_audience(expected_audience) {
            return Err(VerifyError::AudienceMismatch);
        }
        Ok(claims)
    }
}

/// [`Verifier::verify`] with the default skew.
pub fn verify_token(
    token: &str,
    trusted: &TrustedIssuers,
    expected_audience: &str,
    now: Timestamp,
) -> Result<TokenClaims, VerifyError> {
    Verifier::default().verify(token, trusted, expected_audience, now)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::PROFILE_VERSION;
    use crate::scope::Scope;

    const ISS: &str = "https://issuer.example";
    const AUD: &str = "https://data.example";

    fn key() -> KeyRecord {
        KeyRecord::from_seed("k1", [9u8; 32])
    }

    fn claims() -> TokenClaims {
        TokenClaims {
            issuer: ISS.into(),
            subject: "alice".into(),
            audience: vec![AUD.into()],
            scopes: vec![Scope::read("/ligo").unwrap(), Scope::write("/ligo/out").unwrap()],
            issued_at: 10_000,
            not_before: 10_000,
            expires_at: 10_600,
            token_id: "tok-1".into(),
            origin: Some("nodeA".into()),
            version: PROFILE_VERSION.into(),
        }
    }

    fn trust() -> TrustedIssuers {
        let k = key();
        HashMap::from([(ISS.to_string(), IssuerMetadata::new(ISS, [&k]))])
    }

    #[test]
    fn roundtrip() {
        let token = sign_token(&claims(), &key()).unwrap();
        assert_eq!(token.split('.').count(), 3);
        assert!(!token.contains('='));
        assert_eq!(verify_token(&token, &trust(), AUD, 10_100).unwrap(), claims());
    }

    #[test]
    fn sign_errors() {
        assert_eq!(
            sign_token(&claims(), &key().public_only()),
            Err(SignError::MissingPrivateKey)
        );
        let mut bad = claims();
        bad.expires_at = bad.issued_at - 1;
        assert!(matches!(sign_token(&bad, &key()), Err(SignError::InvalidClaims(_))));
    }

    #[test]
    fn skew_boundaries_are_symmetric() {
        let token = sign_token(&claims(), &key()).unwrap();
        let c = claims();
        let skew = DEFAULT_CLOCK_SKEW;
        assert!(verify_token(&token, &trust(), AUD, c.expires_at + skew - 1).is_ok());
        assert_eq!(
            verify_token(&token, &trust(), AUD, c.expires_at + skew + 1),
            Err(VerifyError::Expired)
        );
        assert!(verify_token(&token, &trust(), AUD, c.not_before - skew + 1).is_ok());
        assert_eq!(
            verify_token(&token, &trust(), AUD, c.not_before - skew - 1),
            Err(VerifyError::NotYetValid)
        );
    }

    #[test]
    fn check_order() {
        let token = sign_token(&claims(), &key()).unwrap();
        assert_eq!(
            verify_token(&token, &TrustedIssuers::new(), AUD, 0),
            Err(VerifyError::UnknownIssuer)
        );
        let other = KeyRecord::from_seed("k2", [1u8; 32]);
        let trust_other = HashMap::from([(ISS.to_string(), IssuerMetadata::new(ISS, [&other]))]);
        assert_eq!(verify_token(&token, &trust_other, AUD, 0), Err(VerifyError::UnknownKey));
        // Same kid, different key material.
        let impostor = KeyRecord::from_seed("k1", [1u8; 32]);
        let trust_imp = HashMap::from([(ISS.to_string(), IssuerMetadata::new(ISS, [&impostor]))]);
        assert_eq!(verify_token(&token, &trust_imp, AUD, 0), Err(VerifyError::BadSignature));
        // Bad signature wins over expiry.
        assert_eq!(verify_token(&token, &trust_imp, AUD, i64::MAX / 2), Err(VerifyError::BadSignature));
        assert_eq!(
            verify_token(&token, &trust(), "https://elsewhere", 10_100),
            Err(VerifyError::AudienceMismatch)
        );
        assert_eq!(verify_token("abc", &trust(), AUD, 0), Err(VerifyError::Malformed));
        assert_eq!(verify_token("a.b.c.d", &trust(), AUD, 0), Err(VerifyError::Malformed));
    }

    #[test]
    fn symmetric_algorithm_header_rejected() {
        let token = sign_token(&claims(), &key()).unwrap();
        let mut segs: Vec<String> = token.split('.').map(String::from).collect();
        segs[0] = b64(br#"{"alg":"HS256","kid":"k1","typ":"JWT"}"#);
        let forged = segs.join(".");
        assert_eq!(verify_token(&forged, &trust(), AUD, 10_100), Err(VerifyError::BadSignature));
    }

    #[test]
    fn every_payload_byte_flip_fails() {
        let token = sign_token(&claims(), &key()).unwrap();
        let first_dot = token.find('.').unwrap();
        let second_dot = token.rfind('.').unwrap();
        let original_payload = &token[first_dot + 1..second_dot];
        for i in first_dot + 1..second_dot {
            let mut bytes = token.clone().into_bytes();
            bytes[i] ^= 0x01;
            let Ok(mutated) = String::from_utf8(bytes) else { continue };
            let result = verify_token(&mutated, &trust(), AUD, 10_100);
            assert!(result.is_err(), "byte {i} accepted");
            if result == Err(VerifyError::UnknownIssuer) {
                // Only possible if the decoded issuer changed.
                let payload = &mutated[first_dot + 1..second_dot];
                let decoded = URL_SAFE_NO_PAD.decode(payload).unwrap();
                let orig = URL_SAFE_NO_PAD.decode(original_payload).unwrap();
                let iss_end = orig.windows(4).position(|w| w == b"\"sub").unwrap();
                let diff = decoded.iter().zip(&orig).position(|(a, b)| a != b).unwrap();
                assert!(diff < iss_end, "UnknownIssuer without touching iss at byte {i}");
            }
        }
    }

    #[test]
    fn inspect_decodes_without_verification() {
        let token = sign_token(&claims(), &key()).unwrap();
        let (header, payload) = decode_unverified(&token).unwrap();
        assert_eq!(header["kid"], "k1");
        assert_eq!(payload["sub"], "alice");
        assert_eq!(decode_unverified("abc"), Err(VerifyError::Malformed));
    }
}
