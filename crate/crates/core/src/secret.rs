//! Secret material that must stay in the submit domain.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::{Arc, RwLock};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Random bytes, base64url-encoded.
pub fn random_urlsafe<R: RngCore + CryptoRng>(rng: &mut R, bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    URL_SAFE_NO_PAD.encode(buf)
}

/// Hex SHA-256 of `data`; used as a non-secret identifier for secrets.
pub fn digest_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Opaque refresh-token handle. Never printed; `Debug` is redacted and
/// there is no `Display`. Use [`RefreshHandle::expose`] only at the
/// submit-domain boundary with the issuer.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RefreshHandle(String);

impl RefreshHandle {
    pub fn new(value: impl Into<String>) -> Self {
        RefreshHandle(value.into())
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        RefreshHandle(random_urlsafe(rng, 32))
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    /// Stable identifier safe to log and to record in audit trails.
    pub fn fingerprint(&self) -> String {
        digest_hex(self.0.as_bytes())
    }
}

impl fmt::Debug for RefreshHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RefreshHandle({}…)", &self.fingerprint()[..8])
    }
}

/// Registry of tainted byte strings (refresh handles) that must never be
/// carried by a message bound for the execute or data domain.
#[derive(Clone, Default)]
pub struct TaintSet {
    inner: Arc<RwLock<BTreeSet<String>>>,
}

impl TaintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark(&self, handle: &RefreshHandle) {
        self.inner
            .write()
            .expect("taint set poisoned")
            .insert(handle.expose().to_string());
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("taint set poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True if `payload` contains any tainted value.
    pub fn is_tainted(&self, payload: &[u8]) -> bool {
        let set = self.inner.read().expect("taint set poisoned");
        set.iter()
            .any(|secret| contains(payload, secret.as_bytes()))
    }
}

impl fmt::Debug for TaintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TaintSet({} entries)", self.len())
    }
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
