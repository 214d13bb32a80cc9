//! Keys of the trusted issuers, refreshed from their discovery documents.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use async_trait::async_trait;
use captoken_core::{discovery_url, IssuerMetadata, Timestamp, TrustedIssuers};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

#[async_trait]
pub trait DiscoverySource: Send + Sync {
    async fn fetch(&self, issuer: &str) -> Result<IssuerMetadata, String>;
}

pub struct HttpDiscovery {
    http: reqwest::Client,
}

impl HttpDiscovery {
    pub fn new() -> Self {
        HttpDiscovery {
            http: reqwest::Client::builder()
                .timeout(std::time::Duration::from_secs(5))
                .build()
                .expect("http client builds"),
        }
    }
}

impl Default for HttpDiscovery {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl DiscoverySource for HttpDiscovery {
    async fn fetch(&self, issuer: &str) -> Result<IssuerMetadata, String> {
        let resp = self
            .http
            .get(discovery_url(issuer))
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("status {}", resp.status()));
        }
        resp.json().await.map_err(|e| e.to_string())
    }
}

/// Serves fixed documents; used with local discovery files.
pub struct StaticDiscovery(pub Vec<IssuerMetadata>);

#[async_trait]
impl DiscoverySource for StaticDiscovery {
    async fn fetch(&self, issuer: &str) -> Result<IssuerMetadata, String> {
        self.0
            .iter()
            .find(|m| m.issuer == issuer)
            .cloned()
            .ok_or_else(|| "no document".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustStatus {
    pub issuer: String,
    pub ok: bool,
    pub key_ids: Vec<String>,
    pub last_success: Option<Timestamp>,
    /// Set while the most recent fetch failed.
    pub stale_since: Option<Timestamp>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
struct Entry {
    metadata: Option<IssuerMetadata>,
    last_success: Option<Timestamp>,
    stale_since: Option<Timestamp>,
    error: Option<String>,
}

pub struct TrustStore {
    issuers: Vec<String>,
    source: Arc<dyn DiscoverySource>,
    entries: RwLock<HashMap<String, Entry>>,
}

impl TrustStore {
    pub fn new(issuers: Vec<String>, source: Arc<dyn DiscoverySource>) -> Self {
        TrustStore {
            issuers,
            source,
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn is_trusted(&self, issuer: &str) -> bool {
        self.issuers.iter().any(|i| i == issuer)
    }

    /// Current keys of every issuer fetched at least once.
    pub fn snapshot(&self) -> TrustedIssuers {
        self.entries
            .read()
            .unwrap()
            .iter()
            .filter_map(|(k, e)| e.metadata.clone().map(|m| (k.clone(), m)))
            .collect()
    }

    pub async fn refresh_issuer(&self, issuer: &str, now: Timestamp) -> TrustStatus {
        let fetched = match self.source.fetch(issuer).await {
            Ok(m) if m.issuer == issuer => Ok(m),
            Ok(m) => Err(format!("document names issuer {}", m.issuer)),
            Err(e) => Err(e),
        };
        let mut entries = self.entries.write().unwrap();
        let entry = entries.entry(issuer.to_string()).or_default();
        match fetched {
            Ok(m) => {
                info!(issuer, keys = m.keys.len(), "refreshed issuer keys");
                entry.metadata = Some(m);
                entry.last_success = Some(now);
                entry.stale_since = None;
                entry.error = None;
            }
            Err(e) => {
                warn!(issuer, error = %e, "discovery fetch failed, keeping previous keys");
                entry.stale_since.get_or_insert(now);
                entry.error = Some(e);
            }
        }
        status(issuer, entry)
    }

    /// Re-fetches every trusted issuer. Failures keep the previous keys.
    pub async fn refresh_trust(&self, now: Timestamp) -> Vec<TrustStatus> {
        let mut out = Vec::with_capacity(self.issuers.len());
        for issuer in &self.issuers {
            out.push(self.refresh_issuer(issuer, now).await);
        }
        out
    }

    pub fn status(&self) -> Vec<TrustStatus> {
        let entries = self.entries.read().unwrap();
        self.issuers
            .iter()
            .map(|i| status(i, entries.get(i).unwrap_or(&Entry::default())))
            .collect()
    }
}

fn status(issuer: &str, e: &Entry) -> TrustStatus {
    TrustStatus {
        issuer: issuer.to_string(),
        ok: e.error.is_none() && e.metadata.is_some(),
        key_ids: e
            .metadata
            .as_ref()
            .map(|m| m.keys.iter().map(|k| k.kid.clone()).collect())
            .unwrap_or_default(),
        last_success: e.last_success,
        stale_since: e.stale_since,
        error: e.error.clone(),
    }
}
