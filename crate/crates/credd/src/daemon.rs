//! The credential daemon: refresh-token store, access-token cache and
//! the proactive refresher.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use captoken_core::scope::dedup_scopes;
use captoken_core::{Clock, RefreshHandle, Scope, TaintSet, Timestamp};
use captoken_issuer::IssuerError;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::error::CredError;
use crate::rendezvous::{self, Quarantined};
use crate::store::{CredentialKey, CredentialStore, CredentialSummary, StoredCredential};
use crate::upstream::{Minted, TokenIssuer};

pub const DEFAULT_REFRESH_MARGIN: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct DaemonOptions {
    /// Where `creds.journal` lives. `None` keeps the store in memory.
    pub state_dir: Option<PathBuf>,
    /// Fraction of a token's lifetime below which the refresher re-mints it.
    pub refresh_margin: f64,
}

impl Default for DaemonOptions {
    fn default() -> Self {
        DaemonOptions {
            state_dir: None,
            refresh_margin: DEFAULT_REFRESH_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub key: CredentialKey,
    /// Empty means the credential's full grant.
    #[serde(default)]
    pub scopes: Vec<Scope>,
    pub audience: String,
    #[serde(default)]
    pub origin: Option<String>,
    /// Seconds of validity the caller needs from now.
    #[serde(default = "default_min_remaining")]
    pub min_remaining: i64,
    /// Reject cached tokens minted before this instant.
    #[serde(default)]
    pub minted_after: Option<Timestamp>,
}

fn default_min_remaining() -> i64 {
    1
}

impl AccessRequest {
    pub fn new(key: CredentialKey, scopes: Vec<Scope>, audience: impl Into<String>) -> Self {
        AccessRequest {
            key,
            scopes,
            audience: audience.into(),
            origin: None,
            min_remaining: default_min_remaining(),
            minted_after: None,
        }
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = Some(origin.into());
        self
    }

    pub fn with_min_remaining(mut self, secs: i64) -> Self {
        self.min_remaining = secs;
        self
    }

    pub fn minted_after(mut self, t: Timestamp) -> Self {
        self.minted_after = Some(t);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct CacheKey {
    key: CredentialKey,
    scopes: Vec<Scope>,
    audience: String,
    origin: Option<String>,
}

impl CacheKey {
    fn of(req: &AccessRequest) -> Self {
        let mut scopes = dedup_scopes(req.scopes.iter().cloned());
        scopes.sort();
        CacheKey {
            key: req.key.clone(),
            scopes,
            audience: req.audience.clone(),
            origin: req.origin.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub refreshed: Vec<CredentialKey>,
    pub degraded: Vec<CredentialKey>,
    pub evicted: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PickupReport {
    pub stored: Vec<StoredCredential>,
    pub quarantined: Vec<Quarantined>,
    /// Files left in place because the issuer was unreachable.
    pub deferred: Vec<String>,
}

type Gate = Arc<tokio::sync::Mutex<()>>;

pub struct CredDaemon {
    issuer: Arc<dyn TokenIssuer>,
    clock: Arc<dyn Clock>,
    options: DaemonOptions,
    store: RwLock<CredentialStore>,
    cache: Mutex<HashMap<CacheKey, Minted>>,
    inflight: Mutex<HashMap<CacheKey, Gate>>,
    degraded: Mutex<BTreeSet<CredentialKey>>,
    taint: TaintSet,
    round_trips: AtomicUsize,
}

fn breaks_credential(e: &CredError) -> bool {
    matches!(
        e,
        CredError::Issuer(IssuerError::Revoked | IssuerError::RefreshExpired | IssuerError::UnknownHandle)
    )
}

impl CredDaemon {
    /// Opens the store, replaying its journal when a state directory is set.
    pub fn open(options: DaemonOptions, issuer: Arc<dyn TokenIssuer>, clock: Arc<dyn Clock>) -> Result<Self, CredError> {
        let store = match &options.state_dir {
            Some(dir) => CredentialStore::open(dir)?,
            None => CredentialStore::in_memory(),
        };
        let taint = TaintSet::new();
        for cred in store.iter() {
            taint.mark(&cred.refresh_handle);
        }
        if options.state_dir.is_some() {
            info!(credentials = store.len(), "replayed credential journal");
        }
        Ok(CredDaemon {
            issuer,
            clock,
            options,
            store: RwLock::new(store),
            cache: Mutex::new(HashMap::new()),
            inflight: Mutex::new(HashMap::new()),
            degraded: Mutex::new(BTreeSet::new()),
            taint,
            round_trips: AtomicUsize::new(0),
        })
    }

    pub fn options(&self) -> &DaemonOptions {
        &self.options
    }

    /// Every refresh handle this daemon has held.
    pub fn taint(&self) -> &TaintSet {
        &self.taint
    }

    /// Number of refresh calls made to the issuer.
    pub fn issuer_round_trips(&self) -> usize {
        self.round_trips.load(Ordering::SeqCst)
    }

    pub fn credential(&self, key: &CredentialKey) -> Option<StoredCredential> {
        self.store.read().unwrap().get(key).cloned()
    }

    pub fn credential_count(&self) -> usize {
        self.store.read().unwrap().len()
    }

    pub fn is_degraded(&self, key: &CredentialKey) -> bool {
        self.degraded.lock().unwrap().contains(key)
    }

    pub fn cached_count(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn list(&self) -> Vec<CredentialSummary> {
        let degraded = self.degraded.lock().unwrap().clone();
        self.store
            .read()
            .unwrap()
            .iter()
            .map(|c| CredentialSummary {
                key: c.key.clone(),
                granted_scopes: c.granted_scopes.clone(),
                obtained_at: c.obtained_at,
                fingerprint: c.refresh_handle.fingerprint(),
                degraded: degraded.contains(&c.key),
            })
            .collect()
    }

    fn purge(&self, key: &CredentialKey) {
        self.cache.lock().unwrap().retain(|k, _| &k.key != key);
    }

    fn gate(&self, ck: &CacheKey) -> Gate {
        self.inflight.lock().unwrap().entry(ck.clone()).or_default().clone()
    }

    /// Upserts a credential. A replaced handle is revoked at the issuer,
    /// best-effort.
    pub async fn store_refresh(
        &self,
        key: CredentialKey,
        refresh_handle: RefreshHandle,
        scopes: Vec<Scope>,
    ) -> Result<StoredCredential, CredError> {
        key.validate()?;
        self.taint.mark(&refresh_handle);
        let cred = StoredCredential {
            key: key.clone(),
            refresh_handle,
            granted_scopes: scopes,
            obtained_at: self.clock.now(),
        };
        let previous = self.store.write().unwrap().put(cred.clone())?;
        self.purge(&key);
        self.degraded.lock().unwrap().remove(&key);
        info!(%key, handle = %cred.refresh_handle.fingerprint()[..12], "stored refresh token");
        if let Some(prev) = previous.filter(|p| p.refresh_handle != cred.refresh_handle) {
            if let Err(e) = self.issuer.revoke(&prev.refresh_handle).await {
                warn!(%key, error = %e, "could not revoke replaced refresh token");
            }
        }
        Ok(cred)
    }

    /// Removes a credential and revokes its handle, best-effort.
    pub async fn delete(&self, key: &CredentialKey) -> Result<bool, CredError> {
        let removed = self.store.write().unwrap().delete(key)?;
        self.purge(key);
        self.degraded.lock().unwrap().remove(key);
        match removed {
            Some(cred) => {
                if let Err(e) = self.issuer.revoke(&cred.refresh_handle).await {
                    warn!(%key, error = %e, "could not revoke deleted refresh token");
                }
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Revokes the stored handle at the issuer and drops cached tokens.
    /// The credential stays in the store, flagged degraded.
    pub async fn revoke_credential(&self, key: &CredentialKey) -> Result<(), CredError> {
        let handle = self
            .credential(key)
            .ok_or(CredError::UnknownCredential)?
            .refresh_handle;
        self.issuer.revoke(&handle).await?;
        self.purge(key);
        self.degraded.lock().unwrap().insert(key.clone());
        info!(%key, "revoked credential");
        Ok(())
    }

    fn lookup(&self, ck: &CacheKey, req: &AccessRequest, now: Timestamp) -> Option<String> {
        let cache = self.cache.lock().unwrap();
        let hit = cache.get(ck)?;
        let fresh = hit.expires_at > now && hit.expires_at - now >= req.min_remaining;
        let recent = req.minted_after.is_none_or(|t| hit.issued_at >= t);
        (fresh && recent).then(|| hit.token.clone())
    }

    /// Returns a cached access token matching the request or mints one.
    /// Concurrent identical requests share one issuer round trip.
    pub async fn get_access(&self, req: &AccessRequest) -> Result<String, CredError> {
        if self.credential(&req.key).is_none() {
            return Err(CredError::UnknownCredential);
        }
        let ck = CacheKey::of(req);
        if let Some(token) = self.lookup(&ck, req, self.clock.now()) {
            return Ok(token);
        }
        let gate = self.gate(&ck);
        let _held = gate.lock().await;
        if let Some(token) = self.lookup(&ck, req, self.clock.now()) {
            return Ok(token);
        }
        let minted = self.mint(&ck).await?;
        if minted.expires_at - self.clock.now() < req.min_remaining {
            return Err(CredError::InsufficientLifetime);
        }
        Ok(minted.token)
    }

    async fn mint(&self, ck: &CacheKey) -> Result<Minted, CredError> {
        let handle = self
            .credential(&ck.key)
            .ok_or(CredError::UnknownCredential)?
            .refresh_handle;
        self.round_trips.fetch_add(1, Ordering::SeqCst);
        let result = self
            .issuer
            .refresh(&handle, &ck.scopes, &ck.audience, ck.origin.as_deref())
            .await;
        match result {
            Ok(minted) => {
                self.degraded.lock().unwrap().remove(&ck.key);
                if minted.expires_at > self.clock.now() {
                    self.cache.lock().unwrap().insert(ck.clone(), minted.clone());
                }
                Ok(minted)
            }
            Err(e) => {
                if breaks_credential(&e) {
                    self.degraded.lock().unwrap().insert(ck.key.clone());
                    self.purge(&ck.key);
                }
                Err(e)
            }
        }
    }

    /// Re-mints every cached token with less than the refresh margin of
    /// its lifetime left. Expired entries are evicted instead.
    pub async fn refresh_tick(&self, now: Timestamp) -> TickReport {
        let mut report = TickReport::default();
        let mut due: Vec<CacheKey> = {
            let mut cache = self.cache.lock().unwrap();
            let before = cache.len();
            cache.retain(|_, m| m.expires_at > now);
            report.evicted = before - cache.len();
            cache
                .iter()
                .filter(|(_, m)| {
                    let lifetime = (m.expires_at - m.issued_at) as f64;
                    ((m.expires_at - now) as f64) < self.options.refresh_margin * lifetime
                })
                .map(|(k, _)| k.clone())
                .collect()
        };
        due.sort();
        let mut refreshed = BTreeSet::new();
        let mut degraded = BTreeSet::new();
        for ck in due {
            let gate = self.gate(&ck);
            let _held = gate.lock().await;
            match self.mint(&ck).await {
                Ok(_) => {
                    refreshed.insert(ck.key.clone());
                }
                Err(e) => {
                    warn!(key = %ck.key, error = %e, "proactive refresh failed");
                    self.cache.lock().unwrap().remove(&ck);
                    self.degraded.lock().unwrap().insert(ck.key.clone());
                    degraded.insert(ck.key.clone());
                }
            }
        }
        report.refreshed = refreshed.into_iter().collect();
        report.degraded = degraded.into_iter().collect();
        report
    }

    /// Exchanges every pending deposit for a stored credential. Bad
    /// deposits are quarantined with their failure reason.
    pub async fn rendezvous_pickup(&self, dir: &Path) -> Result<PickupReport, CredError> {
        let mut report = PickupReport::default();
        for file in rendezvous::pending(dir)? {
            let name = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
            match self.pickup_one(&file).await {
                Ok(cred) => {
                    if let Err(e) = std::fs::remove_file(&file) {
                        warn!(file = %name, error = %e, "could not remove consumed deposit");
                    }
                    report.stored.push(cred);
                }
                Err(CredError::Transport(e)) => {
                    warn!(file = %name, error = %e, "issuer unreachable, deposit left pending");
                    report.deferred.push(name);
                }
                Err(e) => {
                    let reason = e.reason().to_string();
                    warn!(file = %name, reason, "quarantined deposit");
                    match rendezvous::quarantine(dir, &file, &reason) {
                        Ok(q) => report.quarantined.push(q),
                        Err(io) => {
                            warn!(file = %name, error = %io, "could not quarantine deposit");
                            report.quarantined.push(Quarantined { file: name, reason });
                        }
                    }
                }
            }
        }
        Ok(report)
    }

    async fn pickup_one(&self, file: &Path) -> Result<StoredCredential, CredError> {
        let deposit = rendezvous::read_deposit(file).map_err(CredError::BadRequest)?;
        let key = deposit.key();
        key.validate()?;
        if deposit.client_id != self.issuer.client_id() {
            return Err(IssuerError::UnknownClient.into());
        }
        let exchanged = self.issuer.exchange_code(&deposit.code).await?;
        self.store_refresh(key, exchanged.refresh_handle, exchanged.granted_scopes)
            .await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_ignores_scope_order_and_duplicates() {
        let key = CredentialKey::new("u", "p", "h");
        let a: Scope = "read:/a".parse().unwrap();
        let b: Scope = "read:/b".parse().unwrap();
        let r1 = AccessRequest::new(key.clone(), vec![a.clone(), b.clone()], "aud");
        let r2 = AccessRequest::new(key, vec![b.clone(), a.clone(), b], "aud");
        assert_eq!(CacheKey::of(&r1), CacheKey::of(&r2));
        assert_ne!(CacheKey::of(&r1), CacheKey::of(&r1.clone().with_origin("n1")));
    }
}
