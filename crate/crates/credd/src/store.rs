//! Journaled refresh-token store.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use captoken_core::{Journal, RefreshHandle, Scope, Timestamp};
use serde::{Deserialize, Serialize};

use crate::error::CredError;

pub const STORE_JOURNAL: &str = "creds.journal";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CredentialKey {
    pub user: String,
    /// Issuer label.
    pub provider: String,
    pub handle_name: String,
}

impl CredentialKey {
    pub fn new(user: impl Into<String>, provider: impl Into<String>, handle_name: impl Into<String>) -> Self {
        CredentialKey {
            user: user.into(),
            provider: provider.into(),
            handle_name: handle_name.into(),
        }
    }

    pub fn validate(&self) -> Result<(), CredError> {
        for (field, value) in [
            ("user", &self.user),
            ("provider", &self.provider),
            ("handle_name", &self.handle_name),
        ] {
            if value.is_empty() {
                return Err(CredError::BadKey(format!("{field} is empty")));
            }
            if value.chars().any(|c| c.is_control() || c == '/') {
                return Err(CredError::BadKey(format!("{field} contains '/' or a control character")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for CredentialKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.user, self.provider, self.handle_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredCredential {
    pub key: CredentialKey,
    pub refresh_handle: RefreshHandle,
    pub granted_scopes: Vec<Scope>,
    pub obtained_at: Timestamp,
}

/// What LIST reports: everything except the handle itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialSummary {
    pub key: CredentialKey,
    pub granted_scopes: Vec<Scope>,
    pub obtained_at: Timestamp,
    pub fingerprint: String,
    pub degraded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StoreEvent {
    Put(StoredCredential),
    Delete { key: CredentialKey },
}

#[derive(Default)]
pub struct CredentialStore {
    entries: BTreeMap<CredentialKey, StoredCredential>,
    journal: Option<Journal<StoreEvent>>,
}

impl CredentialStore {
    pub fn in_memory() -> Self {
        CredentialStore::default()
    }

    pub fn open(state_dir: &Path) -> Result<Self, CredError> {
        std::fs::create_dir_all(state_dir).map_err(|e| CredError::StoreWriteFailed(e.to_string()))?;
        let (journal, events) = Journal::open(state_dir.join(STORE_JOURNAL))?;
        let mut entries = BTreeMap::new();
        for event in events {
            match event {
                StoreEvent::Put(cred) => {
                    entries.insert(cred.key.clone(), cred);
                }
                StoreEvent::Delete { key } => {
                    entries.remove(&key);
                }
            }
        }
        Ok(CredentialStore {
            entries,
            journal: Some(journal),
        })
    }

    fn record(&mut self, event: &StoreEvent) -> Result<(), CredError> {
        if let Some(j) = self.journal.as_mut() {
            j.append(event)?;
        }
        Ok(())
    }

    /// Returns the credential it replaced, if any.
    pub fn put(&mut self, cred: StoredCredential) -> Result<Option<StoredCredential>, CredError> {
        self.record(&StoreEvent::Put(cred.clone()))?;
        Ok(self.entries.insert(cred.key.clone(), cred))
    }

    pub fn delete(&mut self, key: &CredentialKey) -> Result<Option<StoredCredential>, CredError> {
        if !self.entries.contains_key(key) {
            return Ok(None);
        }
        self.record(&StoreEvent::Delete { key: key.clone() })?;
        Ok(self.entries.remove(key))
    }

    pub fn get(&self, key: &CredentialKey) -> Option<&StoredCredential> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredCredential> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    fn cred(user: &str, handle: &str) -> StoredCredential {
        StoredCredential {
            key: CredentialKey::new(user, "osg", "ligo_read"),
            refresh_handle: RefreshHandle::new(handle),
            granted_scopes: vec!["read:/ligo".parse().unwrap()],
            obtained_at: 10,
        }
    }

    #[test]
    fn key_validation() {
        assert!(CredentialKey::new("alice", "osg", "ligo_read").validate().is_ok());
        assert!(CredentialKey::new("", "osg", "x").validate().is_err());
        assert!(CredentialKey::new("a/b", "osg", "x").validate().is_err());
        assert!(CredentialKey::new("a", "osg", "x\n").validate().is_err());
    }

    #[test]
    fn replay_restores_upserts_and_deletes() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = CredentialStore::open(dir.path()).unwrap();
            store.put(cred("alice", "h1")).unwrap();
            let old = store.put(cred("alice", "h2")).unwrap().unwrap();
            assert_eq!(old.refresh_handle.expose(), "h1");
            store.put(cred("bob", "h3")).unwrap();
            store.delete(&cred("bob", "").key).unwrap();
        }
        let store = CredentialStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(&cred("alice", "").key).unwrap().refresh_handle.expose(), "h2");
        let mode = std::fs::metadata(dir.path().join(STORE_JOURNAL)).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
    }
}
