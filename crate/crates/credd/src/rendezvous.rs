//! Drop box through which the web-facing authorization helper hands
//! one-time codes to the daemon.

use std::fs;
use std::io::Write;
use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CredError;
use crate::store::CredentialKey;

pub const QUARANTINE_DIR: &str = "quarantine";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deposit {
    pub user: String,
    pub provider: String,
    pub handle_name: String,
    pub code: String,
    pub client_id: String,
}

impl Deposit {
    pub fn key(&self) -> CredentialKey {
        CredentialKey::new(&self.user, &self.provider, &self.handle_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantined {
    pub file: String,
    pub reason: String,
}

/// Writes a deposit as `<uuid>.json` via a hidden temp file and rename.
pub fn write_deposit(dir: &Path, deposit: &Deposit) -> std::io::Result<PathBuf> {
    let id = uuid::Uuid::new_v4();
    let tmp = dir.join(format!(".{id}.tmp"));
    let target = dir.join(format!("{id}.json"));
    let mut file = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .mode(0o600)
        .open(&tmp)?;
    file.write_all(&serde_json::to_vec(deposit).expect("deposit serializes"))?;
    file.sync_all()?;
    fs::rename(&tmp, &target)?;
    Ok(target)
}

/// Creates the directory with mode 0700 if missing.
pub fn prepare_directory(dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::set_permissions(dir, fs::Permissions::from_mode(0o700))
}

fn unusable(dir: &Path, what: impl std::fmt::Display) -> CredError {
    CredError::DirectoryUnreadable(format!("{}: {what}", dir.display()))
}

/// Lists pending deposit files in name order. Refuses directories that
/// other accounts can access.
pub fn pending(dir: &Path) -> Result<Vec<PathBuf>, CredError> {
    let meta = fs::metadata(dir).map_err(|e| unusable(dir, e))?;
    if !meta.is_dir() {
        return Err(unusable(dir, "not a directory"));
    }
    if meta.permissions().mode() & 0o007 != 0 {
        return Err(unusable(dir, "accessible by other accounts"));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| unusable(dir, e))? {
        let entry = entry.map_err(|e| unusable(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with('.') || name == QUARANTINE_DIR {
            continue;
        }
        if entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_deposit(path: &Path) -> Result<Deposit, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

/// Moves a deposit into `quarantine/` and writes `<name>.reason` beside it.
pub fn quarantine(dir: &Path, file: &Path, reason: &str) -> std::io::Result<Quarantined> {
    let qdir = dir.join(QUARANTINE_DIR);
    fs::create_dir_all(&qdir)?;
    fs::set_permissions(&qdir, fs::Permissions::from_mode(0o700))?;
    let name = file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    fs::rename(file, qdir.join(&name))?;
    fs::write(qdir.join(format!("{name}.reason")), format!("{reason}\n"))?;
    Ok(Quarantined {
        file: name,
        reason: reason.to_string(),
    })
}
