use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::daemon::{DaemonOptions, DEFAULT_REFRESH_MARGIN};
use crate::error::CredError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreddConfig {
    /// Token server base URL.
    pub issuer: String,
    pub client_id: String,
    /// File holding the client secret; should be mode 0600.
    pub client_secret_file: PathBuf,
    pub state_dir: PathBuf,
    #[serde(default)]
    pub rendezvous_dir: Option<PathBuf>,
    pub socket: PathBuf,
    #[serde(default = "default_margin")]
    pub refresh_margin: f64,
    /// Seconds between refresher and pickup passes.
    #[serde(default = "default_tick")]
    pub tick_seconds: u64,
}

fn default_margin() -> f64 {
    DEFAULT_REFRESH_MARGIN
}
fn default_tick() -> u64 {
    30
}

fn bad(m: impl Into<String>) -> CredError {
    CredError::BadRequest(m.into())
}

impl CreddConfig {
    pub fn from_toml(text: &str) -> Result<Self, CredError> {
        let config: CreddConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        if !(0.0..1.0).contains(&config.refresh_margin) {
            return Err(bad("refresh_margin must be in [0, 1)"));
        }
        if config.tick_seconds == 0 {
            return Err(bad("tick_seconds must be positive"));
        }
        Ok(config)
    }

    /// Loads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CredError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.client_secret_file = base.join(&c.client_secret_file);
        c.state_dir = base.join(&c.state_dir);
        c.socket = base.join(&c.socket);
        c.rendezvous_dir = c.rendezvous_dir.map(|p| base.join(p));
        Ok(c)
    }

    pub fn client_secret(&self) -> Result<String, CredError> {
        let text = std::fs::read_to_string(&self.client_secret_file)
            .map_err(|e| bad(format!("{}: {e}", self.client_secret_file.display())))?;
        Ok(text.trim().to_string())
    }

    pub fn daemon_options(&self) -> DaemonOptions {
        DaemonOptions {
            state_dir: Some(self.state_dir.clone()),
            refresh_margin: self.refresh_margin,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("credd.toml");
        std::fs::write(
            &path,
            r#"
            issuer = "http://127.0.0.1:8443"
            client_id = "client-1"
            client_secret_file = "secret"
            state_dir = "state"
            socket = "credd.sock"
            "#,
        )
        .unwrap();
        std::fs::write(dir.path().join("secret"), "s3cret\n").unwrap();
        let c = CreddConfig::load(&path).unwrap();
        assert_eq!(c.refresh_margin, 0.2);
        assert_eq!(c.state_dir, dir.path().join("state"));
        assert_eq!(c.client_secret().unwrap(), "s3cret");
        assert!(CreddConfig::from_toml("issuer = 1").is_err());
    }
}
