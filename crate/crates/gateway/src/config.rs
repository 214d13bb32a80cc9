use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const DEFAULT_ORIGIN_HEADER: &str = "X-Exec-Origin";
pub const DEFAULT_MAX_OBJECT_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub sandbox_root: PathBuf,
    pub service_audience: String,
    pub trusted_issuers: Vec<String>,
    /// Request header naming the caller's execution node.
    #[serde(default = "default_origin_header")]
    pub local_origin_header: String,
    #[serde(default = "default_max_bytes")]
    pub max_object_bytes: u64,
    /// Seconds between discovery re-fetches.
    #[serde(default = "default_refresh")]
    pub trust_refresh_seconds: u64,
}

fn default_listen() -> String {
    "127.0.0.1:8444".into()
}
fn default_origin_header() -> String {
    DEFAULT_ORIGIN_HEADER.into()
}
fn default_max_bytes() -> u64 {
    DEFAULT_MAX_OBJECT_BYTES
}
fn default_refresh() -> u64 {
    300
}

impl GatewayConfig {
    pub fn new(sandbox_root: impl Into<PathBuf>, service_audience: impl Into<String>, trusted_issuers: Vec<String>) -> Self {
        GatewayConfig {
            listen: default_listen(),
            sandbox_root: sandbox_root.into(),
            service_audience: service_audience.into(),
            trusted_issuers,
            local_origin_header: default_origin_header(),
            max_object_bytes: default_max_bytes(),
            trust_refresh_seconds: default_refresh(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Loads a config file; a relative sandbox_root resolves against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.sandbox_root = base.join(&c.sandbox_root);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.sandbox_root.is_dir() {
            return Err(format!("sandbox_root {} is not a directory", self.sandbox_root.display()));
        }
        if self.service_audience.is_empty() {
            return Err("service_audience must be set".into());
        }
        if axum::http::HeaderName::from_bytes(self.local_origin_header.as_bytes()).is_err() {
            return Err(format!("invalid header name {}", self.local_origin_header));
        }
        Ok(())
    }
}
