use std::path::{Path, PathBuf};

use captoken_core::{Scope, ANY_AUDIENCE, DEFAULT_ACCESS_LIFETIME};
use serde::{Deserialize, Serialize};

use crate::error::IssuerError;
use crate::model::PolicyRule;

pub const DEFAULT_REFRESH_LIFETIME: i64 = 30 * 24 * 3600;
pub const DEFAULT_CODE_LIFETIME: i64 = 300;
/// Authorization codes may never live longer than this.
pub const MAX_CODE_LIFETIME: i64 = 300;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssuerConfig {
    /// Issuer URL; placed verbatim in every token's `iss` claim.
    pub issuer: String,
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Private JWK file. A fresh key is generated when absent.
    #[serde(default)]
    pub signing_key: Option<PathBuf>,
    /// Directory holding the journals. In-memory only when absent.
    #[serde(default)]
    pub state_dir: Option<PathBuf>,
    #[serde(default = "default_access")]
    pub access_lifetime: i64,
    #[serde(default = "default_refresh")]
    pub refresh_lifetime: i64,
    #[serde(default = "default_code")]
    pub code_lifetime: i64,
    /// Audience of the access token returned alongside a code exchange.
    #[serde(default = "default_audience")]
    pub default_audience: String,
    pub scope_universe: Vec<Scope>,
    #[serde(default)]
    pub policy: Vec<PolicyRule>,
}

fn default_listen() -> String {
    "127.0.0.1:8443".into()
}
fn default_access() -> i64 {
    DEFAULT_ACCESS_LIFETIME
}
fn default_refresh() -> i64 {
    DEFAULT_REFRESH_LIFETIME
}
fn default_code() -> i64 {
    DEFAULT_CODE_LIFETIME
}
fn default_audience() -> String {
    ANY_AUDIENCE.into()
}

impl IssuerConfig {
    pub fn new(issuer: impl Into<String>, scope_universe: Vec<Scope>) -> Self {
        IssuerConfig {
            issuer: issuer.into(),
            listen: default_listen(),
            signing_key: None,
            state_dir: None,
            access_lifetime: DEFAULT_ACCESS_LIFETIME,
            refresh_lifetime: DEFAULT_REFRESH_LIFETIME,
            code_lifetime: DEFAULT_CODE_LIFETIME,
            default_audience: default_audience(),
            scope_universe,
            policy: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, IssuerError> {
        let config: IssuerConfig =
            toml::from_str(text).map_err(|e| IssuerError::BadRequest(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, IssuerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IssuerError::BadRequest(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.signing_key = config.signing_key.map(|p| base.join(p));
        config.state_dir = config.state_dir.map(|p| base.join(p));
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), IssuerError> {
        let bad = |m: &str| Err(IssuerError::BadRequest(m.to_string()));
        if self.issuer.is_empty() {
            return bad("issuer must be set");
        }
        if self.access_lifetime <= 0 || self.refresh_lifetime <= 0 || self.code_lifetime <= 0 {
            return bad("lifetimes must be positive");
        }
        if self.code_lifetime > MAX_CODE_LIFETIME {
            return bad("code_lifetime may not exceed 300 seconds");
        }
        Ok(())
    }
}
