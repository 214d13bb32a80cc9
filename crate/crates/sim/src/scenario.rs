//! Declarative scenario files: services, users, pre-seeded credentials,
//! jobs, timed faults and expected final states.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use captoken_core::{Scope, Timestamp};
use captoken_issuer::PolicyRule;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioParseError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

pub const DEFAULT_HANDLE: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_time: Timestamp,
    #[serde(default)]
    pub services: Services,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub credentials: Vec<CredentialSeed>,
    #[serde(default)]
    pub fixtures: Vec<Fixture>,
    #[serde(default)]
    pub jobs: Vec<JobSpec>,
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// Job id to expected final status, e.g. `"held(Revoked)"`.
    #[serde(default)]
    pub expect: BTreeMap<String, String>,
}

fn default_start() -> Timestamp {
    1_700_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Services {
    pub access_lifetime: i64,
    pub audience: String,
    pub provider: String,
    pub scope_universe: Vec<Scope>,
    pub policy: Vec<PolicyRule>,
    pub nodes: Vec<String>,
    /// Virtual seconds per scheduling step.
    pub tick: i64,
    /// Virtual seconds after the last scheduled event before the run stops.
    pub horizon: i64,
}

impl Default for Services {
    fn default() -> Self {
        Services {
            access_lifetime: 600,
            audience: "https://data.sim".into(),
            provider: "sim".into(),
            scope_universe: vec![Scope::read("/").unwrap(), Scope::write("/").unwrap()],
            policy: Vec::new(),
            nodes: vec!["exec-node-1".into(), "exec-node-2".into()],
            tick: 10,
            horizon: 3600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub name: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// A credential obtained through the full authorization flow at boot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialSeed {
    pub user: String,
    #[serde(default = "default_handle")]
    pub handle_name: String,
    pub scopes: Vec<Scope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub path: String,
    pub content: String,
}

fn default_handle() -> String {
    DEFAULT_HANDLE.into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub job_id: String,
    pub user: String,
    /// Defaults to the services provider.
    #[serde(default)]
    pub provider: String,
    #[serde(default = "default_handle")]
    pub handle_name: String,
    #[serde(default, alias = "stage_in")]
    pub stage_in_scopes: Vec<Scope>,
    #[serde(default, alias = "execute")]
    pub execute_scopes: Vec<Scope>,
    #[serde(default, alias = "stage_out")]
    pub stage_out_scopes: Vec<Scope>,
    /// Defaults to the services audience.
    #[serde(default)]
    pub audience: String,
    #[serde(default = "default_true")]
    pub restrict_origin: bool,
    /// Virtual seconds for stage-in, execute and stage-out.
    #[serde(default = "default_durations")]
    pub phase_durations: [i64; 3],
    /// Offset from the scenario start.
    #[serde(default)]
    pub submit_at: i64,
}

fn default_durations() -> [i64; 3] {
    [30, 120, 30]
}

impl JobSpec {
    pub fn new(job_id: &str, user: &str) -> Self {
        JobSpec {
            job_id: job_id.into(),
            user: user.into(),
            provider: String::new(),
            handle_name: default_handle(),
            stage_in_scopes: Vec::new(),
            execute_scopes: Vec::new(),
            stage_out_scopes: Vec::new(),
            audience: String::new(),
            restrict_origin: true,
            phase_durations: default_durations(),
            submit_at: 0,
        }
    }

    pub fn phase_scopes(&self) -> [&[Scope]; 3] {
        [&self.stage_in_scopes, &self.execute_scopes, &self.stage_out_scopes]
    }

    /// Every scope any phase needs, deduplicated, in first-seen order.
    pub fn all_scopes(&self) -> Vec<Scope> {
        let mut seen = BTreeSet::new();
        self.phase_scopes()
            .into_iter()
            .flatten()
            .filter(|s| seen.insert((*s).clone()))
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.job_id.is_empty() || self.user.is_empty() || self.handle_name.is_empty() {
            return Err("job_id, user and handle_name must be non-empty".into());
        }
        if self.phase_durations.iter().any(|d| *d < 0) {
            return Err(format!("job {}: negative phase duration", self.job_id));
        }
        if self.all_scopes().is_empty() {
            return Err(format!("job {}: no scopes", self.job_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    /// Offset from the scenario start; applied at the first step at or after it.
    pub at: i64,
    #[serde(flatten)]
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultAction {
    /// Revokes a stored credential's refresh token through the daemon.
    Revoke {
        user: String,
        #[serde(default = "default_handle")]
        handle_name: String,
    },
    /// Kills the credential daemon and reopens it from its journal.
    RestartCredd,
    /// Installs a new signing key; the gateway re-reads discovery.
    RotateKeys {
        #[serde(default)]
        drop_previous: bool,
    },
    /// Adds a policy rule at the token server.
    AddRule { rule: PolicyRule },
    /// Releases a held job.
    Release { job: String },
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioParseError> {
        let mut scenario: Scenario = toml::from_str(text)?;
        scenario.fill_defaults();
        scenario.validate().map_err(ScenarioParseError::Invalid)?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioParseError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioParseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn fill_defaults(&mut self) {
        for job in &mut self.jobs {
            if job.provider.is_empty() {
                job.provider = self.services.provider.clone();
            }
            if job.audience.is_empty() {
                job.audience = self.services.audience.clone();
            }
        }
    }

    pub fn user(&self, name: &str) -> Option<&UserSpec> {
        self.users.iter().find(|u| u.name == name)
    }

    fn validate(&self) -> Result<(), String> {
        let s = &self.services;
        if s.tick <= 0 || s.access_lifetime <= 0 || s.horizon <= 0 {
            return Err("tick, access_lifetime and horizon must be positive".into());
        }
        if s.nodes.is_empty() {
            return Err("at least one execute node is required".into());
        }
        let known_user = |u: &str| {
            self.user(u)
                .map(|_| ())
                .ok_or_else(|| format!("unknown user {u:?}"))
        };
        for c in &self.credentials {
            known_user(&c.user)?;
            if c.scopes.is_empty() {
                return Err(format!("credential for {} has no scopes", c.user));
            }
        }
        let mut ids = BTreeSet::new();
        for job in &self.jobs {
            job.validate()?;
            known_user(&job.user)?;
            if !ids.insert(job.job_id.as_str()) {
                return Err(format!("duplicate job id {:?}", job.job_id));
            }
        }
        for f in &self.faults {
            match &f.action {
                FaultAction::Revoke { user, .. } => known_user(user)?,
                FaultAction::Release { job } if !ids.contains(job.as_str()) => {
                    return Err(format!("release of unknown job {job:?}"))
                }
                _ => {}
            }
        }
        if let Some(job) = self.expect.keys().find(|j| !ids.contains(j.as_str())) {
            return Err(format!("expectation for unknown job {job:?}"));
        }
        Ok(())
    }
}
