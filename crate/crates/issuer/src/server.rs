//! The token server's operations, independent of transport.
//!
//! All mutations go through one mutex-guarded [`State`]: each operation
//! validates, appends its journal event, then applies the change in memory,
//! all under the lock. Code consumption and revocation are therefore
//! atomic read-modify-write steps.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use captoken_core::scope::{covers_all, dedup_scopes};
use captoken_core::secret::random_urlsafe;
use captoken_core::{
    sign_token, Clock, IssuerMetadata, Journal, KeyRecord, RefreshHandle, Scope, TokenClaims,
    PROFILE_VERSION,
};
use rand::rngs::StdRng;
use rand::SeedableRng;
use tracing::{debug, info};

use crate::config::IssuerConfig;
use crate::error::IssuerError;
use crate::model::{
    secret_id, AuditEntry, AuthorizationGrant, ClientEvent, ClientRecord, ClientView, GrantEvent,
    PolicyRule, RefreshEvent, RefreshTokenRecord, SaltedHash, ANY_CLIENT,
};

/// Attribute under which the authenticated user name is visible to policy.
pub const SUBJECT_ATTRIBUTE: &str = "sub";
/// Attribute matched by Local Mode issuance.
pub const PROJECT_ATTRIBUTE: &str = "project";

pub const CLIENTS_JOURNAL: &str = "clients.journal";
pub const GRANTS_JOURNAL: &str = "grants.journal";
pub const REFRESH_JOURNAL: &str = "refresh.journal";
pub const AUDIT_JOURNAL: &str = "audit.journal";

/// Returned once from [`TokenServer::register_client`]; the plaintext
/// secrets are not recoverable afterwards.
#[derive(Debug, Clone)]
pub struct Registration {
    pub client_id: String,
    pub client_secret: String,
    pub registration_token: String,
    pub client: ClientView,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientAction {
    Get,
    Update { display_name: String },
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientOutcome {
    Record(ClientView),
    Deleted,
}

/// An approved, not yet exchanged authorization.
#[derive(Debug, Clone)]
pub struct CodeGrant {
    pub code: String,
    pub user: String,
    pub client_id: String,
    pub approved_scopes: Vec<Scope>,
    pub expires_at: i64,
}

#[derive(Debug, Clone)]
pub struct AccessGrant {
    pub access_token: String,
    pub scopes: Vec<Scope>,
    pub expires_at: i64,
    pub expires_in: i64,
}

#[derive(Debug, Clone)]
pub struct TokenGrant {
    pub refresh_handle: RefreshHandle,
    pub access: AccessGrant,
}

/// Result of replaying the attenuation audit log.
#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub checked: usize,
    pub violations: Vec<String>,
}

struct KeyRing {
    active: KeyRecord,
    retired: Vec<KeyRecord>,
}

struct Journals {
    clients: Journal<ClientEvent>,
    grants: Journal<GrantEvent>,
    refresh: Journal<RefreshEvent>,
    audit: Journal<AuditEntry>,
}

#[derive(Default)]
struct State {
    clients: BTreeMap<String, ClientRecord>,
    grants: HashMap<String, AuthorizationGrant>,
    refresh: HashMap<String, RefreshTokenRecord>,
    audit: Vec<AuditEntry>,
    policy: Vec<PolicyRule>,
    journals: Option<Journals>,
}

impl State {
    fn apply_client(&mut self, event: ClientEvent) {
        match event {
            ClientEvent::Put(record) => {
                self.clients.insert(record.client_id.clone(), record);
            }
            ClientEvent::Delete { client_id } => {
                self.clients.remove(&client_id);
            }
        }
    }

    fn apply_grant(&mut self, event: GrantEvent) {
        match event {
            GrantEvent::Issued(grant) => {
                self.grants.insert(grant.code_id.clone(), grant);
            }
            GrantEvent::Consumed { code_id } => {
                if let Some(g) = self.grants.get_mut(&code_id) {
                    g.consumed = true;
                }
            }
        }
    }

    fn apply_refresh(&mut self, event: RefreshEvent) {
        match event {
            RefreshEvent::Issued(record) => {
                self.refresh.insert(record.handle_id.clone(), record);
            }
            RefreshEvent::Revoked { handle_id } => {
                if let Some(r) = self.refresh.get_mut(&handle_id) {
                    r.revoked = true;
                }
            }
        }
    }

    fn record_client(&mut self, event: ClientEvent) -> Result<(), IssuerError> {
        if let Some(j) = self.journals.as_mut() {
            j.clients.append(&event)?;
        }
        self.apply_client(event);
        Ok(())
    }

    fn record_grant(&mut self, event: GrantEvent) -> Result<(), IssuerError> {
        if let Some(j) = self.journals.as_mut() {
            j.grants.append(&event)?;
        }
        self.apply_grant(event);
        Ok(())
    }

    fn record_refresh(&mut self, event: RefreshEvent) -> Result<(), IssuerError> {
        if let Some(j) = self.journals.as_mut() {
            j.refresh.append(&event)?;
        }
        self.apply_refresh(event);
        Ok(())
    }

    fn record_audit(&mut self, entry: AuditEntry) -> Result<(), IssuerError> {
        if let Some(j) = self.journals.as_mut() {
            j.audit.append(&entry)?;
        }
        self.audit.push(entry);
        Ok(())
    }

    fn authenticate(&self, client_id: &str, client_secret: &str) -> Result<&ClientRecord, IssuerError> {
        match self.clients.get(client_id) {
            Some(c) if c.client_secret_hash.matches(client_secret) => Ok(c),
            _ => Err(IssuerError::BadClientCredentials),
        }
    }
}

pub struct TokenServer {
    config: IssuerConfig,
    clock: Arc<dyn Clock>,
    keys: RwLock<KeyRing>,
    state: Mutex<State>,
    rng: Mutex<StdRng>,
}

impl TokenServer {
    /// Opens the server, replaying journals from `config.state_dir` if set.
    pub fn open(
        config: IssuerConfig,
        key: KeyRecord,
        clock: Arc<dyn Clock>,
        rng: StdRng,
    ) -> Result<Self, IssuerError> {
        config.validate()?;
        if key.private_part.is_none() {
            return Err(IssuerError::Signing("signing key has no private part".into()));
        }
        let mut state = State {
            policy: config.policy.clone(),
            ..State::default()
        };
        if let Some(dir) = &config.state_dir {
            fs::create_dir_all(dir).map_err(|e| IssuerError::Storage(e.to_string()))?;
            let (clients, client_events) = Journal::open(dir.join(CLIENTS_JOURNAL))?;
            let (grants, grant_events) = Journal::open(dir.join(GRANTS_JOURNAL))?;
            let (refresh, refresh_events) = Journal::open(dir.join(REFRESH_JOURNAL))?;
            let (audit, audit_entries) = Journal::open(dir.join(AUDIT_JOURNAL))?;
            client_events.into_iter().for_each(|e| state.apply_client(e));
            grant_events.into_iter().for_each(|e| state.apply_grant(e));
            refresh_events.into_iter().for_each(|e| state.apply_refresh(e));
            state.audit = audit_entries;
            state.journals = Some(Journals {
                clients,
                grants,
                refresh,
                audit,
            });
            info!(
                clients = state.clients.len(),
                refresh_records = state.refresh.len(),
                "replayed issuer journals"
            );
        }
        Ok(TokenServer {
            config,
            clock,
            keys: RwLock::new(KeyRing {
                active: key,
                retired: Vec::new(),
            }),
            state: Mutex::new(state),
            rng: Mutex::new(rng),
        })
    }

    /// In-memory server seeded from OS entropy.
    pub fn in_memory(config: IssuerConfig, key: KeyRecord, clock: Arc<dyn Clock>) -> Result<Self, IssuerError> {
        let config = IssuerConfig {
            state_dir: None,
            ..config
        };
        Self::open(config, key, clock, StdRng::from_entropy())
    }

    pub fn config(&self) -> &IssuerConfig {
        &self.config
    }

    pub fn issuer(&self) -> &str {
        &self.config.issuer
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("issuer state poisoned")
    }

    fn random(&self, bytes: usize) -> String {
        random_urlsafe(&mut *self.rng.lock().expect("rng poisoned"), bytes)
    }

    fn salted(&self, secret: &str) -> SaltedHash {
        SaltedHash::new(secret, &mut *self.rng.lock().expect("rng poisoned"))
    }

    pub fn metadata(&self) -> IssuerMetadata {
        let keys = self.keys.read().expect("key ring poisoned");
        let published: Vec<KeyRecord> = std::iter::once(keys.active.public_only())
            .chain(keys.retired.iter().map(KeyRecord::public_only))
            .collect();
        IssuerMetadata::new(&self.config.issuer, published.iter())
    }

    /// Makes `key` the signing key. The previous key stays published for
    /// verification unless `drop_previous` is set.
    pub fn rotate_key(&self, key: KeyRecord, drop_previous: bool) -> Result<(), IssuerError> {
        if key.private_part.is_none() {
            return Err(IssuerError::Signing("signing key has no private part".into()));
        }
        let mut keys = self.keys.write().expect("key ring poisoned");
        let previous = std::mem::replace(&mut keys.active, key);
        if drop_previous {
            keys.retired.clear();
        } else {
            keys.retired.push(previous.public_only());
        }
        info!(key_id = %keys.active.key_id, drop_previous, "rotated signing key");
        Ok(())
    }

    fn mint(
        &self,
        subject: &str,
        scopes: Vec<Scope>,
        audience: &str,
        origin: Option<&str>,
    ) -> Result<(AccessGrant, TokenClaims), IssuerError> {
        let now = self.clock.now();
        let lifetime = self.config.access_lifetime;
        let claims = TokenClaims {
            issuer: self.config.issuer.clone(),
            subject: subject.to_string(),
            audience: vec![audience.to_string()],
            scopes: scopes.clone(),
            issued_at: now,
            not_before: now,
            expires_at: now + lifetime,
            token_id: self.random(16),
            origin: origin.map(String::from),
            version: PROFILE_VERSION.to_string(),
        };
        claims
            .check_with_lifetime(lifetime)
            .map_err(IssuerError::Signing)?;
        let keys = self.keys.read().expect("key ring poisoned");
        let token = sign_token(&claims, &keys.active).map_err(|e| IssuerError::Signing(e.to_string()))?;
        debug!(token_id = %claims.token_id, subject, "minted access token");
        Ok((
            AccessGrant {
                access_token: token,
                scopes,
                expires_at: claims.expires_at,
                expires_in: lifetime,
            },
            claims,
        ))
    }

    pub fn register_client(&self, display_name: &str, requested: &[Scope]) -> Result<Registration, IssuerError> {
        if requested.is_empty() {
            return Err(IssuerError::EmptyScopes);
        }
        let allowed = dedup_scopes(
            requested
                .iter()
                .flat_map(|r| self.config.scope_universe.iter().filter_map(move |u| r.meet(u))),
        );
        if allowed.is_empty() {
            return Err(IssuerError::ScopeUniverseEmpty);
        }
        let client_id = format!("client-{}", self.random(12));
        let client_secret = self.random(32);
        let registration_token = self.random(32);
        let record = ClientRecord {
            client_id: client_id.clone(),
            client_secret_hash: self.salted(&client_secret),
            display_name: display_name.to_string(),
            allowed_scopes: allowed,
            registration_token_hash: self.salted(&registration_token),
            created_at: self.clock.now(),
        };
        let view = ClientView::from(&record);
        self.state().record_client(ClientEvent::Put(record))?;
        info!(client_id = %client_id, display_name, "registered client");
        Ok(Registration {
            client_id,
            client_secret,
            registration_token,
            client: view,
        })
    }

    pub fn manage_client(
        &self,
        client_id: &str,
        registration_token: &str,
        action: ClientAction,
    ) -> Result<ClientOutcome, IssuerError> {
        let mut state = self.state();
        let record = state.clients.get(client_id).ok_or(IssuerError::UnknownClient)?;
        if !record.registration_token_hash.matches(registration_token) {
            return Err(IssuerError::BadRegistrationToken);
        }
        match action {
            ClientAction::Get => Ok(ClientOutcome::Record(ClientView::from(record))),
            ClientAction::Update { display_name } => {
                let mut updated = record.clone();
                updated.display_name = display_name;
                let view = ClientView::from(&updated);
                state.record_client(ClientEvent::Put(updated))?;
                Ok(ClientOutcome::Record(view))
            }
            ClientAction::Delete => {
                let owned: Vec<String> = state
                    .refresh
                    .values()
                    .filter(|r| r.client_id == client_id && !r.revoked)
                    .map(|r| r.handle_id.clone())
                    .collect();
                for handle_id in owned {
                    state.record_refresh(RefreshEvent::Revoked { handle_id })?;
                }
                state.record_client(ClientEvent::Delete {
                    client_id: client_id.to_string(),
                })?;
                info!(client_id, "deleted client");
                Ok(ClientOutcome::Deleted)
            }
        }
    }

    /// Adds a policy rule at runtime. A rule pinned to an existing client
    /// may only grant within that client's allowed scopes.
    pub fn add_policy_rule(&self, rule: PolicyRule) -> Result<(), IssuerError> {
        let mut state = self.state();
        if rule.client_id != ANY_CLIENT {
            if let Some(client) = state.clients.get(&rule.client_id) {
                if !covers_all(&client.allowed_scopes, &rule.grantable_scopes) {
                    return Err(IssuerError::InvalidPolicy(
                        "grantable scopes exceed the client's allowed scopes".into(),
                    ));
                }
            }
        }
        state.policy.push(rule);
        Ok(())
    }

    pub fn policy(&self) -> Vec<PolicyRule> {
        self.state().policy.clone()
    }

    /// Programmatic consent: approves `requested ∩ policy ∩ client.allowed`
    /// on the prefix lattice and stores a single-use code.
    pub fn authorize(
        &self,
        user: &str,
        user_attributes: &BTreeMap<String, String>,
        client_id: &str,
        requested: &[Scope],
    ) -> Result<CodeGrant, IssuerError> {
        let mut attributes = user_attributes.clone();
        attributes.insert(SUBJECT_ATTRIBUTE.to_string(), user.to_string());

        let code = self.random(32);
        let mut state = self.state();
        let client = state.clients.get(client_id).ok_or(IssuerError::UnknownClient)?;
        let grantable: Vec<&Scope> = state
            .policy
            .iter()
            .filter(|rule| rule.applies(client_id, &attributes))
            .flat_map(|rule| rule.grantable_scopes.iter())
            .collect();
        let approved = approve(requested, &grantable, &client.allowed_scopes);
        if approved.is_empty() {
            info!(user, client_id, "authorization denied by policy");
            return Err(IssuerError::NoScopesApproved);
        }
        let expires_at = self.clock.now() + self.config.code_lifetime;
        state.record_grant(GrantEvent::Issued(AuthorizationGrant {
            code_id: secret_id(&code),
            user: user.to_string(),
            client_id: client_id.to_string(),
            approved_scopes: approved.clone(),
            expires_at,
            consumed: false,
        }))?;
        info!(user, client_id, "issued authorization code");
        Ok(CodeGrant {
            code,
            user: user.to_string(),
            client_id: client_id.to_string(),
            approved_scopes: approved,
            expires_at,
        })
    }

    pub fn exchange_code(&self, code: &str, client_id: &str, client_secret: &str) -> Result<TokenGrant, IssuerError> {
        let now = self.clock.now();
        let handle = RefreshHandle::new(self.random(32));
        let mut state = self.state();
        state.authenticate(client_id, client_secret)?;
        let code_id = secret_id(code);
        let grant = match state.grants.get(&code_id) {
            Some(g) if g.client_id == client_id => g.clone(),
            _ => return Err(IssuerError::UnknownCode),
        };
        if grant.consumed {
            return Err(IssuerError::CodeConsumed);
        }
        if now > grant.expires_at {
            return Err(IssuerError::CodeExpired);
        }
        state.record_grant(GrantEvent::Consumed { code_id })?;

        let record = RefreshTokenRecord {
            handle_id: handle.fingerprint(),
            user: grant.user.clone(),
            client_id: client_id.to_string(),
            granted_scopes: grant.approved_scopes.clone(),
            issued_at: now,
            expires_at: now + self.config.refresh_lifetime,
            revoked: false,
        };
        state.record_refresh(RefreshEvent::Issued(record.clone()))?;
        let (access, claims) = self.mint(
            &grant.user,
            grant.approved_scopes.clone(),
            &self.config.default_audience,
            None,
        )?;
        state.record_audit(AuditEntry {
            token_id: claims.token_id,
            handle_id: record.handle_id.clone(),
            minted_scopes: access.scopes.clone(),
            minted_at: now,
        })?;
        info!(client_id, handle = %&record.handle_id[..12], "exchanged code for refresh token");
        Ok(TokenGrant {
            refresh_handle: handle,
            access,
        })
    }

    pub fn refresh_access(
        &self,
        refresh_handle: &str,
        requested: Option<&[Scope]>,
        audience: &str,
        origin: Option<&str>,
    ) -> Result<AccessGrant, IssuerError> {
        self.refresh_inner(None, refresh_handle, requested, audience, origin)
    }

    /// As [`refresh_access`](Self::refresh_access), additionally requiring
    /// the handle to belong to the authenticated client.
    pub fn refresh_access_as_client(
        &self,
        client_id: &str,
        client_secret: &str,
        refresh_handle: &str,
        requested: Option<&[Scope]>,
        audience: &str,
        origin: Option<&str>,
    ) -> Result<AccessGrant, IssuerError> {
        self.refresh_inner(
            Some((client_id, client_secret)),
            refresh_handle,
            requested,
            audience,
            origin,
        )
    }

    fn refresh_inner(
        &self,
        client: Option<(&str, &str)>,
        refresh_handle: &str,
        requested: Option<&[Scope]>,
        audience: &str,
        origin: Option<&str>,
    ) -> Result<AccessGrant, IssuerError> {
        if audience.is_empty() {
            return Err(IssuerError::BadRequest("audience is required".into()));
        }
        let now = self.clock.now();
        let mut state = self.state();
        if let Some((id, secret)) = client {
            state.authenticate(id, secret)?;
        }
        let handle_id = secret_id(refresh_handle);
        let record = match state.refresh.get(&handle_id) {
            Some(r) if client.is_none_or(|(id, _)| r.client_id == id) => r.clone(),
            _ => return Err(IssuerError::UnknownHandle),
        };
        if record.revoked {
            return Err(IssuerError::Revoked);
        }
        if now >= record.expires_at {
            return Err(IssuerError::RefreshExpired);
        }
        let scopes = match requested {
            Some(req) if !req.is_empty() => {
                if !covers_all(&record.granted_scopes, req) {
                    info!(handle = %&handle_id[..12], "refused scope escalation");
                    return Err(IssuerError::ScopeEscalation);
                }
                dedup_scopes(req.iter().cloned())
            }
            _ => record.granted_scopes.clone(),
        };
        let (access, claims) = self.mint(&record.user, scopes, audience, origin)?;
        state.record_audit(AuditEntry {
            token_id: claims.token_id,
            handle_id,
            minted_scopes: access.scopes.clone(),
            minted_at: now,
        })?;
        Ok(access)
    }

    /// Revokes a refresh handle owned by the calling client. Unknown
    /// values, access tokens and handles owned by other clients are
    /// accepted silently without effect.
    pub fn revoke(&self, token_or_handle: &str, client_id: &str, client_secret: &str) -> Result<(), IssuerError> {
        let mut state = self.state();
        state.authenticate(client_id, client_secret)?;
        let handle_id = secret_id(token_or_handle);
        let owned_live = state
            .refresh
            .get(&handle_id)
            .is_some_and(|r| r.client_id == client_id && !r.revoked);
        if owned_live {
            state.record_refresh(RefreshEvent::Revoked {
                handle_id: handle_id.clone(),
            })?;
            info!(client_id, handle = %&handle_id[..12], "revoked refresh token");
        }
        Ok(())
    }

    /// Local Mode: mints an access token straight from project policy,
    /// with no consent step and no refresh record.
    pub fn local_issue(
        &self,
        user: &str,
        job_project: &str,
        policy: &[PolicyRule],
        audience: &str,
    ) -> Result<String, IssuerError> {
        let matching: Vec<&PolicyRule> = policy
            .iter()
            .filter(|r| r.attribute_key == PROJECT_ATTRIBUTE && r.attribute_value == job_project)
            .collect();
        let scopes = dedup_scopes(matching.iter().flat_map(|r| r.grantable_scopes.iter().cloned()));
        if scopes.is_empty() {
            return Err(IssuerError::NoMatchingPolicy);
        }
        let (access, _) = self.mint(user, scopes, audience, None)?;
        info!(user, project = job_project, "local-mode issuance");
        Ok(access.access_token)
    }

    pub fn refresh_record(&self, handle: &RefreshHandle) -> Option<RefreshTokenRecord> {
        self.state().refresh.get(&handle.fingerprint()).cloned()
    }

    pub fn refresh_record_count(&self) -> usize {
        self.state().refresh.len()
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.state().audit.clone()
    }

    /// Replays the audit log: every minted scope must be covered by the
    /// granted scopes of the refresh record it was minted from.
    pub fn replay_audit(&self) -> AuditReport {
        let state = self.state();
        let mut report = AuditReport::default();
        for entry in &state.audit {
            report.checked += 1;
            match state.refresh.get(&entry.handle_id) {
                None => report
                    .violations
                    .push(format!("{}: no refresh record", entry.token_id)),
                Some(record) if !covers_all(&record.granted_scopes, &entry.minted_scopes) => {
                    report.violations.push(format!("{}: scope escalation", entry.token_id))
                }
                Some(_) => {}
            }
        }
        report
    }
}

/// Approved scopes: for each requested scope, its meet with every
/// grantable scope, further met with every allowed scope.
fn approve(requested: &[Scope], grantable: &[&Scope], allowed: &[Scope]) -> Vec<Scope> {
    dedup_scopes(requested.iter().flat_map(|r| {
        grantable
            .iter()
            .filter_map(move |g| r.meet(g))
            .flat_map(move |rg| allowed.iter().filter_map(move |a| rg.meet(a)))
    }))
}
