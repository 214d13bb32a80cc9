//! The simulation driver: submit-side roles (submit tool, schedd,
//! shadow), the execute-side starter, and timed fault injection.
//!
//! Jobs are stepped one at a time, in submission order, at each virtual
//! tick; the clock moves only after every job has settled for that tick.

use std::collections::{BTreeSet, VecDeque};

use captoken_core::scope::format_scope_list;
use captoken_core::{covers_all, decode_unverified, Clock, Operation, Scope, TokenClaims};
use captoken_credd::{write_deposit, AccessRequest, CredentialKey, Deposit};
use captoken_issuer::wire::AuthorizeRequest;
use captoken_issuer::PolicyRule;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::job::{HeldToken, HoldRecord, Job, JobState, JobStatus, Phase, Step, TokenRecord};
use crate::scenario::{Fault, FaultAction, JobSpec, Scenario, ScenarioParseError};
use crate::stack::{BootError, DataReply, Stack};
use crate::transcript::{Domain, Envelope};

/// Origin presented when replaying a captured token from another host.
pub const REPLAY_ORIGIN: &str = "replay-host";

/// Fraction of an access token's lifetime below which the starter asks
/// for a new one.
pub const RENEW_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Parse(#[from] ScenarioParseError),
    #[error("boot failed: {0}")]
    Boot(#[from] BootError),
    #[error("unknown job {0:?}")]
    UnknownJob(String),
    #[error("job {0:?} is not held")]
    NotHeld(String),
    #[error("invalid job: {0}")]
    InvalidJob(String),
}

impl SimError {
    pub fn reason(&self) -> &'static str {
        match self {
            SimError::Parse(_) => "ScenarioParseError",
            SimError::Boot(_) => "BootFailed",
            SimError::UnknownJob(_) => "UnknownJob",
            SimError::NotHeld(_) => "NotHeld",
            SimError::InvalidJob(_) => "InvalidJob",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RestartRecord {
    pub at: i64,
    pub before: usize,
    pub after: usize,
    /// Credentials (by key) present before the restart but not after.
    pub lost: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProbeRecord {
    pub job: String,
    pub node: String,
    pub origin: String,
    pub status: u16,
    pub reason: Option<String>,
}

/// Outcome of a step that may put the job on hold.
type StepResult = Result<(), (String, u64)>;

pub struct Simulation {
    scenario: Scenario,
    stack: Stack,
    jobs: Vec<Job>,
    pending_jobs: VecDeque<JobSpec>,
    pending_faults: VecDeque<Fault>,
    node_cursor: usize,
    pub(crate) restarts: Vec<RestartRecord>,
    pub(crate) probes: Vec<ProbeRecord>,
    pub(crate) revoked: BTreeSet<CredentialKey>,
    pub(crate) refusals: usize,
}

fn env<'a>(domain: Domain, from: &'a str, to: &'a str, kind: &'a str, job: Option<&'a str>) -> Envelope<'a> {
    Envelope {
        domain,
        from,
        to,
        kind,
        job,
    }
}

impl Simulation {
    /// Boots every service and obtains the scenario's pre-seeded
    /// credentials. Scenario jobs and faults are queued for `run`.
    pub async fn boot(scenario: Scenario) -> Result<Self, SimError> {
        let stack = Stack::boot(&scenario).await?;
        let mut faults: Vec<Fault> = scenario.faults.clone();
        faults.sort_by_key(|f| f.at);
        let mut jobs: Vec<JobSpec> = scenario.jobs.clone();
        jobs.sort_by_key(|j| j.submit_at);
        let mut sim = Simulation {
            stack,
            jobs: Vec::new(),
            pending_jobs: jobs.into(),
            pending_faults: faults.into(),
            node_cursor: 0,
            restarts: Vec::new(),
            probes: Vec::new(),
            revoked: BTreeSet::new(),
            refusals: 0,
            scenario,
        };
        for spec in sim.scenario.jobs.clone() {
            sim.prepare_fixtures(&spec)?;
        }
        for seed in sim.scenario.credentials.clone() {
            let provider = sim.scenario.services.provider.clone();
            sim.acquire(&seed.user, &provider, &seed.handle_name, &seed.scopes, None)
                .await
                .map_err(|(reason, _)| BootError(format!("credential for {}: {reason}", seed.user)))?;
        }
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn stack(&self) -> &Stack {
        &self.stack
    }

    pub fn now(&self) -> i64 {
        self.stack.clock.now()
    }

    pub fn job_ids(&self) -> Vec<String> {
        self.jobs.iter().map(|j| j.spec.job_id.clone()).collect()
    }

    fn index(&self, job_id: &str) -> Result<usize, SimError> {
        self.jobs
            .iter()
            .position(|j| j.spec.job_id == job_id)
            .ok_or_else(|| SimError::UnknownJob(job_id.into()))
    }

    pub fn job(&self, job_id: &str) -> Option<JobState> {
        let job = self.jobs.iter().find(|j| j.spec.job_id == job_id)?;
        Some(JobState {
            job_id: job.spec.job_id.clone(),
            user: job.spec.user.clone(),
            handle_name: job.spec.handle_name.clone(),
            status: job.status.clone(),
            assigned_node: job.node.clone(),
            tokens: job.tokens.clone(),
            holds: job.holds.clone(),
            transcript: self
                .stack
                .transcript
                .messages()
                .into_iter()
                .filter(|m| m.job.as_deref() == Some(job_id))
                .collect(),
        })
    }

    /// The access token the job's starter currently holds, if any.
    pub fn current_token(&self, job_id: &str) -> Option<String> {
        let job = self.jobs.iter().find(|j| j.spec.job_id == job_id)?;
        job.current.as_ref().map(|t| t.token.clone())
    }

    pub fn jobs(&self) -> Vec<JobState> {
        self.jobs
            .iter()
            .filter_map(|j| self.job(&j.spec.job_id))
            .collect()
    }

    fn record(&mut self, envelope: Envelope<'_>, payload: Value) -> u64 {
        match self.stack.transcript.send(envelope, &payload) {
            Ok(seq) => seq,
            Err(_) => {
                self.refusals += 1;
                u64::MAX
            }
        }
    }

    fn renew_threshold(&self) -> i64 {
        ((self.scenario.services.access_lifetime as f64 * RENEW_FRACTION).ceil() as i64).max(1)
    }

    fn prepare_fixtures(&mut self, spec: &JobSpec) -> Result<(), SimError> {
        for scope in spec.all_scopes() {
            if scope.operation() == Operation::Read {
                self.stack.ensure_fixture(scope.path())?;
            }
        }
        Ok(())
    }

    fn key_of(spec: &JobSpec) -> CredentialKey {
        CredentialKey::new(&spec.user, &spec.provider, &spec.handle_name)
    }

    // Submit side

    /// Runs authorize, deposit and rendezvous pickup for one credential.
    async fn acquire(
        &mut self,
        user: &str,
        provider: &str,
        handle_name: &str,
        scopes: &[Scope],
        job: Option<&str>,
    ) -> StepResult {
        let attributes = self
            .scenario
            .user(user)
            .map(|u| u.attributes.clone())
            .unwrap_or_default();
        let request = AuthorizeRequest {
            user: user.to_string(),
            attributes,
            client_id: self.stack.credd_client_id.clone(),
            scope: format_scope_list(scopes),
        };
        self.record(
            env(Domain::Issuer, "submit_tool", "issuer", "authorize", job),
            json!({"user": user, "client_id": request.client_id, "scope": request.scope}),
        );
        let code = match self.stack.issuer_client.authorize(&request).await {
            Ok(resp) => {
                self.record(
                    env(Domain::Issuer, "issuer", "submit_tool", "authorize_response", job),
                    json!({"code": resp.code, "scope": resp.scope}),
                );
                resp.code
            }
            Err(e) => {
                let seq = self.record(
                    env(Domain::Issuer, "issuer", "submit_tool", "authorize_response", job),
                    json!({"reason": e.reason()}),
                );
                return Err((e.reason().to_string(), seq));
            }
        };
        let deposit = Deposit {
            user: user.to_string(),
            provider: provider.to_string(),
            handle_name: handle_name.to_string(),
            code,
            client_id: self.stack.credd_client_id.clone(),
        };
        let seq = self.record(
            env(Domain::Submit, "consent_helper", "rendezvous", "deposit", job),
            serde_json::to_value(&deposit).expect("deposit serializes"),
        );
        if write_deposit(&self.stack.rendezvous, &deposit).is_err() {
            return Err(("DepositFailed".into(), seq));
        }
        let daemon = self.stack.daemon().clone();
        match daemon.rendezvous_pickup(&self.stack.rendezvous).await {
            Ok(report) => {
                let quarantined: Vec<&str> = report.quarantined.iter().map(|q| q.reason.as_str()).collect();
                let seq = self.record(
                    env(Domain::Submit, "credd", "rendezvous", "pickup", job),
                    json!({
                        "stored": report.stored.len(),
                        "quarantined": quarantined,
                        "deferred": report.deferred.len(),
                    }),
                );
                if let Some(q) = report.quarantined.first() {
                    return Err((q.reason.clone(), seq));
                }
                if !report.deferred.is_empty() {
                    return Err(("Transport".into(), seq));
                }
                Ok(())
            }
            Err(e) => {
                let seq = self.record(
                    env(Domain::Submit, "credd", "rendezvous", "pickup", job),
                    json!({"reason": e.reason()}),
                );
                Err((e.reason().to_string(), seq))
            }
        }
    }

    /// Asks credd for its stored credentials over the control socket.
    async fn granted_scopes(&mut self, key: &CredentialKey, job: &str) -> Result<Option<Vec<Scope>>, (String, u64)> {
        self.record(env(Domain::Submit, "submit_tool", "credd", "list", Some(job)), json!({}));
        match self.stack.control.list().await {
            Ok(list) => {
                let found = list.into_iter().find(|c| &c.key == key).map(|c| c.granted_scopes);
                self.record(
                    env(Domain::Submit, "credd", "submit_tool", "list_response", Some(job)),
                    json!({"found": found.is_some(), "scope": found.as_deref().map(format_scope_list)}),
                );
                Ok(found)
            }
            Err(e) => {
                let seq = self.record(
                    env(Domain::Submit, "credd", "submit_tool", "list_response", Some(job)),
                    json!({"reason": e.reason()}),
                );
                Err((e.reason().to_string(), seq))
            }
        }
    }

    /// Submit-time credential check. A missing credential triggers the
    /// authorization flow; on a retry so does an insufficient one.
    async fn submit_step(&mut self, idx: usize, retry: bool) -> StepResult {
        let spec = self.jobs[idx].spec.clone();
        let id = spec.job_id.as_str();
        let key = Self::key_of(&spec);
        let covered = |granted: &[Scope]| spec.phase_scopes().iter().all(|list| covers_all(granted, list));
        let mut granted = self.granted_scopes(&key, id).await?;
        let needs_flow = match &granted {
            None => true,
            Some(g) => retry && !covered(g),
        };
        if needs_flow {
            self.acquire(&spec.user, &spec.provider, &spec.handle_name, &spec.all_scopes(), Some(id))
                .await?;
            granted = self.granted_scopes(&key, id).await?;
        }
        let ok = granted.as_deref().is_some_and(covered);
        let mut payload = json!({"ok": ok});
        if !ok {
            payload["reason"] = json!("NoScopesApproved");
        }
        let seq = self.record(env(Domain::Submit, "schedd", "submit_tool", "coverage_check", Some(id)), payload);
        if ok {
            Ok(())
        } else {
            Err(("NoScopesApproved".into(), seq))
        }
    }

    fn hold(&mut self, idx: usize, step: Step, reason: String, cause: u64) {
        let at = self.now();
        let id = self.jobs[idx].spec.job_id.clone();
        self.record(
            env(Domain::Submit, "schedd", "schedd", "hold", Some(&id)),
            json!({"reason": reason, "step": step.to_string(), "cause": cause}),
        );
        let job = &mut self.jobs[idx];
        job.status = JobStatus::Held(reason.clone());
        job.resume = Some(step);
        job.current = None;
        job.holds.push(HoldRecord { at, step, reason, cause });
    }

    fn fail(&mut self, idx: usize, reason: &str) {
        self.jobs[idx].status = JobStatus::Failed(reason.into());
        self.jobs[idx].current = None;
    }

    /// Queues a job. Runs the submit-time credential check immediately;
    /// failures leave the job held rather than returning an error.
    pub async fn submit_job(&mut self, spec: JobSpec) -> Result<String, SimError> {
        let mut spec = spec;
        if spec.provider.is_empty() {
            spec.provider = self.scenario.services.provider.clone();
        }
        if spec.audience.is_empty() {
            spec.audience = self.scenario.services.audience.clone();
        }
        spec.validate().map_err(SimError::InvalidJob)?;
        if self.scenario.user(&spec.user).is_none() {
            return Err(SimError::InvalidJob(format!("unknown user {:?}", spec.user)));
        }
        if self.index(&spec.job_id).is_ok() {
            return Err(SimError::InvalidJob(format!("duplicate job id {:?}", spec.job_id)));
        }
        self.prepare_fixtures(&spec)?;
        let id = spec.job_id.clone();
        self.record(
            env(Domain::Submit, "submit_tool", "schedd", "submit", Some(&id)),
            json!({
                "user": spec.user,
                "handle_name": spec.handle_name,
                "stage_in": format_scope_list(&spec.stage_in_scopes),
                "execute": format_scope_list(&spec.execute_scopes),
                "stage_out": format_scope_list(&spec.stage_out_scopes),
            }),
        );
        self.jobs.push(Job::new(spec));
        let idx = self.jobs.len() - 1;
        if let Err((reason, cause)) = self.submit_step(idx, false).await {
            self.hold(idx, Step::Submit, reason, cause);
        }
        Ok(id)
    }

    // Execute side

    fn start_phase(&mut self, idx: usize, phase: Phase) {
        let now = self.now();
        let node = self.jobs[idx].node.clone().unwrap_or_default();
        let id = self.jobs[idx].spec.job_id.clone();
        self.record(
            env(Domain::Execute, "shadow", "starter", "phase_start", Some(&id)),
            json!({"phase": phase.as_str(), "node": node}),
        );
        let job = &mut self.jobs[idx];
        job.status = phase.status();
        job.phase_start = now;
        job.next_op = 0;
        job.current = None;
    }

    /// Makes sure the starter holds a token for this phase with enough
    /// lifetime left, asking the shadow (and through it credd) if not.
    async fn ensure_token(&mut self, idx: usize, phase: Phase) -> StepResult {
        let now = self.now();
        let threshold = self.renew_threshold();
        if let Some(t) = &self.jobs[idx].current {
            if t.expires_at - now >= threshold {
                return Ok(());
            }
        }
        let job = &self.jobs[idx];
        let spec = job.spec.clone();
        let id = spec.job_id.as_str();
        let node = job.node.clone().unwrap_or_default();
        let scopes = spec.phase_scopes()[phase.index()].to_vec();
        let mut request = AccessRequest::new(Self::key_of(&spec), scopes.clone(), &spec.audience)
            .with_min_remaining(threshold)
            .minted_after(job.phase_start);
        if spec.restrict_origin {
            request = request.with_origin(&node);
        }
        self.record(
            env(Domain::Submit, "starter", "shadow", "token_request", Some(id)),
            json!({"phase": phase.as_str(), "scope": format_scope_list(&scopes)}),
        );
        self.record(
            env(Domain::Submit, "shadow", "credd", "get_access", Some(id)),
            serde_json::to_value(&request).expect("request serializes"),
        );
        let token = match self.stack.control.get_access(request).await {
            Ok(token) => {
                self.record(
                    env(Domain::Submit, "credd", "shadow", "get_access_response", Some(id)),
                    json!({"access_token": token}),
                );
                token
            }
            Err(e) => {
                let seq = self.record(
                    env(Domain::Submit, "credd", "shadow", "get_access_response", Some(id)),
                    json!({"reason": e.reason()}),
                );
                return Err((e.reason().to_string(), seq));
            }
        };
        let seq = self.record(
            env(Domain::Execute, "shadow", "starter", "token_delivery", Some(id)),
            json!({"phase": phase.as_str(), "access_token": token}),
        );
        if seq == u64::MAX {
            return Err(("ContainmentViolation".into(), seq));
        }
        let claims: TokenClaims = match decode_unverified(&token).map(|(_, p)| serde_json::from_value(p)) {
            Ok(Ok(c)) => c,
            _ => return Err(("Malformed".into(), seq)),
        };
        let job = &mut self.jobs[idx];
        job.tokens.push(TokenRecord {
            phase,
            token_id: claims.token_id.clone(),
            issued_at: claims.issued_at,
            expires_at: claims.expires_at,
            origin: claims.origin.clone(),
        });
        job.current = Some(HeldToken {
            token,
            expires_at: claims.expires_at,
        });
        Ok(())
    }

    fn op_target(job_id: &str, scope: &Scope) -> (bool, String) {
        match scope.operation() {
            Operation::Read => (false, scope.path().to_string()),
            Operation::Write => (
                true,
                format!("{}/{}.out", scope.path().trim_end_matches('/'), job_id),
            ),
        }
    }

    async fn data_op(&mut self, idx: usize, phase: Phase, scope: &Scope) -> StepResult {
        let job = &self.jobs[idx];
        let id = job.spec.job_id.clone();
        let node = job.node.clone().unwrap_or_default();
        let token = job.current.as_ref().map(|t| t.token.clone()).unwrap_or_default();
        let (write, path) = Self::op_target(&id, scope);
        let body = if write {
            format!("output of {id} on {node}\n").into_bytes()
        } else {
            Vec::new()
        };
        self.record(
            env(Domain::Data, "starter", "gateway", "data_request", Some(&id)),
            json!({
                "method": if write { "PUT" } else { "GET" },
                "path": path,
                "authorization": format!("Bearer {token}"),
                "origin": node,
                "phase": phase.as_str(),
                "bytes": body.len(),
            }),
        );
        let reply = self.stack.data_request(write, &path, &token, Some(&node), body).await;
        let seq = self.record(
            env(Domain::Execute, "gateway", "starter", "data_response", Some(&id)),
            json!({"status": reply.status, "reason": reply.reason, "bytes": reply.bytes}),
        );
        if reply.is_success() {
            Ok(())
        } else {
            let reason = reply.reason.unwrap_or_else(|| format!("Status{}", reply.status));
            Err((reason, seq))
        }
    }

    /// Replays the job's execute token from a foreign origin.
    async fn origin_probe(&mut self, idx: usize) {
        let job = &self.jobs[idx];
        let (Some(scope), Some(token)) = (job.spec.execute_scopes.first(), job.current.as_ref()) else {
            return;
        };
        let id = job.spec.job_id.clone();
        let node = job.node.clone().unwrap_or_default();
        let token = token.token.clone();
        let (write, path) = Self::op_target(&id, scope);
        self.record(
            env(Domain::Data, "observer", "gateway", "replay_probe", Some(&id)),
            json!({"path": path, "authorization": format!("Bearer {token}"), "origin": REPLAY_ORIGIN}),
        );
        let reply = self
            .stack
            .data_request(write, &path, &token, Some(REPLAY_ORIGIN), b"replayed\n".to_vec())
            .await;
        self.record(
            env(Domain::Execute, "gateway", "observer", "replay_response", Some(&id)),
            json!({"status": reply.status, "reason": reply.reason}),
        );
        self.probes.push(ProbeRecord {
            job: id,
            node,
            origin: REPLAY_ORIGIN.into(),
            status: reply.status,
            reason: reply.reason,
        });
        self.jobs[idx].probed = true;
    }

    /// Sends one request to the data gateway, outside any job.
    pub async fn replay(&self, token: &str, path: &str, origin: Option<&str>) -> DataReply {
        self.stack.data_request(false, path, token, origin, Vec::new()).await
    }

    /// Advances one job as far as the current instant allows.
    async fn advance_job(&mut self, idx: usize) {
        let now = self.now();
        loop {
            let status = self.jobs[idx].status.clone();
            if status == JobStatus::Idle {
                if self.jobs[idx].node.is_none() {
                    let nodes = &self.scenario.services.nodes;
                    let node = nodes[self.node_cursor % nodes.len()].clone();
                    self.node_cursor += 1;
                    let id = self.jobs[idx].spec.job_id.clone();
                    self.record(
                        env(Domain::Submit, "schedd", "shadow", "match", Some(&id)),
                        json!({"node": node}),
                    );
                    self.jobs[idx].node = Some(node);
                }
                self.start_phase(idx, Phase::StageIn);
                continue;
            }
            let Some(phase) = status.phase() else {
                return;
            };
            let spec = self.jobs[idx].spec.clone();
            let scopes = spec.phase_scopes()[phase.index()].to_vec();
            let duration = spec.phase_durations[phase.index()];
            let start = self.jobs[idx].phase_start;
            let n = scopes.len() as i64;
            let done = |next: usize| next as i64 >= n;

            if done(self.jobs[idx].next_op) && now >= start + duration {
                self.jobs[idx].current = None;
                match phase.next() {
                    Some(next) => self.start_phase(idx, next),
                    None => {
                        self.record(
                            env(Domain::Submit, "shadow", "schedd", "job_complete", Some(&spec.job_id)),
                            json!({}),
                        );
                        self.jobs[idx].status = JobStatus::Completed;
                        return;
                    }
                }
                continue;
            }
            if n > 0 {
                if let Err((reason, cause)) = self.ensure_token(idx, phase).await {
                    if reason == "ContainmentViolation" {
                        self.fail(idx, &reason);
                    } else {
                        self.hold(idx, Step::Phase(phase), reason, cause);
                    }
                    return;
                }
                if phase == Phase::Execute && spec.restrict_origin && !self.jobs[idx].probed {
                    self.origin_probe(idx).await;
                }
            }
            while !done(self.jobs[idx].next_op) {
                let i = self.jobs[idx].next_op as i64;
                if start + duration * i / n > now {
                    break;
                }
                let scope = scopes[i as usize].clone();
                if let Err((reason, cause)) = self.data_op(idx, phase, &scope).await {
                    self.hold(idx, Step::Phase(phase), reason, cause);
                    return;
                }
                self.jobs[idx].next_op += 1;
            }
            if !(done(self.jobs[idx].next_op) && now >= start + duration) {
                return;
            }
        }
    }

    // Operator actions and faults

    /// Returns a held job to the step it was held at and retries that
    /// step once.
    pub async fn release_job(&mut self, job_id: &str) -> Result<JobState, SimError> {
        let idx = self.index(job_id)?;
        if !matches!(self.jobs[idx].status, JobStatus::Held(_)) {
            return Err(SimError::NotHeld(job_id.into()));
        }
        let step = self.jobs[idx].resume.unwrap_or(Step::Submit);
        self.record(
            env(Domain::Submit, "operator", "schedd", "release", Some(job_id)),
            json!({"step": step.to_string()}),
        );
        match step {
            Step::Submit => {
                self.jobs[idx].status = JobStatus::Idle;
                if let Err((reason, cause)) = self.submit_step(idx, true).await {
                    self.hold(idx, Step::Submit, reason, cause);
                }
            }
            Step::Phase(phase) => {
                self.start_phase(idx, phase);
                self.advance_job(idx).await;
            }
        }
        Ok(self.job(job_id).expect("job exists"))
    }

    /// Revokes a stored credential through credd.
    pub async fn revoke(&mut self, user: &str, handle_name: &str) -> Result<(), String> {
        let key = CredentialKey::new(user, &self.scenario.services.provider, handle_name);
        self.record(
            env(Domain::Submit, "operator", "credd", "revoke_credential", None),
            json!({"key": key.to_string()}),
        );
        self.revoked.insert(key.clone());
        let daemon = self.stack.daemon().clone();
        daemon.revoke_credential(&key).await.map_err(|e| e.reason().to_string())
    }

    /// Kills and restarts credd, comparing its credentials before and after.
    pub async fn restart_credd(&mut self) -> Result<RestartRecord, SimError> {
        let before: Vec<(String, String)> = self
            .stack
            .daemon()
            .list()
            .into_iter()
            .map(|c| (c.key.to_string(), c.fingerprint))
            .collect();
        let replayed = self.stack.restart_credd()?;
        let after: BTreeSet<(String, String)> = self
            .stack
            .daemon()
            .list()
            .into_iter()
            .map(|c| (c.key.to_string(), c.fingerprint))
            .collect();
        let lost = before
            .iter()
            .filter(|c| !after.contains(*c))
            .map(|(k, _)| k.clone())
            .collect();
        let record = RestartRecord {
            at: self.now(),
            before: before.len(),
            after: after.len(),
            lost,
        };
        self.record(
            env(Domain::Submit, "operator", "credd", "credd_restart", None),
            json!({"before": record.before, "replayed": replayed, "lost": record.lost}),
        );
        self.restarts.push(record.clone());
        Ok(record)
    }

    pub async fn rotate_keys(&mut self, drop_previous: bool) -> Result<(), SimError> {
        let kid = self.stack.rotate_keys(drop_previous).await?;
        self.record(
            env(Domain::Issuer, "operator", "issuer", "rotate_keys", None),
            json!({"key_id": kid, "drop_previous": drop_previous}),
        );
        Ok(())
    }

    pub fn add_rule(&mut self, rule: PolicyRule) -> Result<(), String> {
        self.record(
            env(Domain::Issuer, "operator", "issuer", "policy_update", None),
            serde_json::to_value(&rule).expect("rule serializes"),
        );
        self.stack.issuer.add_policy_rule(rule).map_err(|e| e.reason().to_string())
    }

    async fn apply_fault(&mut self, fault: Fault) -> Result<(), SimError> {
        match fault.action {
            FaultAction::Revoke { user, handle_name } => {
                let _ = self.revoke(&user, &handle_name).await;
            }
            FaultAction::RestartCredd => {
                self.restart_credd().await?;
            }
            FaultAction::RotateKeys { drop_previous } => self.rotate_keys(drop_previous).await?,
            FaultAction::AddRule { rule } => {
                let _ = self.add_rule(rule);
            }
            FaultAction::Release { job } => {
                if let Err(e) = self.release_job(&job).await {
                    self.record(
                        env(Domain::Submit, "operator", "schedd", "release_refused", Some(&job)),
                        json!({"reason": e.reason()}),
                    );
                }
            }
        }
        Ok(())
    }

    // Time

    /// One scheduling step: due faults, due submissions, then every job,
    /// then the clock moves forward one tick.
    pub async fn step(&mut self) -> Result<(), SimError> {
        let offset = self.now() - self.scenario.start_time;
        while self.pending_faults.front().is_some_and(|f| f.at <= offset) {
            let fault = self.pending_faults.pop_front().expect("front exists");
            self.apply_fault(fault).await?;
        }
        while self.pending_jobs.front().is_some_and(|j| j.submit_at <= offset) {
            let spec = self.pending_jobs.pop_front().expect("front exists");
            self.submit_job(spec).await?;
        }
        for idx in 0..self.jobs.len() {
            self.advance_job(idx).await;
        }
        self.stack.clock.advance(self.scenario.services.tick);
        Ok(())
    }

    fn deadline(&self) -> i64 {
        let last_fault = self.pending_faults.iter().map(|f| f.at).max().unwrap_or(0);
        let last_submit = self.pending_jobs.iter().map(|j| j.submit_at).max().unwrap_or(0);
        self.scenario.start_time + last_fault.max(last_submit) + self.scenario.services.horizon
    }

    /// Steps until the job settles (completes, fails or is held) or the
    /// horizon passes.
    pub async fn run_job(&mut self, job_id: &str) -> Result<JobState, SimError> {
        let idx = self.index(job_id)?;
        let deadline = self.now() + self.scenario.services.horizon;
        while !self.jobs[idx].status.is_settled() && self.now() <= deadline {
            self.step().await?;
        }
        Ok(self.job(job_id).expect("job exists"))
    }

    fn quiescent(&self) -> bool {
        self.pending_faults.is_empty()
            && self.pending_jobs.is_empty()
            && self.jobs.iter().all(|j| j.status.is_settled())
    }

    /// Runs queued submissions and faults until everything settles.
    pub async fn run(&mut self) -> Result<(), SimError> {
        let deadline = self.deadline();
        while !self.quiescent() && self.now() <= deadline {
            self.step().await?;
        }
        Ok(())
    }
}
