//! Machine-readable scenario report and the invariant checks behind it.

use std::collections::BTreeMap;

use captoken_core::{decode_unverified, Timestamp};
use serde::Serialize;
use serde_json::Value;

use crate::engine::{ProbeRecord, RestartRecord, Simulation};
use crate::job::{HoldRecord, JobState, JobStatus, Phase};
use crate::scenario::Scenario;
use crate::transcript::{scan_for_handles, ContainmentScan, Message};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTokenCounts {
    pub stage_in: usize,
    pub execute: usize,
    pub stage_out: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobReport {
    pub job_id: String,
    pub status: JobStatus,
    pub assigned_node: Option<String>,
    pub tokens: PhaseTokenCounts,
    pub distinct_tokens: usize,
    pub holds: Vec<HoldRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TranscriptSummary {
    pub messages: usize,
    pub digest: String,
    /// Remote-bound messages refused for carrying a refresh handle.
    pub refused: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub jobs: Vec<JobReport>,
    pub transcript: TranscriptSummary,
    pub containment: ContainmentScan,
    pub restarts: Vec<RestartRecord>,
    pub origin_probes: Vec<ProbeRecord>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn job(&self, job_id: &str) -> Option<&JobReport> {
        self.jobs.iter().find(|j| j.job_id == job_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed,
        detail: detail.into(),
    }
}

fn payload(m: &Message) -> Value {
    serde_json::from_str(&m.payload).unwrap_or(Value::Null)
}

fn issued_at(token: &str) -> Option<Timestamp> {
    let (_, claims) = decode_unverified(token).ok()?;
    claims.get("iat")?.as_i64()
}

/// Handle bytes must never appear on execute or data channels, and the
/// search must demonstrably find them where they are allowed.
pub fn containment_check(scan: &ContainmentScan, refused: usize) -> Check {
    let searched = scan.handles == 0 || scan.local_hits > 0;
    check(
        "containment",
        scan.remote_hits == 0 && refused == 0 && searched,
        format!(
            "{} handles, {} remote messages searched, {} remote hits, {} refused, {} submit/issuer hits",
            scan.handles, scan.remote_messages, scan.remote_hits, refused, scan.local_hits
        ),
    )
}

/// Every delivered token was minted no earlier than the start of the
/// phase it was delivered in.
pub fn phase_gating_check(messages: &[Message]) -> Check {
    let mut phase_start: BTreeMap<(String, String), Timestamp> = BTreeMap::new();
    let mut deliveries = 0;
    let mut stage_out = 0;
    let mut violations = Vec::new();
    for m in messages {
        let Some(job) = &m.job else { continue };
        let p = payload(m);
        let phase = p["phase"].as_str().unwrap_or_default().to_string();
        match m.kind.as_str() {
            "phase_start" => {
                phase_start.insert((job.clone(), phase), m.at);
            }
            "token_delivery" => {
                deliveries += 1;
                if Phase::parse(&phase) == Some(Phase::StageOut) {
                    stage_out += 1;
                }
                let start = phase_start.get(&(job.clone(), phase.clone()));
                let iat = p["access_token"].as_str().and_then(issued_at);
                match (start, iat) {
                    (Some(s), Some(i)) if i >= *s => {}
                    _ => violations.push(format!("{job}/{phase} token minted at {iat:?}, phase began {start:?}")),
                }
            }
            _ => {}
        }
    }
    check(
        "phase_gating",
        violations.is_empty(),
        if violations.is_empty() {
            format!("{deliveries} deliveries ({stage_out} stage-out) minted after their phase began")
        } else {
            violations.join("; ")
        },
    )
}

pub fn origin_binding_check(probes: &[ProbeRecord]) -> Check {
    let bad: Vec<String> = probes
        .iter()
        .filter(|p| !(p.status == 403 && p.reason.as_deref() == Some("OriginMismatch")))
        .map(|p| format!("{} replay from {} got {} {:?}", p.job, p.origin, p.status, p.reason))
        .collect();
    check(
        "origin_binding",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} replays denied with OriginMismatch", probes.len())
        } else {
            bad.join("; ")
        },
    )
}

/// Each hold carries the reason of the reply that caused it.
pub fn hold_correctness_check(jobs: &[JobState], messages: &[Message]) -> Check {
    let mut bad = Vec::new();
    let mut holds = 0;
    for job in jobs {
        for h in &job.holds {
            holds += 1;
            let cause = messages.get(h.cause as usize).map(payload);
            let cause_reason = cause.as_ref().and_then(|p| p["reason"].as_str());
            if cause_reason != Some(h.reason.as_str()) {
                bad.push(format!("{} held({}) but cause says {:?}", job.job_id, h.reason, cause_reason));
            }
        }
        if let JobStatus::Held(r) = &job.status {
            if job.holds.last().map(|h| &h.reason) != Some(r) {
                bad.push(format!("{} held({r}) without a matching hold record", job.job_id));
            }
        }
    }
    check(
        "hold_correctness",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{holds} holds match their originating errors")
        } else {
            bad.join("; ")
        },
    )
}

/// Jobs whose credentials stay valid and sufficient complete, provided
/// access tokens live at least two scheduling steps.
pub fn liveness_check(scenario: &Scenario, jobs: &[JobState], revoked_users: &[(String, String)]) -> Check {
    let s = &scenario.services;
    if s.access_lifetime < 2 * s.tick {
        return check("liveness", true, "not applicable: access lifetime below two steps");
    }
    let mut bad = Vec::new();
    let mut eligible = 0;
    for job in jobs {
        let revoked = revoked_users
            .iter()
            .any(|(u, h)| *u == job.user && *h == job.handle_name);
        let insufficient = job.holds.iter().any(|h| h.reason == "NoScopesApproved");
        if revoked || insufficient {
            continue;
        }
        eligible += 1;
        if job.status != JobStatus::Completed {
            bad.push(format!("{} ended {}", job.job_id, job.status));
        }
    }
    check(
        "liveness",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{eligible} jobs with valid credentials completed")
        } else {
            bad.join("; ")
        },
    )
}

pub fn expectations_check(expect: &BTreeMap<String, String>, jobs: &[JobState]) -> Check {
    let mut bad = Vec::new();
    for (id, want) in expect {
        let got = jobs
            .iter()
            .find(|j| &j.job_id == id)
            .map(|j| j.status.to_string())
            .unwrap_or_else(|| "not submitted".into());
        if &got != want {
            bad.push(format!("{id}: expected {want}, got {got}"));
        }
    }
    check(
        "expectations",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} expected states reached", expect.len())
        } else {
            bad.join("; ")
        },
    )
}

pub fn crash_recovery_check(restarts: &[RestartRecord]) -> Check {
    let bad: Vec<String> = restarts
        .iter()
        .filter(|r| !r.lost.is_empty() || r.after < r.before)
        .map(|r| format!("restart at {} lost {:?}", r.at, r.lost))
        .collect();
    check(
        "crash_recovery",
        bad.is_empty(),
        if bad.is_empty() {
            let replayed: Vec<String> = restarts.iter().map(|r| r.after.to_string()).collect();
            format!("{} restarts, credentials replayed: [{}]", restarts.len(), replayed.join(", "))
        } else {
            bad.join("; ")
        },
    )
}

impl Simulation {
    pub fn report(&self) -> Report {
        let stack = self.stack();
        let scenario = self.scenario();
        let messages = stack.transcript.messages();
        let jobs = self.jobs();
        let scan = scan_for_handles(&messages, &stack.refresh_handles());
        let revoked: Vec<(String, String)> = self
            .revoked
            .iter()
            .map(|k| (k.user.clone(), k.handle_name.clone()))
            .collect();
        let checks = vec![
            containment_check(&scan, self.refusals),
            phase_gating_check(&messages),
            origin_binding_check(&self.probes),
            hold_correctness_check(&jobs, &messages),
            liveness_check(scenario, &jobs, &revoked),
            expectations_check(&scenario.expect, &jobs),
            crash_recovery_check(&self.restarts),
        ];
        Report {
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            passed: checks.iter().all(|c| c.passed),
            jobs: jobs
                .iter()
                .map(|j| JobReport {
                    job_id: j.job_id.clone(),
                    status: j.status.clone(),
                    assigned_node: j.assigned_node.clone(),
                    tokens: PhaseTokenCounts {
                        stage_in: j.tokens_in(Phase::StageIn),
                        execute: j.tokens_in(Phase::Execute),
                        stage_out: j.tokens_in(Phase::StageOut),
                    },
                    distinct_tokens: j.distinct_tokens(),
                    holds: j.holds.clone(),
                })
                .collect(),
            transcript: TranscriptSummary {
                messages: messages.len(),
                digest: stack.transcript.digest(),
                refused: self.refusals,
            },
            containment: scan,
            restarts: self.restarts.clone(),
            origin_probes: self.probes.clone(),
            checks,
        }
    }
}
