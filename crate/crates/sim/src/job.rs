//! Job lifecycle types.

use std::fmt;

use captoken_core::Timestamp;
use serde::{Serialize, Serializer};

use crate::scenario::JobSpec;
use crate::transcript::Message;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    StageIn,
    Execute,
    StageOut,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::StageIn, Phase::Execute, Phase::StageOut];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::StageIn => "stage_in",
            Phase::Execute => "execute",
            Phase::StageOut => "stage_out",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.as_str() == s)
    }

    pub fn status(self) -> JobStatus {
        match self {
            Phase::StageIn => JobStatus::StagingIn,
            Phase::Execute => JobStatus::Running,
            Phase::StageOut => JobStatus::StagingOut,
        }
    }

    pub fn next(self) -> Option<Phase> {
        match self {
            Phase::StageIn => Some(Phase::Execute),
            Phase::Execute => Some(Phase::StageOut),
            Phase::StageOut => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobStatus {
    Idle,
    StagingIn,
    Running,
    StagingOut,
    Completed,
    Held(String),
    Failed(String),
}

impl JobStatus {
    pub fn phase(&self) -> Option<Phase> {
        match self {
            JobStatus::StagingIn => Some(Phase::StageIn),
            JobStatus::Running => Some(Phase::Execute),
            JobStatus::StagingOut => Some(Phase::StageOut),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, JobStatus::Completed | JobStatus::Failed(_))
    }

    /// Terminal or waiting on an operator.
    pub fn is_settled(&self) -> bool {
        self.is_terminal() || matches!(self, JobStatus::Held(_))
    }

    pub fn held_reason(&self) -> Option<&str> {
        match self {
            JobStatus::Held(r) => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JobStatus::Idle => f.write_str("idle"),
            JobStatus::StagingIn => f.write_str("staging_in"),
            JobStatus::Running => f.write_str("running"),
            JobStatus::StagingOut => f.write_str("staging_out"),
            JobStatus::Completed => f.write_str("completed"),
            JobStatus::Held(r) => write!(f, "held({r})"),
            JobStatus::Failed(r) => write!(f, "failed({r})"),
        }
    }
}

impl Serialize for JobStatus {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// The step a held job resumes at when released.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Submit,
    Phase(Phase),
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Submit => f.write_str("submit"),
            Step::Phase(p) => p.fmt(f),
        }
    }
}

impl Serialize for Step {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HoldRecord {
    pub at: Timestamp,
    pub step: Step,
    pub reason: String,
    /// Transcript sequence number of the failed reply.
    pub cause: u64,
}

/// An access token delivered to the starter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenRecord {
    pub phase: Phase,
    pub token_id: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub origin: Option<String>,
}

impl Serialize for Phase {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct JobState {
    pub job_id: String,
    pub user: String,
    pub handle_name: String,
    pub status: JobStatus,
    pub assigned_node: Option<String>,
    pub tokens: Vec<TokenRecord>,
    pub holds: Vec<HoldRecord>,
    /// Messages tagged with this job, in order.
    pub transcript: Vec<Message>,
}

impl JobState {
    pub fn tokens_in(&self, phase: Phase) -> usize {
        self.tokens.iter().filter(|t| t.phase == phase).count()
    }

    pub fn distinct_tokens(&self) -> usize {
        let mut ids: Vec<&str> = self.tokens.iter().map(|t| t.token_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// The access token the starter currently holds.
#[derive(Debug, Clone)]
pub(crate) struct HeldToken {
    pub token: String,
    pub expires_at: Timestamp,
}

#[derive(Debug, Clone)]
pub(crate) struct Job {
    pub spec: JobSpec,
    pub status: JobStatus,
    pub node: Option<String>,
    pub phase_start: Timestamp,
    pub next_op: usize,
    pub current: Option<HeldToken>,
    pub tokens: Vec<TokenRecord>,
    pub holds: Vec<HoldRecord>,
    pub resume: Option<Step>,
    pub probed: bool,
}

impl Job {
    pub fn new(spec: JobSpec) -> Self {
        Job {
            spec,
            status: JobStatus::Idle,
            node: None,
            phase_start: 0,
            next_op: 0,
            current: None,
            tokens: Vec::new(),
            holds: Vec::new(),
            resume: None,
            probed: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_names() {
        assert_eq!(JobStatus::Held("Revoked".into()).to_string(), "held(Revoked)");
        assert_eq!(serde_json::to_value(JobStatus::StagingOut).unwrap(), "staging_out");
        assert_eq!(Phase::parse("execute"), Some(Phase::Execute));
        assert_eq!(Phase::StageIn.next().and_then(Phase::next), Some(Phase::StageOut));
        assert!(JobStatus::Held("x".into()).is_settled());
        assert!(!JobStatus::Running.is_settled());
    }
}
