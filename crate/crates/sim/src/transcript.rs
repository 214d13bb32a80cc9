//! Ordered record of every cross-component message, labeled with the
//! domain it is bound for.

use std::fmt;
use std::sync::{Arc, Mutex};

use captoken_core::secret::contains;
use captoken_core::{Clock, TaintSet, Timestamp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Label of the channel a message travels on. Requests are labeled by
/// the domain they are bound for; token server traffic is labeled
/// `Issuer` in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Between submit-side components (submit tool, shadow, credd, drop box).
    Submit,
    /// Toward or within the execution node (starter).
    Execute,
    /// Toward the data service.
    Data,
    /// Toward or from the token server.
    Issuer,
}

impl Domain {
    /// Domains that must never see a refresh handle.
    pub fn is_remote(self) -> bool {
        matches!(self, Domain::Execute | Domain::Data)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Domain::Submit => "submit",
            Domain::Execute => "execute",
            Domain::Data => "data",
            Domain::Issuer => "issuer",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub at: Timestamp,
    pub domain: Domain,
    pub from: String,
    pub to: String,
    pub kind: String,
    pub job: Option<String>,
    pub payload: String,
}

/// A message toward the execute or data domain carried a refresh handle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refused {
    pub kind: String,
    pub domain: Domain,
}

#[derive(Clone)]
pub struct Transcript {
    inner: Arc<Mutex<Vec<Message>>>,
    taint: TaintSet,
    clock: Arc<dyn Clock>,
}

pub struct Envelope<'a> {
    pub domain: Domain,
    pub from: &'a str,
    pub to: &'a str,
    pub kind: &'a str,
    pub job: Option<&'a str>,
}

impl Transcript {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Transcript {
            inner: Arc::new(Mutex::new(Vec::new())),
            taint: TaintSet::new(),
            clock,
        }
    }

    /// Handles registered here are refused on remote-bound messages.
    pub fn taint(&self) -> &TaintSet {
        &self.taint
    }

    /// Records a message and returns its sequence number. Remote-bound
    /// payloads carrying a tainted value are refused and not recorded.
    pub fn send(&self, env: Envelope<'_>, payload: &serde_json::Value) -> Result<u64, Refused> {
        let payload = payload.to_string();
        if env.domain.is_remote() && self.taint.is_tainted(payload.as_bytes()) {
            return Err(Refused {
                kind: env.kind.to_string(),
                domain: env.domain,
            });
        }
        let mut log = self.inner.lock().unwrap();
        let seq = log.len() as u64;
        log.push(Message {
            seq,
            at: self.clock.now(),
            domain: env.domain,
            from: env.from.to_string(),
            to: env.to.to_string(),
            kind: env.kind.to_string(),
            job: env.job.map(String::from),
            payload,
        });
        Ok(seq)
    }

    pub fn message(&self, seq: u64) -> Option<Message> {
        self.inner.lock().unwrap().get(seq as usize).cloned()
    }

    pub fn messages(&self) -> Vec<Message> {
        self.inner.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// SHA-256 over the canonical JSON of every message, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in self.inner.lock().unwrap().iter() {
            h.update(serde_json::to_vec(m).expect("message serializes"));
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Byte-level search of the transcript for any of `handles`, split by
/// whether the message was remote-bound.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainmentScan {
    pub handles: usize,
    pub remote_messages: usize,
    pub remote_hits: usize,
    /// Hits in submit/issuer messages; nonzero shows the search can find
    /// handles at all.
    pub local_hits: usize,
}

pub fn scan_for_handles(messages: &[Message], handles: &[String]) -> ContainmentScan {
    let mut scan = ContainmentScan {
        handles: handles.len(),
        ..Default::default()
    };
    for m in messages {
        let remote = m.domain.is_remote();
        if remote {
            scan.remote_messages += 1;
        }
        for h in handles {
            if contains(m.payload.as_bytes(), h.as_bytes()) {
                if remote {
                    scan.remote_hits += 1;
                } else {
                    scan.local_hits += 1;
                }
            }
        }
    }
    scan
}
