//! Submit-side credential daemon. Holds refresh tokens, picks up
//! rendezvous deposits, and hands out cached, per-request access tokens.
//! Refresh handles never leave this process except toward the issuer.

pub mod config;
pub mod control;
pub mod daemon;
pub mod error;
pub mod rendezvous;
pub mod store;
pub mod upstream;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tracing::{info, warn};

pub use config::CreddConfig;
pub use control::{bind_control, serve_control, ControlClient, ControlRequest, ControlResponse};
pub use daemon::{AccessRequest, CredDaemon, DaemonOptions, PickupReport, TickReport};
pub use error::CredError;
pub use rendezvous::{write_deposit, Deposit, Quarantined};
pub use store::{CredentialKey, CredentialSummary, StoredCredential};
pub use upstream::{Exchanged, HttpIssuer, LocalIssuer, Minted, TokenIssuer};

/// Background loop: pickup pass (when a rendezvous directory is set)
/// followed by a refresh pass, every `period`.
pub async fn run_background(daemon: Arc<CredDaemon>, rendezvous: Option<PathBuf>, now: impl Fn() -> i64, period: Duration) {
    let mut ticker = tokio::time::interval(period);
    loop {
        ticker.tick().await;
        if let Some(dir) = &rendezvous {
            match daemon.rendezvous_pickup(dir).await {
                Ok(r) if !r.stored.is_empty() || !r.quarantined.is_empty() => {
                    info!(stored = r.stored.len(), quarantined = r.quarantined.len(), "rendezvous pickup")
                }
                Ok(_) => {}
                Err(e) => warn!(error = %e, "rendezvous pickup failed"),
            }
        }
        let report = daemon.refresh_tick(now()).await;
        if !report.refreshed.is_empty() || !report.degraded.is_empty() {
            info!(refreshed = report.refreshed.len(), degraded = report.degraded.len(), "refresh pass");
        }
    }
}
