//! Data-side enforcement point: an HTTP file service that accepts reads
//! and writes only under a verified capability token.

pub mod config;
pub mod http;
pub mod service;
pub mod trust;

use std::sync::Arc;
use std::time::Duration;

pub use config::GatewayConfig;
pub use http::{router, serve, REASON_HEADER};
pub use service::{resolve_request_path, Failure, Gateway, WriteHook};
pub use trust::{DiscoverySource, HttpDiscovery, StaticDiscovery, TrustStatus, TrustStore};

/// Re-fetches discovery documents every `period`.
pub async fn run_trust_refresher(gateway: Arc<Gateway>, period: Duration) {
    let mut ticker = tokio::time::interval(period);
    loop {
        ticker.tick().await;
        gateway.trust().refresh_trust(gateway.now()).await;
    }
}
