//! Adapters that put token server traffic on the transcript.

use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use captoken_core::scope::format_scope_list;
use captoken_core::{IssuerMetadata, RefreshHandle, Scope};
use captoken_credd::{CredError, Exchanged, Minted, TokenIssuer};
use captoken_gateway::DiscoverySource;
use captoken_issuer::IssuerClient;
use serde_json::{json, Value};

use crate::transcript::{Domain, Envelope, Transcript};

/// Wraps the daemon's issuer connection. Every call and reply is
/// recorded on the issuer channel, and every refresh handle the issuer
/// hands out is registered as tainted.
pub struct RecordingIssuer {
    inner: Arc<dyn TokenIssuer>,
    transcript: Transcript,
    handles: Arc<Mutex<Vec<String>>>,
}

impl RecordingIssuer {
    pub fn new(inner: Arc<dyn TokenIssuer>, transcript: Transcript) -> Self {
        RecordingIssuer {
            inner,
            transcript,
            handles: Arc::default(),
        }
    }

    /// Every refresh handle seen so far, in issue order.
    pub fn handles(&self) -> Arc<Mutex<Vec<String>>> {
        self.handles.clone()
    }

    fn record(&self, from: &str, to: &str, kind: &str, payload: Value) {
        let env = Envelope {
            domain: Domain::Issuer,
            from,
            to,
            kind,
            job: None,
        };
        self.transcript
            .send(env, &payload)
            .expect("issuer channel is never refused");
    }

    fn record_error(&self, kind: &str, e: &CredError) {
        self.record("issuer", "credd", kind, json!({"reason": e.reason()}));
    }
}

#[async_trait]
impl TokenIssuer for RecordingIssuer {
    fn client_id(&self) -> &str {
        self.inner.client_id()
    }

    async fn exchange_code(&self, code: &str) -> Result<Exchanged, CredError> {
        self.record(
            "credd",
            "issuer",
            "token_exchange",
            json!({"grant_type": "authorization_code", "code": code, "client_id": self.client_id()}),
        );
        match self.inner.exchange_code(code).await {
            Ok(ex) => {
                self.transcript.taint().mark(&ex.refresh_handle);
                self.handles
                    .lock()
                    .unwrap()
                    .push(ex.refresh_handle.expose().to_string());
                self.record(
                    "issuer",
                    "credd",
                    "token_exchange_response",
                    json!({
                        "refresh_token": ex.refresh_handle.expose(),
                        "scope": format_scope_list(&ex.granted_scopes),
                    }),
                );
                Ok(ex)
            }
            Err(e) => {
                self.record_error("token_exchange_response", &e);
                Err(e)
            }
        }
    }

    async fn refresh(
        &self,
        handle: &RefreshHandle,
        scopes: &[Scope],
        audience: &str,
        origin: Option<&str>,
    ) -> Result<Minted, CredError> {
        self.record(
            "credd",
            "issuer",
            "token_refresh",
            json!({
                "grant_type": "refresh_token",
                "refresh_token": handle.expose(),
                "scope": format_scope_list(scopes),
                "audience": audience,
                "origin": origin,
            }),
        );
        match self.inner.refresh(handle, scopes, audience, origin).await {
            Ok(minted) => {
                self.record(
                    "issuer",
                    "credd",
                    "token_refresh_response",
                    json!({"access_token": minted.token, "expires_at": minted.expires_at}),
                );
                Ok(minted)
            }
            Err(e) => {
                self.record_error("token_refresh_response", &e);
                Err(e)
            }
        }
    }

    async fn revoke(&self, handle: &RefreshHandle) -> Result<(), CredError> {
        self.record("credd", "issuer", "revoke", json!({"token": handle.expose()}));
        let result = self.inner.revoke(handle).await;
        match &result {
            Ok(()) => self.record("issuer", "credd", "revoke_response", json!({"ok": true})),
            Err(e) => self.record_error("revoke_response", e),
        }
        result
    }
}

/// Resolves the simulated issuer identifier to the loopback address it
/// is actually served on, so tokens never carry a port number.
pub struct SimDiscovery {
    issuer: String,
    client: IssuerClient,
}

impl SimDiscovery {
    pub fn new(issuer: impl Into<String>, client: IssuerClient) -> Self {
        SimDiscovery {
            issuer: issuer.into(),
            client,
        }
    }
}

#[async_trait]
impl DiscoverySource for SimDiscovery {
    async fn fetch(&self, issuer: &str) -> Result<IssuerMetadata, String> {
        if issuer != self.issuer {
            return Err(format!("no route to {issuer}"));
        }
        self.client.metadata().await.map_err(|e| e.to_string())
    }
}
