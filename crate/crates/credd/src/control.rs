//! Local control socket: one JSON request per line, one JSON response
//! per line.

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use captoken_core::{RefreshHandle, Scope};
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{UnixListener, UnixStream};
use tokio::task::JoinSet;
use tracing::{debug, warn};

use crate::daemon::{AccessRequest, CredDaemon};
use crate::error::CredError;
use crate::store::{CredentialKey, CredentialSummary};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum ControlRequest {
    #[serde(rename = "STORE")]
    Store {
        #[serde(flatten)]
        key: CredentialKey,
        refresh_handle: RefreshHandle,
        scopes: Vec<Scope>,
    },
    #[serde(rename = "GET_ACCESS")]
    GetAccess(AccessRequest),
    #[serde(rename = "LIST")]
    List,
    #[serde(rename = "DELETE")]
    Delete {
        #[serde(flatten)]
        key: CredentialKey,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials: Option<Vec<CredentialSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deleted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ControlResponse {
    fn ok() -> Self {
        ControlResponse {
            ok: true,
            ..Default::default()
        }
    }

    fn failure(e: &CredError) -> Self {
        ControlResponse {
            ok: false,
            error: Some(e.reason().to_string()),
            message: Some(e.to_string()),
            ..Default::default()
        }
    }

    fn into_result(self) -> Result<Self, CredError> {
        if self.ok {
            Ok(self)
        } else {
            Err(CredError::from_reason(
                self.error.as_deref().unwrap_or("BadRequest"),
                self.message.as_deref().unwrap_or(""),
            ))
        }
    }
}

pub async fn dispatch(daemon: &CredDaemon, req: ControlRequest) -> ControlResponse {
    let result = match req {
        ControlRequest::Store {
            key,
            refresh_handle,
            scopes,
        } => daemon
            .store_refresh(key, refresh_handle, scopes)
            .await
            .map(|c| ControlResponse {
                fingerprint: Some(c.refresh_handle.fingerprint()),
                ..ControlResponse::ok()
            }),
        ControlRequest::GetAccess(req) => daemon.get_access(&req).await.map(|t| ControlResponse {
            access_token: Some(t),
            ..ControlResponse::ok()
        }),
        ControlRequest::List => Ok(ControlResponse {
            credentials: Some(daemon.list()),
            ..ControlResponse::ok()
        }),
        ControlRequest::Delete { key } => daemon.delete(&key).await.map(|d| ControlResponse {
            deleted: Some(d),
            ..ControlResponse::ok()
        }),
    };
    result.unwrap_or_else(|e| ControlResponse::failure(&e))
}

/// Binds the socket with mode 0600, replacing a stale socket file.
pub fn bind_control(path: &Path) -> std::io::Result<UnixListener> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let listener = UnixListener::bind(path)?;
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))?;
    Ok(listener)
}

async fn handle(daemon: Arc<CredDaemon>, stream: UnixStream) -> std::io::Result<()> {
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<ControlRequest>(&line) {
            Ok(req) => dispatch(&daemon, req).await,
            Err(e) => ControlResponse::failure(&CredError::BadRequest(e.to_string())),
        };
        debug!(ok = resp.ok, error = ?resp.error, "control request");
        let mut out = serde_json::to_vec(&resp).expect("response serializes");
        out.push(b'\n');
        write.write_all(&out).await?;
    }
    Ok(())
}

/// Serves until the returned future is dropped, which also drops every
/// open connection.
pub async fn serve_control(listener: UnixListener, daemon: Arc<CredDaemon>) -> std::io::Result<()> {
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => {
                let (stream, _) = accepted?;
                let daemon = daemon.clone();
                conns.spawn(async move {
                    if let Err(e) = handle(daemon, stream).await {
                        warn!(error = %e, "control connection failed");
                    }
                });
            }
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
}

/// Client for the control socket. Each call uses a fresh connection.
#[derive(Debug, Clone)]
pub struct ControlClient {
    path: PathBuf,
}

impl ControlClient {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ControlClient { path: path.into() }
    }

    pub async fn call(&self, req: &ControlRequest) -> Result<ControlResponse, CredError> {
        let transport = |e: std::io::Error| CredError::Transport(format!("{}: {e}", self.path.display()));
        let stream = UnixStream::connect(&self.path).await.map_err(transport)?;
        let (read, mut write) = stream.into_split();
        let mut line = serde_json::to_vec(req).expect("request serializes");
        line.push(b'\n');
        write.write_all(&line).await.map_err(transport)?;
        let reply = BufReader::new(read)
            .lines()
            .next_line()
            .await
            .map_err(transport)?
            .ok_or_else(|| CredError::Transport("connection closed".into()))?;
        let resp: ControlResponse =
            serde_json::from_str(&reply).map_err(|e| CredError::Transport(format!("bad response: {e}")))?;
        resp.into_result()
    }

    pub async fn store(&self, key: CredentialKey, handle: RefreshHandle, scopes: Vec<Scope>) -> Result<String, CredError> {
        let resp = self
            .call(&ControlRequest::Store {
                key,
                refresh_handle: handle,
                scopes,
            })
            .await?;
        Ok(resp.fingerprint.unwrap_or_default())
    }

    pub async fn get_access(&self, req: AccessRequest) -> Result<String, CredError> {
        let resp = self.call(&ControlRequest::GetAccess(req)).await?;
        resp.access_token
            .ok_or_else(|| CredError::Transport("response without access_token".into()))
    }

    pub async fn list(&self) -> Result<Vec<CredentialSummary>, CredError> {
        Ok(self.call(&ControlRequest::List).await?.credentials.unwrap_or_default())
    }

    pub async fn delete(&self, key: CredentialKey) -> Result<bool, CredError> {
        Ok(self.call(&ControlRequest::Delete { key }).await?.deleted.unwrap_or(false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        let req: ControlRequest = serde_json::from_str(
            r#"{"op":"STORE","user":"alice","provider":"osg","handle_name":"h","refresh_handle":"r","scopes":["read:/a"]}"#,
        )
        .unwrap();
        assert!(matches!(req, ControlRequest::Store { ref key, .. } if key.user == "alice"));
        let req: ControlRequest = serde_json::from_str(
            r#"{"op":"GET_ACCESS","key":{"user":"a","provider":"p","handle_name":"h"},"audience":"x"}"#,
        )
        .unwrap();
        match req {
            ControlRequest::GetAccess(r) => {
                assert_eq!(r.min_remaining, 1);
                assert!(r.scopes.is_empty());
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            serde_json::from_str::<ControlRequest>(r#"{"op":"LIST"}"#).unwrap(),
            ControlRequest::List
        ));
        assert!(serde_json::from_str::<ControlRequest>(r#"{"op":"FETCH"}"#).is_err());
    }

    #[test]
    fn failure_roundtrip() {
        let resp = ControlResponse::failure(&CredError::Issuer(captoken_issuer::IssuerError::Revoked));
        let back: ControlResponse = serde_json::from_str(&serde_json::to_string(&resp).unwrap()).unwrap();
        assert_eq!(
            back.into_result().unwrap_err(),
            CredError::Issuer(captoken_issuer::IssuerError::Revoked)
        );
    }
}
