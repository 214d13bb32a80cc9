//! The daemon's view of the token server, in-process or over HTTP.

use std::sync::Arc;

use async_trait::async_trait;
use captoken_core::scope::parse_scope_list;
use captoken_core::{decode_unverified, RefreshHandle, Scope, TokenClaims};
use captoken_issuer::{ClientCredentials, IssuerClient, TokenServer};

use crate::error::CredError;

#[derive(Debug, Clone)]
pub struct Exchanged {
    pub refresh_handle: RefreshHandle,
    pub granted_scopes: Vec<Scope>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minted {
    pub token: String,
    pub scopes: Vec<Scope>,
    pub issued_at: i64,
    pub expires_at: i64,
}

impl Minted {
    fn from_token(token: String) -> Result<Self, CredError> {
        let (_, payload) =
            decode_unverified(&token).map_err(|e| CredError::Transport(format!("issuer returned {}", e.reason())))?;
        let claims: TokenClaims =
            serde_json::from_value(payload).map_err(|e| CredError::Transport(format!("issuer returned {e}")))?;
        Ok(Minted {
            scopes: claims.scopes,
            issued_at: claims.issued_at,
            expires_at: claims.expires_at,
            token,
        })
    }
}

/// Calls the daemon makes against its issuer, authenticated as one
/// registered client. An empty scope list requests the full grant.
#[async_trait]
pub trait TokenIssuer: Send + Sync {
    fn client_id(&self) -> &str;
    async fn exchange_code(&self, code: &str) -> Result<Exchanged, CredError>;
    async fn refresh(
        &self,
        handle: &RefreshHandle,
        scopes: &[Scope],
        audience: &str,
        origin: Option<&str>,
    ) -> Result<Minted, CredError>;
    async fn revoke(&self, handle: &RefreshHandle) -> Result<(), CredError>;
}

fn requested(scopes: &[Scope]) -> Option<&[Scope]> {
    if scopes.is_empty() {
        None
    } else {
        Some(scopes)
    }
}

pub struct LocalIssuer {
    server: Arc<TokenServer>,
    creds: ClientCredentials,
}

impl LocalIssuer {
    pub fn new(server: Arc<TokenServer>, creds: ClientCredentials) -> Self {
        LocalIssuer { server, creds }
    }
}

#[async_trait]
impl TokenIssuer for LocalIssuer {
    fn client_id(&self) -> &str {
        &self.creds.client_id
    }

    async fn exchange_code(&self, code: &str) -> Result<Exchanged, CredError> {
        let grant = self
            .server
            .exchange_code(code, &self.creds.client_id, &self.creds.client_secret)?;
        Ok(Exchanged {
            refresh_handle: grant.refresh_handle,
            granted_scopes: grant.access.scopes,
        })
    }

    async fn refresh(
        &self,
        handle: &RefreshHandle,
        scopes: &[Scope],
        audience: &str,
        origin: Option<&str>,
    ) -> Result<Minted, CredError> {
        let access = self.server.refresh_access_as_client(
            &self.creds.client_id,
            &self.creds.client_secret,
            handle.expose(),
            requested(scopes),
            audience,
            origin,
        )?;
        Minted::from_token(access.access_token)
    }

    async fn revoke(&self, handle: &RefreshHandle) -> Result<(), CredError> {
        self.server
            .revoke(handle.expose(), &self.creds.client_id, &self.creds.client_secret)?;
        Ok(())
    }
}

pub struct HttpIssuer {
    client: IssuerClient,
    creds: ClientCredentials,
}

impl HttpIssuer {
    pub fn new(client: IssuerClient, creds: ClientCredentials) -> Self {
        HttpIssuer { client, creds }
    }
}

#[async_trait]
impl TokenIssuer for HttpIssuer {
    fn client_id(&self) -> &str {
        &self.creds.client_id
    }

    async fn exchange_code(&self, code: &str) -> Result<Exchanged, CredError> {
        let resp = self.client.exchange_code(code, &self.creds).await?;
        let handle = resp
            .refresh_token
            .ok_or_else(|| CredError::Transport("issuer returned no refresh token".into()))?;
        let granted_scopes =
            parse_scope_list(&resp.scope).map_err(|e| CredError::Transport(format!("issuer returned {e}")))?;
        Ok(Exchanged {
            refresh_handle: RefreshHandle::new(handle),
            granted_scopes,
        })
    }

    async fn refresh(
        &self,
        handle: &RefreshHandle,
        scopes: &[Scope],
        audience: &str,
        origin: Option<&str>,
    ) -> Result<Minted, CredError> {
        let resp = self
            .client
            .refresh(handle.expose(), &self.creds, requested(scopes), audience, origin)
            .await?;
        Minted::from_token(resp.access_token)
    }

    async fn revoke(&self, handle: &RefreshHandle) -> Result<(), CredError> {
        self.client.revoke(handle.expose(), &self.creds).await?;
        Ok(())
    }
}
