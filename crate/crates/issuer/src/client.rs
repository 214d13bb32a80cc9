//! HTTP client for the token server endpoints.

use captoken_core::scope::format_scope_list;
use captoken_core::{discovery_url, IssuerMetadata, Scope};
use reqwest::{RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::error::IssuerError;
use crate::wire::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    #[error(transparent)]
    Issuer(#[from] IssuerError),
    #[error("transport: {0}")]
    Transport(String),
}

impl CallError {
    pub fn reason(&self) -> &str {
        match self {
            CallError::Issuer(e) => e.reason(),
            CallError::Transport(_) => "Transport",
        }
    }
}

#[derive(Clone)]
pub struct ClientCredentials {
    pub client_id: String,
    pub client_secret: String,
}

impl std::fmt::Debug for ClientCredentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientCredentials")
            .field("client_id", &self.client_id)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct IssuerClient {
    base: String,
    http: reqwest::Client,
}

fn transport(e: reqwest::Error) -> CallError {
    CallError::Transport(e.to_string())
}

async fn send<T: DeserializeOwned>(req: RequestBuilder) -> Result<T, CallError> {
    let resp = req.send().await.map_err(transport)?;
    if resp.status().is_success() {
        return resp.json().await.map_err(transport);
    }
    Err(error_from(resp).await)
}

async fn send_empty(req: RequestBuilder) -> Result<(), CallError> {
    let resp = req.send().await.map_err(transport)?;
    if resp.status().is_success() {
        return Ok(());
    }
    Err(error_from(resp).await)
}

async fn error_from(resp: reqwest::Response) -> CallError {
    let status = resp.status();
    match resp.json::<ErrorBody>().await {
        Ok(body) => CallError::Issuer(IssuerError::from_reason(&body.reason, &body.error_description)),
        Err(_) if status == StatusCode::NOT_FOUND => CallError::Issuer(IssuerError::UnknownClient),
        Err(_) => CallError::Transport(format!("unexpected status {status}")),
    }
}

impl IssuerClient {
    pub fn new(base: impl Into<String>) -> Self {
        IssuerClient {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn metadata(&self) -> Result<IssuerMetadata, CallError> {
        send(self.http.get(discovery_url(&self.base))).await
    }

    pub async fn register(&self, client_name: &str, scopes: &[Scope]) -> Result<RegisterResponse, CallError> {
        let body = RegisterRequest {
            client_name: client_name.into(),
            scope: format_scope_list(scopes),
        };
        send(self.http.post(self.url("/register")).json(&body)).await
    }

    pub async fn get_client(&self, client_id: &str, registration_token: &str) -> Result<ClientResponse, CallError> {
        let url = self.url(&format!("/register/{client_id}"));
        send(self.http.get(url).bearer_auth(registration_token)).await
    }

    pub async fn update_client(
        &self,
        client_id: &str,
        registration_token: &str,
        client_name: &str,
    ) -> Result<ClientResponse, CallError> {
        let url = self.url(&format!("/register/{client_id}"));
        let body = UpdateClientRequest {
            client_name: client_name.into(),
        };
        send(self.http.put(url).bearer_auth(registration_token).json(&body)).await
    }

    pub async fn delete_client(&self, client_id: &str, registration_token: &str) -> Result<(), CallError> {
        let url = self.url(&format!("/register/{client_id}"));
        send_empty(self.http.delete(url).bearer_auth(registration_token)).await
    }

    pub async fn authorize(&self, req: &AuthorizeRequest) -> Result<AuthorizeResponse, CallError> {
        send(self.http.post(self.url("/authorize")).json(req)).await
    }

    pub async fn exchange_code(&self, code: &str, creds: &ClientCredentials) -> Result<TokenResponse, CallError> {
        let form = TokenRequest {
            grant_type: "authorization_code".into(),
            code: Some(code.into()),
            client_id: creds.client_id.clone(),
            client_secret: creds.client_secret.clone(),
            ..TokenRequest::default()
        };
        send(self.http.post(self.url("/token")).form(&form)).await
    }

    pub async fn refresh(
        &self,
        refresh_handle: &str,
        creds: &ClientCredentials,
        scopes: Option<&[Scope]>,
        audience: &str,
        origin: Option<&str>,
    ) -> Result<TokenResponse, CallError> {
        let form = TokenRequest {
            grant_type: "refresh_token".into(),
            refresh_token: Some(refresh_handle.into()),
            client_id: creds.client_id.clone(),
            client_secret: creds.client_secret.clone(),
            scope: scopes.map(format_scope_list),
            audience: Some(audience.into()),
            origin: origin.map(String::from),
            ..TokenRequest::default()
        };
        send(self.http.post(self.url("/token")).form(&form)).await
    }

    pub async fn revoke(&self, token: &str, creds: &ClientCredentials) -> Result<(), CallError> {
        let form = RevokeRequest {
            token: token.into(),
            client_id: creds.client_id.clone(),
            client_secret: creds.client_secret.clone(),
        };
        send_empty(self.http.post(self.url("/revoke")).form(&form)).await
    }
}
