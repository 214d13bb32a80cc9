//! HTTP front end of the token server.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Form, Json, Router};
use captoken_core::scope::{format_scope_list, parse_scope_list};
use captoken_core::{Scope, DISCOVERY_PATH};
use tokio::net::TcpListener;

use crate::error::IssuerError;
use crate::model::ClientView;
use crate::server::{ClientAction, ClientOutcome, TokenServer};
use crate::wire::*;

pub struct ApiError(pub IssuerError);

impl From<IssuerError> for ApiError {
    fn from(e: IssuerError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::BAD_REQUEST);
        let body = ErrorBody {
            error: self.0.oauth_code().to_string(),
            error_description: self.0.to_string(),
            reason: self.0.reason().to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn scopes(text: &str) -> Result<Vec<Scope>, IssuerError> {
    parse_scope_list(text).map_err(|e| IssuerError::BadRequest(e.to_string()))
}

fn bearer(headers: &HeaderMap) -> &str {
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or("")
}

fn client_response(view: ClientView) -> ClientResponse {
    ClientResponse {
        client_id: view.client_id,
        client_name: view.display_name,
        scope: format_scope_list(&view.allowed_scopes),
        client_id_issued_at: view.created_at,
    }
}

pub fn router(server: Arc<TokenServer>) -> Router {
    Router::new()
        .route("/register", post(register))
        .route(
            "/register/{client_id}",
            get(get_client).put(update_client).delete(delete_client),
        )
        .route("/authorize", post(authorize))
        .route("/token", post(token))
        .route("/revoke", post(revoke))
        .route(DISCOVERY_PATH, get(discovery))
        .with_state(server)
}

pub async fn serve(listener: TcpListener, server: Arc<TokenServer>) -> std::io::Result<()> {
    axum::serve(listener, router(server)).await
}

async fn discovery(State(srv): State<Arc<TokenServer>>) -> impl IntoResponse {
    Json(srv.metadata())
}

async fn register(
    State(srv): State<Arc<TokenServer>>,
    Json(req): Json<RegisterRequest>,
) -> ApiResult<(StatusCode, Json<RegisterResponse>)> {
    let reg = srv.register_client(&req.client_name, &scopes(&req.scope)?)?;
    let uri = format!("{}/register/{}", srv.issuer().trim_end_matches('/'), reg.client_id);
    Ok((
        StatusCode::CREATED,
        Json(RegisterResponse {
            client_id: reg.client_id,
            client_secret: reg.client_secret,
            registration_access_token: reg.registration_token,
            registration_client_uri: uri,
            client_name: reg.client.display_name,
            scope: format_scope_list(&reg.client.allowed_scopes),
            client_id_issued_at: reg.client.created_at,
        }),
    ))
}

fn manage(
    srv: &TokenServer,
    client_id: &str,
    headers: &HeaderMap,
    action: ClientAction,
) -> ApiResult<Response> {
    match srv.manage_client(client_id, bearer(headers), action)? {
        ClientOutcome::Record(view) => Ok(Json(client_response(view)).into_response()),
        ClientOutcome::Deleted => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn get_client(
    State(srv): State<Arc<TokenServer>>,
    Path(client_id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    manage(&srv, &client_id, &headers, ClientAction::Get)
}

async fn update_client(
    State(srv): State<Arc<TokenServer>>,
    Path(client_id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<UpdateClientRequest>,
) -> ApiResult<Response> {
    manage(
        &srv,
        &client_id,
        &headers,
        ClientAction::Update {
            display_name: req.client_name,
        },
    )
}

async fn delete_client(
    State(srv): State<Arc<TokenServer>>,
    Path(client_id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    manage(&srv, &client_id, &headers, ClientAction::Delete)
}

async fn authorize(
    State(srv): State<Arc<TokenServer>>,
    Json(req): Json<AuthorizeRequest>,
) -> ApiResult<Json<AuthorizeResponse>> {
    let grant = srv.authorize(&req.user, &req.attributes, &req.client_id, &scopes(&req.scope)?)?;
    Ok(Json(AuthorizeResponse {
        code: grant.code,
        scope: format_scope_list(&grant.approved_scopes),
        expires_at: grant.expires_at,
    }))
}

async fn token(
    State(srv): State<Arc<TokenServer>>,
    Form(req): Form<TokenRequest>,
) -> ApiResult<Json<TokenResponse>> {
    let missing = |field: &str| IssuerError::BadRequest(format!("missing {field}"));
    match req.grant_type.as_str() {
        "authorization_code" => {
            let code = req.code.as_deref().ok_or_else(|| missing("code"))?;
            let grant = srv.exchange_code(code, &req.client_id, &req.client_secret)?;
            Ok(Json(TokenResponse {
                access_token: grant.access.access_token,
                token_type: "Bearer".into(),
                expires_in: grant.access.expires_in,
                refresh_token: Some(grant.refresh_handle.expose().to_string()),
                scope: format_scope_list(&grant.access.scopes),
            }))
        }
        "refresh_token" => {
            let handle = req.refresh_token.as_deref().ok_or_else(|| missing("refresh_token"))?;
            let requested = req.scope.as_deref().map(scopes).transpose()?;
            let audience = req
                .audience
                .clone()
                .unwrap_or_else(|| srv.config().default_audience.clone());
            let access = srv.refresh_access_as_client(
                &req.client_id,
                &req.client_secret,
                handle,
                requested.as_deref(),
                &audience,
                req.origin.as_deref(),
            )?;
            Ok(Json(TokenResponse {
                access_token: access.access_token,
                token_type: "Bearer".into(),
                expires_in: access.expires_in,
                refresh_token: None,
                scope: format_scope_list(&access.scopes),
            }))
        }
        other => Err(IssuerError::BadRequest(format!("unsupported grant_type {other}")).into()),
    }
}

async fn revoke(
    State(srv): State<Arc<TokenServer>>,
    Form(req): Form<RevokeRequest>,
) -> ApiResult<StatusCode> {
    srv.revoke(&req.token, &req.client_id, &req.client_secret)?;
    Ok(StatusCode::OK)
}
