//! HTTP front end: `GET /{path}` and `PUT /{path}`.

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use captoken_core::Operation;
use tokio::net::TcpListener;

use crate::service::{log, resolve_request_path, Failure, Gateway};

pub const REASON_HEADER: &str = "X-Authz-Reason";

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let mut resp = (self.status, format!("{}\n", self.reason)).into_response();
        let headers = resp.headers_mut();
        if let Ok(v) = HeaderValue::from_str(&self.reason) {
            headers.insert(REASON_HEADER, v);
        }
        if self.status == StatusCode::UNAUTHORIZED {
            headers.insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
        }
        resp
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn origin<'a>(gw: &Gateway, headers: &'a HeaderMap) -> Option<&'a str> {
    headers
        .get(gw.config().local_origin_header.as_str())
        .and_then(|v| v.to_str().ok())
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new().fallback(dispatch).with_state(gateway)
}

pub async fn serve(listener: TcpListener, gateway: Arc<Gateway>) -> std::io::Result<()> {
    axum::serve(listener, router(gateway)).await
}

async fn dispatch(State(gw): State<Arc<Gateway>>, method: Method, uri: Uri, headers: HeaderMap, body: Body) -> Response {
    let raw = uri.path();
    match method {
        Method::GET => match gw.handle_read(raw, bearer(&headers), origin(&gw, &headers)).await {
            Ok(bytes) => (
                StatusCode::OK,
                [(header::CONTENT_TYPE, "application/octet-stream")],
                bytes,
            )
                .into_response(),
            Err(f) => f.into_response(),
        },
        Method::PUT => match put(&gw, raw, &headers, body).await {
            Ok(()) => StatusCode::CREATED.into_response(),
            Err(f) => f.into_response(),
        },
        _ => (StatusCode::METHOD_NOT_ALLOWED, [(header::ALLOW, "GET, PUT")]).into_response(),
    }
}

async fn put(gw: &Gateway, raw: &str, headers: &HeaderMap, body: Body) -> Result<(), Failure> {
    let outcome = async {
        resolve_request_path(raw)?;
        let declared = headers
            .get(header::CONTENT_LENGTH)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse::<u64>().ok());
        if let Some(len) = declared {
            gw.check_size(len)?;
        }
        let (path, claims) = gw
            .authorize(Operation::Write, raw, bearer(headers), origin(gw, headers))
            .await?;
        let limit = usize::try_from(gw.config().max_object_bytes).unwrap_or(usize::MAX);
        let bytes = to_bytes(body, limit)
            .await
            .map_err(|_| Failure {
                status: StatusCode::PAYLOAD_TOO_LARGE,
                reason: "TooLarge".into(),
            })?;
        gw.write_object(path, bytes.to_vec()).await?;
        Ok((claims, ()))
    }
    .await;
    log("PUT", raw, &outcome);
    outcome.map(|_| ())
}
