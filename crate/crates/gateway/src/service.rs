//! Request mediation: path resolution, token verification, enforcement,
//! then sandboxed file access, in that order.

use std::fs;
use std::io::{self, Write};
use std::os::unix::fs::OpenOptionsExt;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::http::StatusCode;
use captoken_core::scope::normalize_path;
use captoken_core::{enforce, Clock, Decision, Operation, TokenClaims, Verifier, VerifyError};
use percent_encoding::percent_decode_str;
use tracing::{info, warn};

use crate::config::GatewayConfig;
use crate::trust::TrustStore;

/// Called with the temp file path after it is written and before it is
/// renamed into place. An error aborts the write there.
pub type WriteHook = Arc<dyn Fn(&Path) -> io::Result<()> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub status: StatusCode,
    pub reason: String,
}

impl Failure {
    fn new(status: StatusCode, reason: impl Into<String>) -> Self {
        Failure {
            status,
            reason: reason.into(),
        }
    }

    fn bad_path() -> Self {
        Failure::new(StatusCode::BAD_REQUEST, "BadPath")
    }

    fn not_found() -> Self {
        Failure::new(StatusCode::NOT_FOUND, "NotFound")
    }

    fn conflict() -> Self {
        Failure::new(StatusCode::CONFLICT, "PathConflict")
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        warn!(error = %e, "storage failure");
        Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageError")
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        Failure::new(StatusCode::UNAUTHORIZED, e.reason())
    }
}

/// Single percent-decode pass, then segment normalization.
pub fn resolve_request_path(raw: &str) -> Result<String, Failure> {
    let decoded = percent_decode_str(raw).decode_utf8().map_err(|_| Failure::bad_path())?;
    normalize_path(&decoded).map_err(|_| Failure::bad_path())
}

pub struct Gateway {
    config: GatewayConfig,
    root: PathBuf,
    trust: TrustStore,
    clock: Arc<dyn Clock>,
    verifier: Verifier,
    write_hook: Option<WriteHook>,
}

impl Gateway {
    pub fn new(config: GatewayConfig, trust: TrustStore, clock: Arc<dyn Clock>) -> io::Result<Self> {
        let root = fs::canonicalize(&config.sandbox_root)?;
        Ok(Gateway {
            config,
            root,
            trust,
            clock,
            verifier: Verifier::default(),
            write_hook: None,
        })
    }

    pub fn with_write_hook(mut self, hook: WriteHook) -> Self {
        self.write_hook = Some(hook);
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn trust(&self) -> &TrustStore {
        &self.trust
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    /// Verifies the bearer token. A token from a trusted issuer signed by
    /// an unknown key triggers one discovery re-fetch.
    pub async fn verify(&self, bearer: Option<&str>) -> Result<TokenClaims, Failure> {
        let token = bearer.ok_or_else(|| Failure::new(StatusCode::UNAUTHORIZED, "MissingToken"))?;
        let audience = &self.config.service_audience;
        let first = self
            .verifier
            .verify(token, &self.trust.snapshot(), audience, self.clock.now());
        match first {
            Err(VerifyError::UnknownKey | VerifyError::UnknownIssuer) => {
                let issuer = captoken_core::decode_unverified(token)
                    .ok()
                    .and_then(|(_, p)| p.get("iss").and_then(|v| v.as_str()).map(String::from));
                match issuer {
                    Some(iss) if self.trust.is_trusted(&iss) => {
                        self.trust.refresh_issuer(&iss, self.clock.now()).await;
                        Ok(self
                            .verifier
                            .verify(token, &self.trust.snapshot(), audience, self.clock.now())?)
                    }
                    _ => Ok(first?),
                }
            }
            other => Ok(other?),
        }
    }

    /// Everything short of touching the file system.
    pub async fn authorize(
        &self,
        operation: Operation,
        raw_path: &str,
        bearer: Option<&str>,
        origin: Option<&str>,
    ) -> Result<(String, TokenClaims), Failure> {
        let path = resolve_request_path(raw_path)?;
        let claims = self.verify(bearer).await?;
        match enforce(&claims, operation, &path, origin) {
            Decision::Allow => Ok((path, claims)),
            Decision::Deny(reason) => Err(Failure::new(StatusCode::FORBIDDEN, reason.as_str())),
        }
    }

    pub async fn handle_read(&self, raw_path: &str, bearer: Option<&str>, origin: Option<&str>) -> Result<Vec<u8>, Failure> {
        let outcome = async {
            let (path, claims) = self.authorize(Operation::Read, raw_path, bearer, origin).await?;
            let root = self.root.clone();
            let bytes = tokio::task::spawn_blocking(move || read_inside(&root, &path))
                .await
                .map_err(Failure::internal)??;
            Ok((claims, bytes))
        }
        .await;
        log("GET", raw_path, &outcome);
        outcome.map(|(_, b)| b)
    }

    pub async fn handle_write(
        &self,
        raw_path: &str,
        body: Vec<u8>,
        bearer: Option<&str>,
        origin: Option<&str>,
    ) -> Result<(), Failure> {
        let outcome = async {
            let (path, claims) = self.authorize(Operation::Write, raw_path, bearer, origin).await?;
            self.check_size(body.len() as u64)?;
            self.write_object(path, body).await?;
            Ok((claims, ()))
        }
        .await;
        log("PUT", raw_path, &outcome);
        outcome.map(|_| ())
    }

    /// Writes an already authorized, normalized path: temp file, then
    /// rename.
    pub async fn write_object(&self, path: String, body: Vec<u8>) -> Result<(), Failure> {
        let root = self.root.clone();
        let hook = self.write_hook.clone();
        tokio::task::spawn_blocking(move || write_inside(&root, &path, &body, hook.as_ref()))
            .await
            .map_err(Failure::internal)?
    }

    pub fn check_size(&self, len: u64) -> Result<(), Failure> {
        if len > self.config.max_object_bytes {
            Err(Failure::new(StatusCode::PAYLOAD_TOO_LARGE, "TooLarge"))
        } else {
            Ok(())
        }
    }
}

pub(crate) fn log<T>(method: &str, path: &str, outcome: &Result<(TokenClaims, T), Failure>) {
    match outcome {
        Ok((claims, _)) => info!(method, path, sub = %claims.subject, jti = %claims.token_id, "allowed"),
        Err(f) => info!(method, path, status = f.status.as_u16(), reason = %f.reason, "refused"),
    }
}

fn inside(root: &Path, path: &Path) -> bool {
    path.starts_with(root)
}

fn read_inside(root: &Path, normalized: &str) -> Result<Vec<u8>, Failure> {
    let target = root.join(normalized.trim_start_matches('/'));
    let real = match fs::canonicalize(&target) {
        Ok(p) => p,
        Err(e) if matches!(e.kind(), io::ErrorKind::NotFound | io::ErrorKind::NotADirectory) => {
            return Err(Failure::not_found())
        }
        Err(e) => return Err(Failure::internal(e)),
    };
    if !inside(root, &real) {
        warn!(path = normalized, "link resolves outside the sandbox");
        return Err(Failure::not_found());
    }
    if !real.is_file() {
        return Err(Failure::not_found());
    }
    fs::read(&real).map_err(Failure::internal)
}

/// Creates each missing directory under `root`, refusing any existing
/// component that resolves outside it.
fn ensure_dirs(root: &Path, rel: &Path) -> Result<PathBuf, Failure> {
    let mut dir = root.to_path_buf();
    for comp in rel.components() {
        let Component::Normal(name) = comp else {
            return Err(Failure::bad_path());
        };
        dir.push(name);
        match fs::symlink_metadata(&dir) {
            Ok(meta) if meta.file_type().is_symlink() => {
                let real = fs::canonicalize(&dir).map_err(|_| Failure::not_found())?;
                if !inside(root, &real) || !real.is_dir() {
                    warn!(dir = %dir.display(), "directory link resolves outside the sandbox");
                    return Err(Failure::not_found());
                }
                dir = real;
            }
            Ok(meta) if meta.is_dir() => {}
            Ok(_) => return Err(Failure::conflict()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                fs::create_dir(&dir).or_else(|e| {
                    if e.kind() == io::ErrorKind::AlreadyExists {
                        Ok(())
                    } else {
                        Err(Failure::internal(e))
                    }
                })?;
            }
            Err(e) => return Err(Failure::internal(e)),
        }
    }
    Ok(dir)
}

fn write_inside(root: &Path, normalized: &str, body: &[u8], hook: Option<&WriteHook>) -> Result<(), Failure> {
    let rel = Path::new(normalized.trim_start_matches('/'));
    let (Some(parent), Some(name)) = (rel.parent(), rel.file_name()) else {
        return Err(Failure::bad_path());
    };
    let dir = ensure_dirs(root, parent)?;
    let target = dir.join(name);
    if target.is_dir() {
        return Err(Failure::conflict());
    }
    let temp = dir.join(format!(".{}.{}.part", name.to_string_lossy(), uuid::Uuid::new_v4()));
    let mut file = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .mode(0o644)
        .open(&temp)
        .map_err(Failure::internal)?;
    file.write_all(body)
        .and_then(|_| file.sync_all())
        .map_err(Failure::internal)?;
    drop(file);
    if let Some(hook) = hook {
        hook(&temp).map_err(Failure::internal)?;
    }
    fs::rename(&temp, &target).map_err(Failure::internal)
}
