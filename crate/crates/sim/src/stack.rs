//! The running services of one simulation: token server and gateway on
//! loopback HTTP, the credential daemon on a Unix socket, all reading
//! one virtual clock.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use captoken_core::{Clock, KeyRecord, Timestamp, VirtualClock};
use captoken_credd::rendezvous::prepare_directory;
use captoken_credd::{bind_control, serve_control, ControlClient, CredDaemon, DaemonOptions, HttpIssuer};
use captoken_gateway::{Gateway, GatewayConfig, TrustStore, REASON_HEADER};
use captoken_issuer::{ClientCredentials, IssuerClient, IssuerConfig, TokenServer};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use reqwest::header::AUTHORIZATION;
use tempfile::TempDir;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::recording::{RecordingIssuer, SimDiscovery};
use crate::scenario::Scenario;
use crate::transcript::Transcript;

/// Issuer identifier placed in every token, independent of the port the
/// token server happens to listen on.
pub const ISSUER_ID: &str = "https://tokens.sim";
pub const CREDD_CLIENT_NAME: &str = "credd";

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct BootError(pub String);

fn boot_err(what: &str) -> impl Fn(&dyn std::fmt::Display) -> BootError + '_ {
    move |e| BootError(format!("{what}: {e}"))
}

/// Outcome of one gateway request as the starter sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataReply {
    pub status: u16,
    pub reason: Option<String>,
    pub bytes: usize,
}

impl DataReply {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub struct Stack {
    pub clock: Arc<VirtualClock>,
    pub transcript: Transcript,
    pub issuer: Arc<TokenServer>,
    pub issuer_client: IssuerClient,
    pub credd_client_id: String,
    pub control: ControlClient,
    pub gateway: Arc<Gateway>,
    pub rendezvous: PathBuf,
    pub sandbox: PathBuf,
    upstream: Arc<RecordingIssuer>,
    daemon: Arc<CredDaemon>,
    daemon_options: DaemonOptions,
    socket: PathBuf,
    gateway_base: String,
    http: reqwest::Client,
    key_seed: StdRng,
    key_generation: u32,
    credd_task: JoinHandle<()>,
    server_tasks: Vec<JoinHandle<()>>,
    _dir: TempDir,
}

impl Drop for Stack {
    fn drop(&mut self) {
        self.credd_task.abort();
        for t in &self.server_tasks {
            t.abort();
        }
    }
}

async fn listen() -> Result<(TcpListener, String), BootError> {
    let listener = TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| boot_err("bind")(&e))?;
    let addr = listener.local_addr().map_err(|e| boot_err("bind")(&e))?;
    Ok((listener, format!("http://{addr}")))
}

fn spawn_credd(socket: &Path, daemon: Arc<CredDaemon>) -> Result<JoinHandle<()>, BootError> {
    let listener = bind_control(socket).map_err(|e| boot_err("credd socket")(&e))?;
    Ok(tokio::spawn(async move {
        let _ = serve_control(listener, daemon).await;
    }))
}

impl Stack {
    pub async fn boot(scenario: &Scenario) -> Result<Self, BootError> {
        let services = &scenario.services;
        let dir = TempDir::new().map_err(|e| boot_err("tempdir")(&e))?;
        let clock = Arc::new(VirtualClock::new(scenario.start_time));
        let transcript = Transcript::new(clock.clone());
        let mut key_seed = StdRng::seed_from_u64(scenario.seed);

        let mut config = IssuerConfig::new(ISSUER_ID, services.scope_universe.clone());
        config.access_lifetime = services.access_lifetime;
        config.default_audience = services.audience.clone();
        config.policy = services.policy.clone();
        let key = KeyRecord::from_seed("sim-1", key_seed.gen());
        let rng = StdRng::seed_from_u64(key_seed.gen());
        let issuer = Arc::new(
            TokenServer::open(config, key, clock.clone(), rng).map_err(|e| boot_err("token server")(&e))?,
        );
        let (listener, issuer_base) = listen().await?;
        let server = issuer.clone();
        let issuer_task = tokio::spawn(async move {
            let _ = captoken_issuer::http::serve(listener, server).await;
        });

        let issuer_client = IssuerClient::new(&issuer_base);
        let reg = issuer_client
            .register(CREDD_CLIENT_NAME, &services.scope_universe)
            .await
            .map_err(|e| boot_err("client registration")(&e))?;
        let creds = ClientCredentials {
            client_id: reg.client_id.clone(),
            client_secret: reg.client_secret,
        };
        let upstream = Arc::new(RecordingIssuer::new(
            Arc::new(HttpIssuer::new(issuer_client.clone(), creds)),
            transcript.clone(),
        ));

        let state_dir = dir.path().join("credd");
        let rendezvous = dir.path().join("rendezvous");
        prepare_directory(&rendezvous).map_err(|e| boot_err("rendezvous")(&e))?;
        let daemon_options = DaemonOptions {
            state_dir: Some(state_dir),
            ..DaemonOptions::default()
        };
        let daemon = Arc::new(
            CredDaemon::open(daemon_options.clone(), upstream.clone(), clock.clone())
                .map_err(|e| boot_err("credd")(&e))?,
        );
        let socket = dir.path().join("credd.sock");
        let credd_task = spawn_credd(&socket, daemon.clone())?;

        let sandbox = dir.path().join("sandbox");
        std::fs::create_dir_all(&sandbox).map_err(|e| boot_err("sandbox")(&e))?;
        let gw_config = GatewayConfig::new(&sandbox, &services.audience, vec![ISSUER_ID.to_string()]);
        let trust = TrustStore::new(
            vec![ISSUER_ID.to_string()],
            Arc::new(SimDiscovery::new(ISSUER_ID, issuer_client.clone())),
        );
        trust.refresh_trust(clock.now()).await;
        let gateway =
            Arc::new(Gateway::new(gw_config, trust, clock.clone()).map_err(|e| boot_err("gateway")(&e))?);
        let (listener, gateway_base) = listen().await?;
        let gw = gateway.clone();
        let gateway_task = tokio::spawn(async move {
            let _ = captoken_gateway::serve(listener, gw).await;
        });

        let mut stack = Stack {
            clock,
            transcript,
            issuer,
            issuer_client,
            credd_client_id: reg.client_id,
            control: ControlClient::new(&socket),
            gateway,
            rendezvous,
            sandbox,
            upstream,
            daemon,
            daemon_options,
            socket,
            gateway_base,
            http: reqwest::Client::new(),
            key_seed,
            key_generation: 1,
            credd_task,
            server_tasks: vec![issuer_task, gateway_task],
            _dir: dir,
        };
        for f in &scenario.fixtures {
            stack.put_fixture(&f.path, f.content.as_bytes())?;
        }
        Ok(stack)
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn daemon(&self) -> &Arc<CredDaemon> {
        &self.daemon
    }

    /// Every refresh handle the issuer has handed to the daemon.
    pub fn refresh_handles(&self) -> Vec<String> {
        self.upstream.handles().lock().unwrap().clone()
    }

    pub fn put_fixture(&mut self, path: &str, content: &[u8]) -> Result<(), BootError> {
        let target = self.sandbox.join(path.trim_start_matches('/'));
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(|e| boot_err("fixture")(&e))?;
        }
        std::fs::write(&target, content).map_err(|e| boot_err("fixture")(&e))
    }

    /// Creates a small file at `path` unless something already exists there.
    pub fn ensure_fixture(&mut self, path: &str) -> Result<(), BootError> {
        if self.sandbox.join(path.trim_start_matches('/')).exists() {
            return Ok(());
        }
        self.put_fixture(path, format!("fixture {path}\n").as_bytes())
    }

    /// Kills the daemon and its socket server, then reopens it from the
    /// journal. Returns the number of credentials replayed.
    pub fn restart_credd(&mut self) -> Result<usize, BootError> {
        self.credd_task.abort();
        let daemon = Arc::new(
            CredDaemon::open(self.daemon_options.clone(), self.upstream.clone(), self.clock.clone())
                .map_err(|e| boot_err("credd restart")(&e))?,
        );
        self.credd_task = spawn_credd(&self.socket, daemon.clone())?;
        self.daemon = daemon;
        Ok(self.daemon.credential_count())
    }

    /// Installs a fresh signing key, then has the gateway re-read
    /// discovery as its periodic refresher would.
    pub async fn rotate_keys(&mut self, drop_previous: bool) -> Result<String, BootError> {
        self.key_generation += 1;
        let kid = format!("sim-{}", self.key_generation);
        let key = KeyRecord::from_seed(kid.clone(), self.key_seed.gen());
        self.issuer
            .rotate_key(key, drop_previous)
            .map_err(|e| boot_err("rotate")(&e))?;
        self.gateway.trust().refresh_trust(self.now()).await;
        Ok(kid)
    }

    /// Sends one request to the gateway. Transport failures surface as
    /// status 0 with reason "Transport".
    pub async fn data_request(
        &self,
        write: bool,
        path: &str,
        token: &str,
        origin: Option<&str>,
        body: Vec<u8>,
    ) -> DataReply {
        let url = format!("{}{}", self.gateway_base, path);
        let mut req = if write {
            self.http.put(url).body(body)
        } else {
            self.http.get(url)
        };
        req = req.header(AUTHORIZATION, format!("Bearer {token}"));
        if let Some(o) = origin {
            req = req.header(self.gateway.config().local_origin_header.as_str(), o);
        }
        match req.send().await {
            Ok(resp) => {
                let status = resp.status().as_u16();
                let reason = resp
                    .headers()
                    .get(REASON_HEADER)
                    .and_then(|v| v.to_str().ok())
                    .map(String::from);
                let bytes = resp.bytes().await.map(|b| b.len()).unwrap_or(0);
                DataReply { status, reason, bytes }
            }
            Err(_) => DataReply {
                status: 0,
                reason: Some("Transport".into()),
                bytes: 0,
            },
        }
    }
}
