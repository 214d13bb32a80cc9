//! Service subcommands. Each runs until interrupted.

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use captoken_core::{Clock, KeyRecord, SystemClock};
use captoken_credd::rendezvous::prepare_directory;
use captoken_credd::{bind_control, run_background, serve_control, CredDaemon, CreddConfig, HttpIssuer};
use captoken_gateway::{run_trust_refresher, Gateway, GatewayConfig, HttpDiscovery, TrustStore};
use captoken_issuer::{ClientCredentials, IssuerClient, IssuerConfig, TokenServer};
use clap::Args;
use rand::rngs::{OsRng, StdRng};
use rand::SeedableRng;
use tokio::net::TcpListener;
use tracing::{info, warn};

use crate::tokens::load_key;
use crate::{io_err, usage_err, CliError};

async fn until_interrupted(server: impl Future<Output = std::io::Result<()>>) -> Result<(), CliError> {
    tokio::select! {
        r = server => r.map_err(io_err("server")),
        _ = tokio::signal::ctrl_c() => {
            info!("interrupted, shutting down");
            Ok(())
        }
    }
}

async fn bind(addr: &str) -> Result<TcpListener, CliError> {
    let listener = TcpListener::bind(addr).await.map_err(io_err(addr))?;
    Ok(listener)
}

fn local_addr(listener: &TcpListener) -> String {
    listener.local_addr().map(|a| a.to_string()).unwrap_or_default()
}

#[derive(Args)]
pub struct IssuerArgs {
    /// Token server TOML config.
    #[arg(long)]
    pub config: PathBuf,
    /// Private JWK; overrides signing_key from the config.
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Overrides the issuer URL from the config.
    #[arg(long)]
    pub issuer: Option<String>,
}

pub async fn issuer(args: IssuerArgs) -> Result<(), CliError> {
    let mut config = IssuerConfig::load(&args.config).map_err(usage_err(&args.config.display().to_string()))?;
    if let Some(issuer) = args.issuer {
        config.issuer = issuer;
    }
    let key = match args.key.or_else(|| config.signing_key.clone()) {
        Some(path) => load_key(&path)?,
        None => {
            let key = KeyRecord::generate(format!("key-{}", SystemClock.now()), &mut OsRng);
            warn!(kid = %key.key_id, "no signing key configured; using an ephemeral key");
            key
        }
    };
    if key.private_part.is_none() {
        return Err(CliError::Usage("signing key holds no private part".into()));
    }
    let server = TokenServer::open(config.clone(), key, Arc::new(SystemClock), StdRng::from_entropy())
        .map_err(io_err("token server"))?;
    let listener = bind(&config.listen).await?;
    info!(addr = %local_addr(&listener), issuer = %config.issuer, "token server listening");
    until_interrupted(captoken_issuer::http::serve(listener, Arc::new(server))).await
}

#[derive(Args)]
pub struct GatewayArgs {
    /// Gateway TOML config.
    #[arg(long)]
    pub config: PathBuf,
    /// Additional trusted issuer; repeatable.
    #[arg(long = "issuer")]
    pub issuers: Vec<String>,
    /// Overrides service_audience from the config.
    #[arg(long)]
    pub audience: Option<String>,
}

pub async fn gateway(args: GatewayArgs) -> Result<(), CliError> {
    let mut config = GatewayConfig::load(&args.config).map_err(usage_err(&args.config.display().to_string()))?;
    config.trusted_issuers.extend(args.issuers);
    if let Some(audience) = args.audience {
        config.service_audience = audience;
    }
    if config.trusted_issuers.is_empty() {
        return Err(CliError::Usage("no trusted issuers configured".into()));
    }
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let trust = TrustStore::new(config.trusted_issuers.clone(), Arc::new(HttpDiscovery::new()));
    trust.refresh_trust(clock.now()).await;
    let period = Duration::from_secs(config.trust_refresh_seconds.max(1));
    let listen = config.listen.clone();
    let gateway = Arc::new(Gateway::new(config, trust, clock).map_err(io_err("sandbox"))?);
    let listener = bind(&listen).await?;
    info!(addr = %local_addr(&listener), root = %gateway.root().display(), "gateway listening");
    tokio::spawn(run_trust_refresher(gateway.clone(), period));
    until_interrupted(captoken_gateway::serve(listener, gateway)).await
}

#[derive(Args)]
pub struct CreddArgs {
    /// Credential daemon TOML config.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the token server URL from the config.
    #[arg(long)]
    pub issuer: Option<String>,
}

pub async fn credd(args: CreddArgs) -> Result<(), CliError> {
    let mut config = CreddConfig::load(&args.config).map_err(usage_err(&args.config.display().to_string()))?;
    if let Some(issuer) = args.issuer {
        config.issuer = issuer;
    }
    let creds = ClientCredentials {
        client_id: config.client_id.clone(),
        client_secret: config.client_secret().map_err(io_err("client secret"))?,
    };
    let upstream = Arc::new(HttpIssuer::new(IssuerClient::new(&config.issuer), creds));
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let daemon = Arc::new(
        CredDaemon::open(config.daemon_options(), upstream, clock.clone()).map_err(io_err("credential store"))?,
    );
    if let Some(dir) = &config.rendezvous_dir {
        prepare_directory(dir).map_err(io_err(&dir.display().to_string()))?;
    }
    let listener = bind_control(&config.socket).map_err(io_err(&config.socket.display().to_string()))?;
    info!(
        socket = %config.socket.display(),
        credentials = daemon.credential_count(),
        "credential daemon listening"
    );
    tokio::spawn(run_background(
        daemon.clone(),
        config.rendezvous_dir.clone(),
        move || clock.now(),
        Duration::from_secs(config.tick_seconds),
    ));
    until_interrupted(serve_control(listener, daemon)).await
}
