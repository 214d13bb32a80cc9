//! `captoken`: key generation, token tools, service launch and scenario
//! runs. Exit codes: 0 success, 1 verification or check failure, 2 usage
//! or I/O error. Logs go to standard error.

mod serve;
mod tokens;

use std::path::PathBuf;
use std::process::ExitCode;

use captoken_sim::{run_scenario, ScenarioParseError, SimError};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    /// Verification or check failure; the message is the reason.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

pub fn io_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Io(format!("{context}: {e}"))
}

pub fn usage_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Usage(format!("{context}: {e}"))
}

#[derive(Parser)]
#[command(name = "captoken", version, about = "Capability token tools and services")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a signing key; the private JWK goes to --out, the public
    /// JWK to standard output.
    Keygen(tokens::KeygenArgs),
    /// Sign a token with a private JWK.
    TokenCreate(tokens::CreateArgs),
    /// Verify a token against an issuer's published keys.
    TokenVerify(tokens::VerifyArgs),
    /// Print a token's header and claims without verifying anything.
    TokenInspect(tokens::InspectArgs),
    /// Run the token server.
    ServeIssuer(serve::IssuerArgs),
    /// Run the data gateway.
    ServeGateway(serve::GatewayArgs),
    /// Run the credential daemon.
    ServeCredd(serve::CreddArgs),
    /// Run a scenario file and print its report.
    Demo(DemoArgs),
}

#[derive(Args)]
struct DemoArgs {
    /// Scenario TOML file.
    scenario: PathBuf,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

async fn demo(args: DemoArgs) -> Result<(), CliError> {
    let report = run_scenario(&args.scenario).await.map_err(|e| match e {
        SimError::Parse(ScenarioParseError::Io { .. }) => CliError::Io(e.to_string()),
        SimError::Parse(_) => CliError::Usage(e.to_string()),
        other => CliError::Io(other.to_string()),
    })?;
    let json = report.to_json();
    match &args.out {
        Some(path) => std::fs::write(path, format!("{json}\n")).map_err(io_err(&path.display().to_string()))?,
        None => println!("{json}"),
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Err(CliError::Failed(format!("failed checks: {}", failed.join(", "))))
    }
}

fn init_logging(default_level: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let serving = matches!(
        cli.command,
        Command::ServeIssuer(_) | Command::ServeGateway(_) | Command::ServeCredd(_)
    );
    init_logging(if serving { "info" } else { "warn" });
    let result = match cli.command {
        Command::Keygen(a) => tokens::keygen(a),
        Command::TokenCreate(a) => tokens::create(a),
        Command::TokenVerify(a) => tokens::verify(a).await,
        Command::TokenInspect(a) => tokens::inspect(a),
        Command::ServeIssuer(a) => serve::issuer(a).await,
        Command::ServeGateway(a) => serve::gateway(a).await,
        Command::ServeCredd(a) => serve::credd(a).await,
        Command::Demo(a) => demo(a).await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("captoken: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
