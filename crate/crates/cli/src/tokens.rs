//! Key and token subcommands.

use std::fs::OpenOptions;
use std::io::{Read, Write};
use std::os::unix::fs::OpenOptionsExt;
use std::path::{Path, PathBuf};

use captoken_core::secret::digest_hex;
use captoken_core::{
    decode_unverified, parse_scope_list, sign_token, verify_token, Clock, IssuerMetadata, Jwk, KeyRecord,
    PrivateJwk, SystemClock, TokenClaims, TrustedIssuers, ANY_AUDIENCE, DEFAULT_ACCESS_LIFETIME, PROFILE_VERSION,
};
use captoken_gateway::{DiscoverySource, HttpDiscovery};
use clap::Args;
use rand::rngs::OsRng;

use crate::{io_err, usage_err, CliError};

pub const UNVERIFIED_BANNER: &str =
    "UNVERIFIED: decoded without checking signature, issuer, audience or validity window";

/// Reads a JWK file, private or public.
pub fn load_key(path: &Path) -> Result<KeyRecord, CliError> {
    let ctx = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(io_err(&ctx))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(usage_err(&ctx))?;
    if value.get("d").is_some() {
        let jwk: PrivateJwk = serde_json::from_value(value).map_err(usage_err(&ctx))?;
        KeyRecord::from_private_jwk(&jwk).map_err(usage_err(&ctx))
    } else {
        let jwk: Jwk = serde_json::from_value(value).map_err(usage_err(&ctx))?;
        KeyRecord::from_jwk(&jwk).map_err(usage_err(&ctx))
    }
}

/// A literal token, or `-` to read one from standard input.
fn read_token(arg: &str) -> Result<String, CliError> {
    if arg != "-" {
        return Ok(arg.trim().to_string());
    }
    let mut buf = String::new();
    std::io::stdin().read_to_string(&mut buf).map_err(io_err("stdin"))?;
    Ok(buf.trim().to_string())
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}

#[derive(Args)]
pub struct KeygenArgs {
    /// Key id placed in token headers.
    #[arg(long, default_value = "key-1")]
    pub kid: String,
    /// Private JWK output file, created with mode 0600.
    #[arg(long)]
    pub out: PathBuf,
    /// 32-byte hex seed for a reproducible key.
    #[arg(long)]
    pub seed: Option<String>,
    /// Replace an existing --out file.
    #[arg(long)]
    pub force: bool,
}

pub fn keygen(args: KeygenArgs) -> Result<(), CliError> {
    let key = match &args.seed {
        Some(text) => {
            let seed: [u8; 32] = hex::decode(text)
                .map_err(usage_err("--seed"))?
                .try_into()
                .map_err(|_| CliError::Usage("--seed must be 32 bytes of hex".into()))?;
            KeyRecord::from_seed(&args.kid, seed)
        }
        None => KeyRecord::generate(&args.kid, &mut OsRng),
    };
    let private = key.to_private_jwk().expect("generated keys are private");
    let ctx = args.out.display().to_string();
    let mut options = OpenOptions::new();
    options.write(true).mode(0o600);
    if args.force {
        options.create(true).truncate(true);
    } else {
        options.create_new(true);
    }
    let mut file = options.open(&args.out).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            CliError::Usage(format!("{ctx} exists; pass --force to replace it"))
        } else {
            CliError::Io(format!("{ctx}: {e}"))
        }
    })?;
    let text = serde_json::to_string_pretty(&private).expect("jwk serializes");
    file.write_all(format!("{text}\n").as_bytes()).map_err(io_err(&ctx))?;
    print_json(&key.to_jwk());
    Ok(())
}

#[derive(Args)]
pub struct CreateArgs {
    /// Private JWK file.
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub issuer: String,
    #[arg(long)]
    pub subject: String,
    /// Repeatable; each value may hold several space-separated scopes.
    #[arg(long = "scope", required = true)]
    pub scopes: Vec<String>,
    /// Repeatable.
    #[arg(long = "audience", default_value = ANY_AUDIENCE)]
    pub audiences: Vec<String>,
    /// Seconds.
    #[arg(long, default_value_t = DEFAULT_ACCESS_LIFETIME)]
    pub lifetime: i64,
    /// Bind the token to one execution node.
    #[arg(long)]
    pub origin: Option<String>,
    /// Issue time as Unix seconds; defaults to the system clock.
    #[arg(long)]
    pub now: Option<i64>,
    /// Token id; defaults to a digest of the other claims.
    #[arg(long)]
    pub jti: Option<String>,
}

pub fn create(args: CreateArgs) -> Result<(), CliError> {
    let key = load_key(&args.key)?;
    if key.private_part.is_none() {
        return Err(CliError::Usage(format!("{} holds no private key", args.key.display())));
    }
    let scopes = parse_scope_list(&args.scopes.join(" ")).map_err(usage_err("--scope"))?;
    let iat = args.now.unwrap_or_else(|| SystemClock.now());
    let mut claims = TokenClaims {
        issuer: args.issuer,
        subject: args.subject,
        audience: args.audiences,
        scopes,
        issued_at: iat,
        not_before: iat,
        expires_at: iat + args.lifetime,
        token_id: String::new(),
        origin: args.origin,
        version: PROFILE_VERSION.into(),
    };
    claims.token_id = match args.jti {
        Some(jti) => jti,
        None => {
            let basis = serde_json::to_vec(&claims).expect("claims serialize");
            digest_hex(&basis)[..32].to_string()
        }
    };
    let token = sign_token(&claims, &key).map_err(usage_err("token"))?;
    println!("{token}");
    Ok(())
}

#[derive(Args)]
pub struct VerifyArgs {
    /// The token, or `-` for standard input.
    pub token: String,
    /// Audience this verifier serves.
    #[arg(long)]
    pub audience: String,
    /// Trusted issuer; its discovery document is fetched unless --key or
    /// --discovery is given.
    #[arg(long, required_unless_present = "discovery")]
    pub issuer: Option<String>,
    /// Local discovery document to trust instead of fetching one.
    #[arg(long, conflicts_with = "key")]
    pub discovery: Option<PathBuf>,
    /// Public or private JWK to trust for --issuer, offline.
    #[arg(long, requires = "issuer")]
    pub key: Option<PathBuf>,
    /// Verification time as Unix seconds; defaults to the system clock.
    #[arg(long)]
    pub now: Option<i64>,
}

async fn trusted_document(args: &VerifyArgs) -> Result<IssuerMetadata, CliError> {
    if let Some(path) = &args.discovery {
        let ctx = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(io_err(&ctx))?;
        let doc: IssuerMetadata = serde_json::from_str(&text).map_err(usage_err(&ctx))?;
        if let Some(issuer) = &args.issuer {
            if issuer != &doc.issuer {
                return Err(CliError::Usage(format!("{ctx} describes {}, not {issuer}", doc.issuer)));
            }
        }
        return Ok(doc);
    }
    let issuer = args.issuer.as_deref().expect("clap requires --issuer without --discovery");
    match &args.key {
        Some(path) => Ok(IssuerMetadata::new(issuer, [&load_key(path)?.public_only()])),
        None => HttpDiscovery::new()
            .fetch(issuer)
            .await
            .map_err(|e| CliError::Io(format!("discovery for {issuer}: {e}"))),
    }
}

pub async fn verify(args: VerifyArgs) -> Result<(), CliError> {
    let token = read_token(&args.token)?;
    let doc = trusted_document(&args).await?;
    let trust = TrustedIssuers::from([(doc.issuer.clone(), doc)]);
    let now = args.now.unwrap_or_else(|| SystemClock.now());
    match verify_token(&token, &trust, &args.audience, now) {
        Ok(claims) => {
            print_json(&claims);
            Ok(())
        }
        Err(e) => {
            println!("{}", e.reason());
            Err(CliError::Failed(e.reason().into()))
        }
    }
}

#[derive(Args)]
pub struct InspectArgs {
    /// The token, or `-` for standard input.
    pub token: String,
}

pub fn inspect(args: InspectArgs) -> Result<(), CliError> {
    let token = read_token(&args.token)?;
    let (header, claims) =
        decode_unverified(&token).map_err(|e| CliError::Usage(format!("malformed token: {e}")))?;
    println!("{UNVERIFIED_BANNER}");
    println!("header:");
    print_json(&header);
    println!("claims:");
    print_json(&claims);
    Ok(())
}
