//! Token server: dynamic client registration, policy-driven consent,
//! code exchange, refresh with attenuation, revocation, and Local Mode
//! issuance for submit-node-local deployments.

pub mod client;
pub mod config;
pub mod error;
pub mod http;
pub mod model;
pub mod server;
pub mod wire;

pub use client::{CallError, ClientCredentials, IssuerClient};
pub use config::IssuerConfig;
pub use error::IssuerError;
pub use model::{AuditEntry, AuthorizationGrant, ClientRecord, ClientView, PolicyRule, RefreshTokenRecord};
pub use server::{
    AccessGrant, AuditReport, ClientAction, ClientOutcome, CodeGrant, Registration, TokenGrant, TokenServer,
};
