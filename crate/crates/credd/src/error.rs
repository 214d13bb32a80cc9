use captoken_issuer::{CallError, IssuerError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CredError {
    #[error("no stored credential for this key")]
    UnknownCredential,
    #[error("malformed credential key: {0}")]
    BadKey(String),
    #[error(transparent)]
    Issuer(IssuerError),
    #[error("issuer unreachable: {0}")]
    Transport(String),
    #[error("credential store write failed: {0}")]
    StoreWriteFailed(String),
    #[error("rendezvous directory unusable: {0}")]
    DirectoryUnreadable(String),
    #[error("issuer cannot mint a token with the requested remaining lifetime")]
    InsufficientLifetime,
    #[error("bad control request: {0}")]
    BadRequest(String),
}

impl CredError {
    pub fn reason(&self) -> &str {
        match self {
            CredError::UnknownCredential => "UnknownCredential",
            CredError::BadKey(_) => "BadKey",
            CredError::Issuer(e) => e.reason(),
            CredError::Transport(_) => "Transport",
            CredError::StoreWriteFailed(_) => "StoreWriteFailed",
            CredError::DirectoryUnreadable(_) => "DirectoryUnreadable",
            CredError::InsufficientLifetime => "InsufficientLifetime",
            CredError::BadRequest(_) => "BadRequest",
        }
    }

    /// Rebuilds an error from its reason name and message.
    pub fn from_reason(reason: &str, message: &str) -> Self {
        let m = message.to_string();
        match reason {
            "UnknownCredential" => CredError::UnknownCredential,
            "BadKey" => CredError::BadKey(m),
            "Transport" => CredError::Transport(m),
            "StoreWriteFailed" => CredError::StoreWriteFailed(m),
            "DirectoryUnreadable" => CredError::DirectoryUnreadable(m),
            "InsufficientLifetime" => CredError::InsufficientLifetime,
            "BadRequest" => CredError::BadRequest(m),
            other => CredError::Issuer(IssuerError::from_reason(other, message)),
        }
    }
}

impl From<IssuerError> for CredError {
    fn from(e: IssuerError) -> Self {
        CredError::Issuer(e)
    }
}

impl From<CallError> for CredError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Issuer(e) => CredError::Issuer(e),
            CallError::Transport(m) => CredError::Transport(m),
        }
    }
}

impl From<captoken_core::JournalError> for CredError {
    fn from(e: captoken_core::JournalError) -> Self {
        CredError::StoreWriteFailed(e.to_string())
    }
}
