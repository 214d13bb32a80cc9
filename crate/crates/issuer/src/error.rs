use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IssuerError {
    #[error("no scopes requested")]
    EmptyScopes,
    #[error("none of the requested scopes are grantable by this server")]
    ScopeUniverseEmpty,
    #[error("registration token does not match")]
    BadRegistrationToken,
    #[error("unknown client")]
    UnknownClient,
    #[error("policy approves none of the requested scopes")]
    NoScopesApproved,
    #[error("unknown authorization code")]
    UnknownCode,
    #[error("authorization code already used")]
    CodeConsumed,
    #[error("authorization code expired")]
    CodeExpired,
    #[error("client authentication failed")]
    BadClientCredentials,
    #[error("unknown refresh token")]
    UnknownHandle,
    #[error("refresh token revoked")]
    Revoked,
    #[error("refresh token expired")]
    RefreshExpired,
    #[error("requested scope exceeds the granted scopes")]
    ScopeEscalation,
    #[error("no policy rule matches the project")]
    NoMatchingPolicy,
    #[error("invalid policy rule: {0}")]
    InvalidPolicy(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("signing failure: {0}")]
    Signing(String),
}

impl IssuerError {
    /// Machine-readable name carried on the wire in the `reason` field.
    pub fn reason(&self) -> &'static str {
        match self {
            IssuerError::EmptyScopes => "EmptyScopes",
            IssuerError::ScopeUniverseEmpty => "ScopeUniverseEmpty",
            IssuerError::BadRegistrationToken => "BadRegistrationToken",
            IssuerError::UnknownClient => "UnknownClient",
            IssuerError::NoScopesApproved => "NoScopesApproved",
            IssuerError::UnknownCode => "UnknownCode",
            IssuerError::CodeConsumed => "CodeConsumed",
            IssuerError::CodeExpired => "CodeExpired",
            IssuerError::BadClientCredentials => "BadClientCredentials",
            IssuerError::UnknownHandle => "UnknownHandle",
            IssuerError::Revoked => "Revoked",
            IssuerError::RefreshExpired => "RefreshExpired",
            IssuerError::ScopeEscalation => "ScopeEscalation",
            IssuerError::NoMatchingPolicy => "NoMatchingPolicy",
            IssuerError::InvalidPolicy(_) => "InvalidPolicy",
            IssuerError::BadRequest(_) => "BadRequest",
            IssuerError::Storage(_) => "Storage",
            IssuerError::Signing(_) => "Signing",
        }
    }

    /// OAuth error code for the response body.
    pub fn oauth_code(&self) -> &'static str {
        match self {
            IssuerError::EmptyScopes | IssuerError::ScopeUniverseEmpty => "invalid_client_metadata",
            IssuerError::BadRegistrationToken => "invalid_token",
            IssuerError::UnknownClient | IssuerError::BadClientCredentials => "invalid_client",
            IssuerError::NoScopesApproved | IssuerError::NoMatchingPolicy => "access_denied",
            IssuerError::UnknownCode
            | IssuerError::CodeConsumed
            | IssuerError::CodeExpired
            | IssuerError::UnknownHandle
            | IssuerError::Revoked
            | IssuerError::RefreshExpired => "invalid_grant",
            IssuerError::ScopeEscalation => "invalid_scope",
            IssuerError::InvalidPolicy(_) | IssuerError::BadRequest(_) => "invalid_request",
            IssuerError::Storage(_) | IssuerError::Signing(_) => "server_error",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            IssuerError::BadRegistrationToken | IssuerError::BadClientCredentials => 401,
            IssuerError::UnknownClient => 404,
            IssuerError::Storage(_) | IssuerError::Signing(_) => 500,
            _ => 400,
        }
    }

    /// Inverse of [`reason`](Self::reason), used by HTTP clients.
    pub fn from_reason(reason: &str, description: &str) -> IssuerError {
        let d = description.to_string();
        match reason {
            "EmptyScopes" => IssuerError::EmptyScopes,
            "ScopeUniverseEmpty" => IssuerError::ScopeUniverseEmpty,
            "BadRegistrationToken" => IssuerError::BadRegistrationToken,
            "UnknownClient" => IssuerError::UnknownClient,
            "NoScopesApproved" => IssuerError::NoScopesApproved,
            "UnknownCode" => IssuerError::UnknownCode,
            "CodeConsumed" => IssuerError::CodeConsumed,
            "CodeExpired" => IssuerError::CodeExpired,
            "BadClientCredentials" => IssuerError::BadClientCredentials,
            "UnknownHandle" => IssuerError::UnknownHandle,
            "Revoked" => IssuerError::Revoked,
            "RefreshExpired" => IssuerError::RefreshExpired,
            "ScopeEscalation" => IssuerError::ScopeEscalation,
            "NoMatchingPolicy" => IssuerError::NoMatchingPolicy,
            "InvalidPolicy" => IssuerError::InvalidPolicy(d),
            "Storage" => IssuerError::Storage(d),
            "Signing" => IssuerError::Signing(d),
            _ => IssuerError::BadRequest(d),
        }
    }
}

impl From<captoken_core::JournalError> for IssuerError {
    fn from(e: captoken_core::JournalError) -> Self {
        IssuerError::Storage(e.to_string())
    }
}
