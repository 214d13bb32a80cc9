//! Capability tokens: path scopes, signed claims, verification, and the
//! enforcement decision used by data services.

pub mod claims;
pub mod clock;
pub mod enforce;
pub mod journal;
pub mod jwt;
pub mod keys;
pub mod metadata;
pub mod scope;
pub mod secret;

pub use claims::{TokenClaims, TokenKind, Timestamp, ANY_AUDIENCE, DEFAULT_ACCESS_LIFETIME, PROFILE_VERSION};
pub use clock::{Clock, SystemClock, VirtualClock};
pub use enforce::{enforce, Decision, DenyReason};
pub use journal::{Journal, JournalError};
pub use jwt::{decode_unverified, sign_token, verify_token, SignError, TrustedIssuers, Verifier, VerifyError};
pub use keys::{Jwk, KeyError, KeyRecord, PrivateJwk, ALGORITHM};
pub use metadata::{discovery_url, IssuerMetadata, DISCOVERY_PATH};
pub use scope::{covers_all, parse_scope, parse_scope_list, scope_permits, Operation, Scope, ScopeError};
pub use secret::{RefreshHandle, TaintSet};
