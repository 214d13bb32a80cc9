use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use captoken_core::{verify_token, Clock, KeyRecord, RefreshHandle, Scope, VirtualClock};
use captoken_credd::rendezvous::{prepare_directory, QUARANTINE_DIR};
use captoken_credd::{
    bind_control, serve_control, write_deposit, AccessRequest, ControlClient, CredDaemon, CredError, CredentialKey,
    DaemonOptions, Deposit, Exchanged, LocalIssuer, Minted, TokenIssuer,
};
use captoken_issuer::{ClientCredentials, IssuerConfig, IssuerError, PolicyRule, Registration, TokenServer};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

const ISSUER: &str = "https://tokens.example";
const AUD: &str = "https://data.example";

fn s(text: &str) -> Scope {
    text.parse().unwrap()
}

struct World {
    clock: VirtualClock,
    server: Arc<TokenServer>,
    reg: Registration,
}

impl World {
    fn new() -> Self {
        let clock = VirtualClock::new(1_700_000_000);
        let mut cfg = IssuerConfig::new(ISSUER, vec![s("read:/ligo"), s("write:/ligo/out")]);
        cfg.policy.push(PolicyRule::new("*", "group", "ligo", vec![s("read:/ligo"), s("write:/ligo/out")]));
        let server = Arc::new(
            TokenServer::open(
                cfg,
                KeyRecord::from_seed("k1", [3u8; 32]),
                Arc::new(clock.clone()),
                StdRng::seed_from_u64(11),
            )
            .unwrap(),
        );
        let reg = server.register_client("submit-1", &[s("read:/ligo"), s("write:/ligo/out")]).unwrap();
        World { clock, server, reg }
    }

    fn issuer(&self) -> Arc<LocalIssuer> {
        Arc::new(LocalIssuer::new(
            self.server.clone(),
            ClientCredentials {
                client_id: self.reg.client_id.clone(),
                client_secret: self.reg.client_secret.clone(),
            },
        ))
    }

    fn daemon(&self, state_dir: Option<&Path>) -> CredDaemon {
        let options = DaemonOptions {
            state_dir: state_dir.map(Path::to_path_buf),
            ..DaemonOptions::default()
        };
        CredDaemon::open(options, self.issuer(), Arc::new(self.clock.clone())).unwrap()
    }

    fn code(&self) -> String {
        let attrs = BTreeMap::from([("group".to_string(), "ligo".to_string())]);
        self.server
            .authorize("alice", &attrs, &self.reg.client_id, &[s("read:/ligo"), s("write:/ligo/out")])
            .unwrap()
            .code
    }

    fn handle(&self) -> RefreshHandle {
        self.server
            .exchange_code(&self.code(), &self.reg.client_id, &self.reg.client_secret)
            .unwrap()
            .refresh_handle
    }

    fn deposit(&self, handle_name: &str) -> Deposit {
        Deposit {
            user: "alice".into(),
            provider: "osg".into(),
            handle_name: handle_name.into(),
            code: self.code(),
            client_id: self.reg.client_id.clone(),
        }
    }

    fn trust(&self) -> HashMap<String, captoken_core::IssuerMetadata> {
        HashMap::from([(ISSUER.to_string(), self.server.metadata())])
    }
}

fn key() -> CredentialKey {
    CredentialKey::new("alice", "osg", "ligo")
}

fn read_req() -> AccessRequest {
    AccessRequest::new(key(), vec![s("read:/ligo/frames")], AUD)
}

#[tokio::test]
async fn store_refresh_examples() {
    let w = World::new();
    let dir = tempfile::tempdir().unwrap();
    let h1 = w.handle();
    let h2 = w.handle();
    {
        let d = w.daemon(Some(dir.path()));
        d.store_refresh(key(), h1.clone(), vec![s("read:/ligo")]).await.unwrap();
        assert_eq!(d.credential(&key()).unwrap().refresh_handle, h1);
        d.store_refresh(key(), h2.clone(), vec![s("read:/ligo")]).await.unwrap();
        assert_eq!(d.credential(&key()).unwrap().refresh_handle, h2);
        assert!(w.server.refresh_record(&h1).unwrap().revoked);
        assert!(!w.server.refresh_record(&h2).unwrap().revoked);
        assert!(matches!(
            d.store_refresh(CredentialKey::new("", "osg", "x"), h2.clone(), vec![]).await,
            Err(CredError::BadKey(_))
        ));
    }
    let d = w.daemon(Some(dir.path()));
    assert_eq!(d.credential(&key()).unwrap().refresh_handle, h2);
    assert!(d.taint().is_tainted(h2.expose().as_bytes()));
    assert!(d.get_access(&read_req()).await.is_ok());
}

#[tokio::test]
async fn get_access_examples() {
    let w = World::new();
    let d = w.daemon(None);
    assert_eq!(d.get_access(&read_req()).await.unwrap_err(), CredError::UnknownCredential);
    d.store_refresh(key(), w.handle(), vec![s("read:/ligo")]).await.unwrap();

    let t1 = d.get_access(&read_req()).await.unwrap();
    w.clock.advance(30);
    let t2 = d.get_access(&read_req()).await.unwrap();
    assert_eq!(t1, t2);
    assert_eq!(d.issuer_round_trips(), 1);

    let a = d.get_access(&read_req().with_origin("node-a")).await.unwrap();
    let b = d.get_access(&read_req().with_origin("node-b")).await.unwrap();
    assert_ne!(a, t1);
    assert_ne!(a, b);
    let claims = verify_token(&b, &w.trust(), AUD, w.clock.now()).unwrap();
    assert_eq!(claims.origin.as_deref(), Some("node-b"));

    d.revoke_credential(&key()).await.unwrap();
    assert_eq!(
        d.get_access(&read_req()).await.unwrap_err(),
        CredError::Issuer(IssuerError::Revoked)
    );
    assert!(d.is_degraded(&key()));
    assert_eq!(d.credential_count(), 1);
}

#[tokio::test]
async fn server_side_revocation_surfaces_on_next_mint() {
    let w = World::new();
    let d = w.daemon(None);
    let h = w.handle();
    d.store_refresh(key(), h.clone(), vec![s("read:/ligo")]).await.unwrap();
    d.get_access(&read_req()).await.unwrap();
    w.server.revoke(h.expose(), &w.reg.client_id, &w.reg.client_secret).unwrap();
    let other = AccessRequest::new(key(), vec![s("read:/ligo/other")], AUD);
    assert_eq!(d.get_access(&other).await.unwrap_err(), CredError::Issuer(IssuerError::Revoked));
}

#[tokio::test]
async fn escalation_is_propagated() {
    let w = World::new();
    let d = w.daemon(None);
    d.store_refresh(key(), w.handle(), vec![s("read:/ligo")]).await.unwrap();
    let req = AccessRequest::new(key(), vec![s("read:/virgo")], AUD);
    assert_eq!(
        d.get_access(&req).await.unwrap_err(),
        CredError::Issuer(IssuerError::ScopeEscalation)
    );
    assert!(!d.is_degraded(&key()));
}

#[tokio::test]
async fn min_remaining_and_minted_after() {
    let w = World::new();
    let d = w.daemon(None);
    d.store_refresh(key(), w.handle(), vec![s("read:/ligo")]).await.unwrap();
    let t1 = d.get_access(&read_req()).await.unwrap();
    w.clock.advance(500);
    // 100 s left; asking for 200 forces a re-mint.
    let t2 = d.get_access(&read_req().with_min_remaining(200)).await.unwrap();
    assert_ne!(t1, t2);
    let t3 = d.get_access(&read_req().minted_after(w.clock.now() + 1)).await;
    assert_ne!(t3.unwrap(), t2);
    assert_eq!(
        d.get_access(&read_req().with_min_remaining(601)).await.unwrap_err(),
        CredError::InsufficientLifetime
    );
}

struct SlowIssuer {
    inner: Arc<LocalIssuer>,
    calls: AtomicUsize,
}

#[async_trait]
impl TokenIssuer for SlowIssuer {
    fn client_id(&self) -> &str {
        self.inner.client_id()
    }
    async fn exchange_code(&self, code: &str) -> Result<Exchanged, CredError> {
        self.inner.exchange_code(code).await
    }
    async fn refresh(
        &self,
        handle: &RefreshHandle,
        scopes: &[Scope],
        audience: &str,
        origin: Option<&str>,
    ) -> Result<Minted, CredError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        tokio::time::sleep(Duration::from_millis(50)).await;
        self.inner.refresh(handle, scopes, audience, origin).await
    }
    async fn revoke(&self, handle: &RefreshHandle) -> Result<(), CredError> {
        self.inner.revoke(handle).await
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_share_one_round_trip() {
    let w = World::new();
    let slow = Arc::new(SlowIssuer {
        inner: w.issuer(),
        calls: AtomicUsize::new(0),
    });
    let d = Arc::new(CredDaemon::open(DaemonOptions::default(), slow.clone(), Arc::new(w.clock.clone())).unwrap());
    d.store_refresh(key(), w.handle(), vec![s("read:/ligo")]).await.unwrap();
    let mut tasks = Vec::new();
    for i in 0..24 {
        let d = d.clone();
        tasks.push(tokio::spawn(async move {
            let req = if i % 2 == 0 { read_req() } else { read_req().with_origin("n1") };
            d.get_access(&req).await.unwrap()
        }));
    }
    let mut tokens = std::collections::BTreeSet::new();
    for t in tasks {
        tokens.insert(t.await.unwrap());
    }
    assert_eq!(tokens.len(), 2);
    assert_eq!(slow.calls.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn refresh_tick_examples() {
    let w = World::new();
    let d = w.daemon(None);
    assert_eq!(d.refresh_tick(w.clock.now()).await.refreshed, vec![]);

    d.store_refresh(key(), w.handle(), vec![s("read:/ligo")]).await.unwrap();
    let other = CredentialKey::new("alice", "osg", "second");
    d.store_refresh(other.clone(), w.handle(), vec![s("read:/ligo")]).await.unwrap();
    let t1 = d.get_access(&read_req()).await.unwrap();
    w.clock.advance(540);
    let t_other = d.get_access(&AccessRequest::new(other.clone(), vec![], AUD)).await.unwrap();

    // key(): 60 of 600 s left (10%); other: fresh.
    let report = d.refresh_tick(w.clock.now()).await;
    assert_eq!(report.refreshed, vec![key()]);
    assert!(report.degraded.is_empty());
    let t2 = d.get_access(&read_req()).await.unwrap();
    assert_ne!(t1, t2);
    assert_eq!(d.get_access(&AccessRequest::new(other.clone(), vec![], AUD)).await.unwrap(), t_other);

    d.revoke_credential(&other).await.unwrap();
    d.get_access(&read_req()).await.unwrap();
    // Revoked at the issuer without the daemon knowing.
    let h = d.credential(&key()).unwrap().refresh_handle;
    w.server.revoke(h.expose(), &w.reg.client_id, &w.reg.client_secret).unwrap();
    w.clock.advance(550);
    let report = d.refresh_tick(w.clock.now()).await;
    assert_eq!(report.degraded, vec![key()]);
    assert!(d.is_degraded(&key()));
    assert!(d.credential(&key()).is_some());
}

#[tokio::test]
async fn expired_entries_are_evicted() {
    let w = World::new();
    let d = w.daemon(None);
    d.store_refresh(key(), w.handle(), vec![s("read:/ligo")]).await.unwrap();
    d.get_access(&read_req()).await.unwrap();
    w.clock.advance(601);
    let report = d.refresh_tick(w.clock.now()).await;
    assert_eq!(report.evicted, 1);
    assert!(report.refreshed.is_empty());
    assert_eq!(d.cached_count(), 0);
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[tokio::test]
async fn rendezvous_pickup_examples() {
    let w = World::new();
    let d = w.daemon(None);
    let dir = tempfile::tempdir().unwrap();
    let drop_box = dir.path().join("rv");
    prepare_directory(&drop_box).unwrap();

    let empty = d.rendezvous_pickup(&drop_box).await.unwrap();
    assert!(empty.stored.is_empty() && empty.quarantined.is_empty());

    write_deposit(&drop_box, &w.deposit("ligo")).unwrap();
    let report = d.rendezvous_pickup(&drop_box).await.unwrap();
    assert_eq!(report.stored.len(), 1);
    assert_eq!(report.stored[0].key, key());
    assert!(files(&drop_box).is_empty());
    assert!(d.get_access(&read_req()).await.is_ok());

    let consumed = w.deposit("again");
    w.server
        .exchange_code(&consumed.code, &w.reg.client_id, &w.reg.client_secret)
        .unwrap();
    let f = write_deposit(&drop_box, &consumed).unwrap();
    let name = f.file_name().unwrap().to_string_lossy().into_owned();
    let report = d.rendezvous_pickup(&drop_box).await.unwrap();
    assert!(report.stored.is_empty());
    assert_eq!(report.quarantined[0].reason, "CodeConsumed");
    let qdir = drop_box.join(QUARANTINE_DIR);
    assert_eq!(files(&qdir), vec![name.clone(), format!("{name}.reason")]);
    assert_eq!(files(&drop_box), vec![QUARANTINE_DIR.to_string()]);
}

#[tokio::test]
async fn rendezvous_atomicity_over_mixed_deposits() {
    let w = World::new();
    let d = w.daemon(None);
    let dir = tempfile::tempdir().unwrap();
    prepare_directory(dir.path()).unwrap();
    let mut expected_ok = 0;
    let mut all = Vec::new();
    for i in 0..12 {
        let path = match i % 4 {
            0 => {
                expected_ok += 1;
                write_deposit(dir.path(), &w.deposit(&format!("h{i}"))).unwrap()
            }
            1 => {
                let p = dir.path().join(format!("junk{i}.json"));
                std::fs::write(&p, b"{\"user\":").unwrap();
                p
            }
            2 => {
                let mut dep = w.deposit(&format!("h{i}"));
                dep.client_id = "someone-else".into();
                write_deposit(dir.path(), &dep).unwrap()
            }
            _ => {
                let mut dep = w.deposit(&format!("h{i}"));
                dep.code = "forged".into();
                write_deposit(dir.path(), &dep).unwrap()
            }
        };
        all.push(path.file_name().unwrap().to_string_lossy().into_owned());
    }
    let report = d.rendezvous_pickup(dir.path()).await.unwrap();
    assert_eq!(report.stored.len(), expected_ok);
    assert_eq!(report.stored.len() + report.quarantined.len(), all.len());
    let qdir = dir.path().join(QUARANTINE_DIR);
    for name in &all {
        let in_drop = dir.path().join(name).exists();
        let in_q = qdir.join(name).exists();
        assert!(!in_drop, "{name} still pending");
        let was_stored = !in_q;
        assert_eq!(was_stored, !report.quarantined.iter().any(|q| &q.file == name));
    }
    let reasons: std::collections::BTreeSet<String> = report.quarantined.iter().map(|q| q.reason.clone()).collect();
    assert_eq!(
        reasons,
        ["BadRequest", "UnknownClient", "UnknownCode"].map(String::from).into_iter().collect()
    );
}

#[tokio::test]
async fn rendezvous_rejects_open_directory() {
    use std::os::unix::fs::PermissionsExt;
    let w = World::new();
    let d = w.daemon(None);
    let dir = tempfile::tempdir().unwrap();
    std::fs::set_permissions(dir.path(), std::fs::Permissions::from_mode(0o755)).unwrap();
    assert!(matches!(
        d.rendezvous_pickup(dir.path()).await,
        Err(CredError::DirectoryUnreadable(_))
    ));
}

#[tokio::test]
async fn control_socket_round_trip() {
    let w = World::new();
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("credd.sock");
    let d = Arc::new(w.daemon(None));
    let listener = bind_control(&sock).unwrap();
    let server = tokio::spawn(serve_control(listener, d.clone()));
    let client = ControlClient::new(&sock);

    let handle = w.handle();
    let fp = client.store(key(), handle.clone(), vec![s("read:/ligo")]).await.unwrap();
    assert_eq!(fp, handle.fingerprint());
    let token = client.get_access(read_req()).await.unwrap();
    assert!(verify_token(&token, &w.trust(), AUD, w.clock.now()).is_ok());
    assert_eq!(client.get_access(read_req()).await.unwrap(), token);

    let listed = client.list().await.unwrap();
    assert_eq!(listed.len(), 1);
    let raw = serde_json::to_string(&listed).unwrap();
    assert!(!raw.contains(handle.expose()));

    let missing = AccessRequest::new(CredentialKey::new("bob", "osg", "x"), vec![], AUD);
    assert_eq!(client.get_access(missing).await.unwrap_err(), CredError::UnknownCredential);
    assert!(client.delete(key()).await.unwrap());
    assert!(!client.delete(key()).await.unwrap());
    assert!(w.server.refresh_record(&handle).unwrap().revoked);

    let bad = client
        .call(&serde_json::from_str(r#"{"op":"LIST"}"#).unwrap())
        .await
        .unwrap();
    assert!(bad.ok);
    server.abort();
}

#[tokio::test]
async fn store_is_monotone() {
    let w = World::new();
    let d = w.daemon(None);
    let mut last = 0;
    for i in 0..20 {
        let k = CredentialKey::new("alice", "osg", format!("h{}", i % 7));
        d.store_refresh(k.clone(), w.handle(), vec![s("read:/ligo")]).await.unwrap();
        if i % 5 == 4 {
            d.revoke_credential(&k).await.unwrap();
        }
        let _ = d.refresh_tick(w.clock.now()).await;
        assert!(d.credential_count() >= last);
        last = d.credential_count();
    }
    assert_eq!(last, 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn cached_tokens_satisfy_min_remaining(steps in prop::collection::vec((0i64..400, 1i64..600, 0usize..3), 1..25)) {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        rt.block_on(async {
            let w = World::new();
            let d = w.daemon(None);
            d.store_refresh(key(), w.handle(), vec![s("read:/ligo")]).await.unwrap();
            let scopes = [s("read:/ligo"), s("read:/ligo/a"), s("write:/ligo/out")];
            for (advance, min_remaining, which) in steps {
                w.clock.advance(advance);
                let req = AccessRequest::new(key(), vec![scopes[which].clone()], AUD).with_min_remaining(min_remaining);
                let token = d.get_access(&req).await.unwrap();
                let later = w.clock.now() + min_remaining - 1;
                let claims = verify_token(&token, &w.trust(), AUD, later).unwrap();
                assert_eq!(claims.scopes, vec![scopes[which].clone()]);
            }
        });
    }
}
