use std::path::PathBuf;

use captoken_sim::{run_scenario, Report, ScenarioParseError, SimError};

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

async fn run(name: &str) -> Report {
    run_scenario(&bundled(name)).await.unwrap()
}

fn assert_passed(r: &Report) {
    let failed: Vec<_> = r.checks.iter().filter(|c| !c.passed).collect();
    assert!(r.passed && failed.is_empty(), "{}: {failed:?}", r.scenario);
}

#[tokio::test]
async fn nominal_completes_every_job() {
    let r = run("nominal.toml").await;
    assert_passed(&r);
    for job in &r.jobs {
        assert_eq!(job.status.to_string(), "completed");
        assert!(job.distinct_tokens >= 3, "{job:?}");
    }
    assert!(r.containment.handles >= 2);
    assert!(r.containment.remote_messages > 0);
    assert_eq!(r.containment.remote_hits, 0);
    assert!(!r.origin_probes.is_empty());
}

#[tokio::test]
async fn revoke_midjob_holds_with_revoked() {
    let r = run("revoke_midjob.toml").await;
    assert_passed(&r);
    let job = r.job("ligo-1").unwrap();
    assert_eq!(job.status.to_string(), "held(Revoked)");
    assert_eq!(job.holds.len(), 1);
    assert_eq!(job.holds[0].step.to_string(), "stage_out");
    assert_eq!(job.tokens.stage_out, 0);
}

#[tokio::test]
async fn restart_credd_replays_and_completes() {
    let r = run("restart_credd.toml").await;
    assert_passed(&r);
    assert_eq!(r.restarts.len(), 1);
    assert_eq!(r.restarts[0].before, 2);
    assert_eq!(r.restarts[0].after, 2);
    assert!(r.restarts[0].lost.is_empty());
    assert_eq!(r.job("ligo-1").unwrap().status.to_string(), "completed");
}

#[tokio::test]
async fn forced_refresh_renews_inside_the_execute_phase() {
    let r = run("forced_refresh.toml").await;
    assert_passed(&r);
    let job = r.job("ligo-1").unwrap();
    assert!(job.tokens.execute >= 2, "{job:?}");
    assert!(r.check("phase_gating").unwrap().passed);
}

#[tokio::test]
async fn policy_fix_release_proceeds() {
    let r = run("policy_fix.toml").await;
    assert_passed(&r);
    let job = r.job("virgo-1").unwrap();
    assert_eq!(job.status.to_string(), "completed");
    assert_eq!(job.holds.len(), 1);
    assert_eq!(job.holds[0].reason, "NoScopesApproved");
}

#[tokio::test]
async fn reports_are_deterministic() {
    for name in ["nominal.toml", "forced_refresh.toml", "restart_credd.toml"] {
        let a = run(name).await;
        let b = run(name).await;
        assert_eq!(a.transcript.digest, b.transcript.digest, "{name}");
        assert_eq!(a.to_json(), b.to_json(), "{name}");
    }
}

#[tokio::test]
async fn unreadable_scenarios_are_parse_errors() {
    let missing = run_scenario(&bundled("does-not-exist.toml")).await;
    assert!(matches!(missing, Err(SimError::Parse(ScenarioParseError::Io { .. }))));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\n[[jobs]]\njob_id = \"j\"\nuser = \"ghost\"\nexecute = [\"read:/a\"]\n").unwrap();
    assert!(matches!(run_scenario(&bad).await, Err(SimError::Parse(ScenarioParseError::Invalid(_)))));
}
