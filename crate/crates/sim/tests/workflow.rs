use captoken_core::Scope;
use captoken_issuer::PolicyRule;
use captoken_sim::report::{hold_correctness_check, phase_gating_check};
use captoken_sim::{JobSpec, JobStatus, Phase, Scenario, SimError, Simulation, REPLAY_ORIGIN};
use proptest::prelude::*;

fn scenario(access_lifetime: i64, extra: &str) -> Scenario {
    Scenario::parse(&format!(
        r#"
name = "api"
seed = 11

[services]
access_lifetime = {access_lifetime}
nodes = ["exec-node-1"]

[[services.policy]]
attribute_key = "group"
attribute_value = "ligo"
scopes = ["read:/ligo", "write:/ligo/results"]

[[users]]
name = "alice"
attributes = {{ group = "ligo" }}

[[users]]
name = "bob"
attributes = {{ group = "virgo" }}
{extra}
"#
    ))
    .unwrap()
}

const SEEDED: &str = r#"
[[credentials]]
user = "alice"
scopes = ["read:/ligo", "write:/ligo/results"]
"#;

fn scopes(list: &[&str]) -> Vec<Scope> {
    list.iter().map(|s| s.parse().unwrap()).collect()
}

fn ligo_job(id: &str) -> JobSpec {
    let mut spec = JobSpec::new(id, "alice");
    spec.stage_in_scopes = scopes(&["read:/ligo/frames/f1"]);
    spec.execute_scopes = scopes(&["read:/ligo/calib/c1"]);
    spec.stage_out_scopes = scopes(&["write:/ligo/results"]);
    spec
}

fn count(state: &captoken_sim::JobState, kind: &str) -> usize {
    state.transcript.iter().filter(|m| m.kind == kind).count()
}

#[tokio::test]
async fn covered_submission_is_a_cache_hit() {
    let mut sim = Simulation::boot(scenario(600, SEEDED)).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    let state = sim.job(&id).unwrap();
    assert_eq!(state.status, JobStatus::Idle);
    assert_eq!(count(&state, "authorize"), 0);
    assert_eq!(count(&state, "deposit"), 0);
}

#[tokio::test]
async fn insufficient_credential_holds_at_submit() {
    let mut sim = Simulation::boot(scenario(600, SEEDED)).await.unwrap();
    let mut spec = ligo_job("j1");
    spec.stage_out_scopes = scopes(&["write:/other"]);
    let id = sim.submit_job(spec).await.unwrap();
    let state = sim.job(&id).unwrap();
    assert_eq!(state.status, JobStatus::Held("NoScopesApproved".into()));
    assert_eq!(count(&state, "authorize"), 0);
}

#[tokio::test]
async fn first_submission_runs_one_authorization_flow() {
    let mut sim = Simulation::boot(scenario(600, "")).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    let state = sim.job(&id).unwrap();
    assert_eq!(state.status, JobStatus::Idle);
    let all = sim.stack().transcript.messages();
    assert_eq!(all.iter().filter(|m| m.kind == "authorize").count(), 1);
    assert_eq!(all.iter().filter(|m| m.kind == "token_exchange").count(), 1);
    assert_eq!(sim.stack().daemon().credential_count(), 1);

    // A second job for the same credential reuses it.
    let id2 = sim.submit_job(ligo_job("j2")).await.unwrap();
    assert_eq!(count(&sim.job(&id2).unwrap(), "authorize"), 0);
}

#[tokio::test]
async fn unknown_user_and_duplicate_ids_are_rejected() {
    let mut sim = Simulation::boot(scenario(600, SEEDED)).await.unwrap();
    let mut ghost = ligo_job("g");
    ghost.user = "ghost".into();
    assert!(matches!(sim.submit_job(ghost).await, Err(SimError::InvalidJob(_))));
    sim.submit_job(ligo_job("j1")).await.unwrap();
    assert!(matches!(sim.submit_job(ligo_job("j1")).await, Err(SimError::InvalidJob(_))));
}

#[tokio::test]
async fn nominal_job_uses_one_token_set_per_phase() {
    let mut sim = Simulation::boot(scenario(600, SEEDED)).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    let state = sim.run_job(&id).await.unwrap();
    assert_eq!(state.status, JobStatus::Completed);
    assert!(state.distinct_tokens() >= 3);
    for phase in Phase::ALL {
        assert_eq!(state.tokens_in(phase), 1, "{phase}");
    }
    assert!(state.tokens.iter().all(|t| t.origin.as_deref() == Some("exec-node-1")));
    let out = sim.stack().sandbox.join("ligo/results/j1.out");
    assert_eq!(std::fs::read_to_string(out).unwrap(), "output of j1 on exec-node-1\n");
}

#[tokio::test]
async fn stage_out_tokens_are_minted_after_stage_out_begins() {
    let mut sim = Simulation::boot(scenario(600, SEEDED)).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    let state = sim.run_job(&id).await.unwrap();
    let stage_out_start = state
        .transcript
        .iter()
        .find(|m| m.kind == "phase_start" && m.payload.contains("stage_out"))
        .unwrap()
        .at;
    let first_stage_out_delivery = state
        .transcript
        .iter()
        .position(|m| m.kind == "token_delivery" && m.payload.contains("stage_out"))
        .unwrap();
    let start_pos = state
        .transcript
        .iter()
        .position(|m| m.kind == "phase_start" && m.payload.contains("stage_out"))
        .unwrap();
    assert!(start_pos < first_stage_out_delivery);
    for t in state.tokens.iter().filter(|t| t.phase == Phase::StageOut) {
        assert!(t.issued_at >= stage_out_start);
    }
    assert!(phase_gating_check(&sim.stack().transcript.messages()).passed);
}

#[tokio::test]
async fn short_lived_tokens_are_renewed_mid_phase() {
    let mut sim = Simulation::boot(scenario(40, SEEDED)).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    let state = sim.run_job(&id).await.unwrap();
    assert_eq!(state.status, JobStatus::Completed);
    assert!(state.tokens_in(Phase::Execute) >= 2, "{:?}", state.tokens);
}

#[tokio::test]
async fn revocation_holds_at_the_next_token_request() {
    let mut sim = Simulation::boot(scenario(600, SEEDED)).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    while sim.job(&id).unwrap().status != JobStatus::Running {
        sim.step().await.unwrap();
    }
    sim.revoke("alice", "default").await.unwrap();
    let revoked_at = sim.stack().transcript.len();
    let state = sim.run_job(&id).await.unwrap();
    assert_eq!(state.status, JobStatus::Held("Revoked".into()));
    let after: Vec<_> = sim.stack().transcript.messages()[revoked_at..]
        .iter()
        .filter(|m| m.job.as_deref() == Some("j1") && m.kind == "get_access_response")
        .cloned()
        .collect();
    assert_eq!(after.len(), 1, "held at the first request after revocation");
    assert!(after[0].payload.contains("Revoked"));

    // Nothing fixed: releasing retries once and holds again.
    let again = sim.release_job(&id).await.unwrap();
    assert_eq!(again.status, JobStatus::Held("Revoked".into()));
    assert_eq!(again.holds.len(), 2);
    let check = hold_correctness_check(&sim.jobs(), &sim.stack().transcript.messages());
    assert!(check.passed, "{check:?}");
}

#[tokio::test]
async fn release_after_policy_fix_proceeds() {
    let mut sim = Simulation::boot(scenario(600, "")).await.unwrap();
    let mut spec = JobSpec::new("v1", "bob");
    spec.stage_in_scopes = scopes(&["read:/virgo/f1"]);
    spec.execute_scopes = scopes(&["read:/virgo/f1"]);
    spec.stage_out_scopes = scopes(&["write:/virgo/out"]);
    let id = sim.submit_job(spec).await.unwrap();
    assert_eq!(sim.job(&id).unwrap().status, JobStatus::Held("NoScopesApproved".into()));

    sim.add_rule(PolicyRule::new(
        "*",
        "group",
        "virgo",
        scopes(&["read:/virgo", "write:/virgo/out"]),
    ))
    .unwrap();
    let released = sim.release_job(&id).await.unwrap();
    assert_eq!(released.status, JobStatus::Idle);
    assert_eq!(sim.run_job(&id).await.unwrap().status, JobStatus::Completed);
}

#[tokio::test]
async fn release_of_a_running_job_is_refused() {
    let mut sim = Simulation::boot(scenario(600, SEEDED)).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    sim.step().await.unwrap();
    assert!(matches!(sim.release_job(&id).await, Err(SimError::NotHeld(_))));
    assert!(matches!(sim.release_job("nope").await, Err(SimError::UnknownJob(_))));
}

#[tokio::test]
async fn execute_tokens_are_bound_to_their_node() {
    let mut sim = Simulation::boot(scenario(600, SEEDED)).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    while sim.job(&id).unwrap().status != JobStatus::Running {
        sim.step().await.unwrap();
    }
    let token = sim.current_token(&id).unwrap();
    let denied = sim.replay(&token, "/ligo/calib/c1", Some(REPLAY_ORIGIN)).await;
    assert_eq!((denied.status, denied.reason.as_deref()), (403, Some("OriginMismatch")));
    let allowed = sim.replay(&token, "/ligo/calib/c1", Some("exec-node-1")).await;
    assert_eq!(allowed.status, 200);
    assert_eq!(sim.report().check("origin_binding").unwrap().detail, "1 replays denied with OriginMismatch");
}

#[tokio::test]
async fn key_rotation_keeps_jobs_running() {
    let mut sim = Simulation::boot(scenario(600, SEEDED)).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    sim.step().await.unwrap();
    sim.rotate_keys(false).await.unwrap();
    assert_eq!(sim.run_job(&id).await.unwrap().status, JobStatus::Completed);

    // Dropping the old key strands the token the job already holds.
    let id2 = sim.submit_job(ligo_job("j2")).await.unwrap();
    let mut spec = ligo_job("j3");
    spec.stage_in_scopes = scopes(&["read:/ligo/frames/f1", "read:/ligo/frames/f2"]);
    spec.phase_durations = [40, 10, 10];
    let id3 = sim.submit_job(spec).await.unwrap();
    sim.step().await.unwrap();
    sim.rotate_keys(true).await.unwrap();
    assert_eq!(sim.run_job(&id3).await.unwrap().status, JobStatus::Held("UnknownKey".into()));
    let _ = sim.run_job(&id2).await.unwrap();
}

#[tokio::test]
async fn restart_keeps_credentials_and_jobs() {
    let mut sim = Simulation::boot(scenario(60, SEEDED)).await.unwrap();
    let id = sim.submit_job(ligo_job("j1")).await.unwrap();
    sim.step().await.unwrap();
    sim.step().await.unwrap();
    let record = sim.restart_credd().await.unwrap();
    assert_eq!((record.before, record.after), (1, 1));
    assert!(record.lost.is_empty());
    assert_eq!(sim.run_job(&id).await.unwrap().status, JobStatus::Completed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Liveness under expiry: with tokens living at least two steps, a job
    /// with a valid credential completes, whatever its phase lengths.
    #[test]
    fn jobs_with_valid_credentials_complete(
        lifetime in 20i64..400,
        durations in prop::array::uniform3(0i64..150),
        restrict in any::<bool>(),
    ) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let (state, report) = rt.block_on(async {
            let mut sim = Simulation::boot(scenario(lifetime, SEEDED)).await.unwrap();
            let mut spec = ligo_job("p1");
            spec.phase_durations = durations;
            spec.restrict_origin = restrict;
            let id = sim.submit_job(spec).await.unwrap();
            let state = sim.run_job(&id).await.unwrap();
            (state, sim.report())
        });
        prop_assert_eq!(&state.status, &JobStatus::Completed);
        prop_assert!(report.passed, "{:?}", report.checks);
        // Every request carried a token that had not yet expired.
        for m in state.transcript.iter().filter(|m| m.kind == "data_request") {
            let body: serde_json::Value = serde_json::from_str(&m.payload).unwrap();
            let token = body["authorization"].as_str().unwrap().trim_start_matches("Bearer ");
            let (_, claims) = captoken_core::decode_unverified(token).unwrap();
            prop_assert!(claims["exp"].as_i64().unwrap() > m.at);
        }
        if durations[1] >= lifetime + 10 {
            prop_assert!(state.tokens_in(Phase::Execute) >= 2, "{:?}", state.tokens);
        }
    }
}
