//! Deterministic end-to-end simulation: jobs are submitted, acquire
//! credentials through the authorization flow, and run three phases
//! against a data gateway with phase-scoped access tokens, while every
//! cross-domain message is recorded for invariant checks.

pub mod engine;
pub mod job;
pub mod recording;
pub mod report;
pub mod scenario;
pub mod stack;
pub mod transcript;

use std::path::Path;

pub use engine::{ProbeRecord, RestartRecord, SimError, Simulation, REPLAY_ORIGIN};
pub use job::{HoldRecord, JobState, JobStatus, Phase, Step, TokenRecord};
pub use report::{Check, JobReport, Report};
pub use scenario::{Fault, FaultAction, JobSpec, Scenario, ScenarioParseError};
pub use stack::{DataReply, Stack, ISSUER_ID};
pub use transcript::{Domain, Message, Transcript};

/// Boots the services, runs the scenario to quiescence and reports.
pub async fn run_scenario(path: &Path) -> Result<Report, SimError> {
    let scenario = Scenario::load(path)?;
    run_loaded(scenario).await
}

pub async fn run_loaded(scenario: Scenario) -> Result<Report, SimError> {
    let mut sim = Simulation::boot(scenario).await?;
    sim.run().await?;
    Ok(sim.report())
}
