//! Episode execution for decentralized grid path finding: per-agent policies,
//! full-observability advisors (a shortest-path oracle and an LLM client),
//! and the static-rescue and dynamic goal-change evaluation protocols.

pub mod advisor;
pub mod error;
pub mod eval;
pub mod policy;
pub mod runner;
pub mod scenario;

pub use advisor::{
    oracle_advise, Advisor, AdvisorResponse, AgentAdvice, OracleAdvisor, WorldSnapshot,
};
pub use error::HarnessError;
pub use policy::{DtPolicy, DtPolicyConfig, Policy, PolicyError, ScriptedPolicy, WaitPolicy};
pub use runner::{run_episode, EpisodeHooks, NoHooks, StepControl};
pub use scenario::{
    make_scenario, run_dynamic_episode, run_static_with_rescue, t_change_for_size,
    GoalChangeEvent, ScenarioConfig, ScenarioMode,
};
