use dtmapf_core::EnvError;
use dtmapf_model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("prompt: {0}")]
    Prompt(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("agent {agent} is advisor-controlled at t={t} but no advisor is attached")]
    NoAdvisor { agent: usize, t: u32 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
