//! Chat-completion advisor over HTTP.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use dtmapf_core::Action;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::parse::{parse_response, ParseFallback};
use super::prompt::{build_prompt, PromptConfig};
use super::{oracle_advise, Advisor, AdvisorResponse, AgentAdvice, WorldSnapshot};
use crate::error::HarnessError;

pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_API_URL: &str = "LLM_API_URL";

/// What all controlled agents do when no usable reply arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportFallback {
    #[default]
    Oracle,
    Wait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout_ms: u64,
    /// Extra attempts after the first failed one.
    pub retries: u32,
    pub retry_backoff_ms: u64,
    pub parse_fallback: ParseFallback,
    pub transport_fallback: TransportFallback,
    pub prompt: PromptConfig,
    /// JSONL audit log of every call.
    pub log_path: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            api_key: None,
            model: "gpt-4o".into(),
            temperature: 0.0,
            timeout_ms: 30_000,
            retries: 2,
            retry_backoff_ms: 500,
            parse_fallback: ParseFallback::Wait,
            transport_fallback: TransportFallback::Oracle,
            prompt: PromptConfig::default(),
            log_path: None,
        }
    }
}

impl LlmConfig {
    /// Endpoint and key from `LLM_API_URL` and `LLM_API_KEY`.
    pub fn from_env() -> Result<Self, HarnessError> {
        let url = std::env::var(ENV_API_URL)
            .map_err(|_| HarnessError::Config(format!("{ENV_API_URL} is not set")))?;
        Ok(Self {
            url,
            api_key: std::env::var(ENV_API_KEY).ok(),
            ..Self::default()
        })
    }
}

/// One audited call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallLog {
    pub t: u32,
    pub controlled: Vec<usize>,
    pub prompt_sha256: String,
    pub attempts: u32,
    pub latency_ms: u64,
    /// `ok`, `parse_fallback` or `transport_failure`.
    pub outcome: String,
    pub error: Option<String>,
    pub fallbacks: usize,
    pub request: Value,
    pub response: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Retryable(String),
    Fatal(String),
}

pub struct LlmAdvisor {
    pub config: LlmConfig,
    agent: ureq::Agent,
    log: Option<File>,
    pub calls: Vec<CallLog>,
}

impl LlmAdvisor {
    pub fn new(config: LlmConfig) -> Result<Self, HarnessError> {
        if config.url.is_empty() {
            return Err(HarnessError::Config("LLM endpoint URL is empty".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let log = match &config.log_path {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        Ok(Self {
            config,
            agent,
            log,
            calls: Vec::new(),
        })
    }

    fn post(&self, body: &str) -> Result<String, Failure> {
        let mut req = self
            .agent
            .post(&self.config.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::BadUri(_) | ureq::Error::Http(_) => Failure::Fatal(e.to_string()),
            other => Failure::Retryable(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(format!("reading body: {e}")))?;
        match status {
            200..=299 => extract_content(&text).ok_or_else(|| {
                Failure::Fatal(format!("response has no message content: {}", truncate(&text, 200)))
            }),
            429 | 500..=599 => Err(Failure::Retryable(format!("HTTP {status}"))),
            _ => Err(Failure::Fatal(format!("HTTP {status}: {}", truncate(&text, 200)))),
        }
    }

    fn write_log(&mut self, entry: CallLog) {
        if let Some(f) = self.log.as_mut() {
            let line = serde_json::to_string(&entry).unwrap_or_default();
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("advisor log write failed: {e}");
            }
        }
        self.calls.push(entry);
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Message text from an OpenAI-style or Anthropic-style reply.
fn extract_content(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    let openai = v.pointer("/choices/0/message/content").and_then(Value::as_str);
    let anthropic = v.pointer("/content/0/text").and_then(Value::as_str);
    openai.or(anthropic).map(str::to_string)
}

impl Advisor for LlmAdvisor {
    fn name(&self) -> &str {
        "llm"
    }

    fn advise(
        &mut self,
        snapshot: &WorldSnapshot,
        controlled: &[usize],
    ) -> Result<AdvisorResponse, HarnessError> {
        let bundle = build_prompt(snapshot, controlled, &self.config.prompt)?;
        let request = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": bundle.messages(),
        });
        let body = request.to_string();
        let start = Instant::now();
        let mut attempts = 0;
        let mut result = Err(Failure::Fatal("not attempted".into()));
        while attempts <= self.config.retries {
            if attempts > 0 {
                thread::sleep(Duration::from_millis(self.config.retry_backoff_ms * attempts as u64));
            }
            attempts += 1;
            result = self.post(&body);
            match &result {
                Err(Failure::Retryable(e)) => log::debug!("advisor attempt {attempts} failed: {e}"),
                _ => break,
            }
        }
        let latency_ms = start.elapsed().as_millis() as u64;
        let (response, outcome, error, text) = match result {
            Ok(text) => {
                let r = parse_response(&text, controlled, self.config.parse_fallback);
                let outcome = if r.fallback_count() == 0 { "ok" } else { "parse_fallback" };
                (r, outcome, None, Some(text))
            }
            Err(Failure::Retryable(e) | Failure::Fatal(e)) => {
                log::warn!("advisor transport failed after {attempts} attempt(s): {e}");
                (self.transport_fallback(snapshot, controlled, &e), "transport_failure", Some(e), None)
            }
        };
        self.write_log(CallLog {
            t: snapshot.t,
            controlled: controlled.to_vec(),
            prompt_sha256: bundle.sha256(),
            attempts,
            latency_ms,
            outcome: outcome.into(),
            error,
            fallbacks: response.fallback_count(),
            request,
            response: text,
        });
        Ok(response)
    }
}

impl LlmAdvisor {
    fn transport_fallback(&self, snapshot: &WorldSnapshot, controlled: &[usize], error: &str) -> AdvisorResponse {
        let actions: Vec<(usize, Action)> = match self.config.transport_fallback {
            TransportFallback::Oracle => oracle_advise(snapshot, controlled),
            TransportFallback::Wait => controlled.iter().map(|&a| (a, Action::Wait)).collect(),
        };
        AdvisorResponse {
            advice: actions
                .into_iter()
                .map(|(agent, action)| AgentAdvice {
                    agent,
                    action: Some(action),
                    fallback: Some(format!("transport failure: {error}")),
                })
                .collect(),
            raw: None,
        }
    }
}
