//! Extraction of the answer block from free-form model output.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use dtmapf_core::Action;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{AdvisorResponse, AgentAdvice};

/// What an agent does when its answer cannot be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFallback {
    #[default]
    Wait,
    /// Let the agent's own policy choose.
    DeferToPolicy,
}

impl ParseFallback {
    fn action(self) -> Option<Action> {
        match self {
            ParseFallback::Wait => Some(Action::Wait),
            ParseFallback::DeferToPolicy => None,
        }
    }
}

fn answer_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^[\s*`-]*agent\s+(\d+)[\s*`]*:[\s*`]*([^\s*`.]+)[\s*`.]*$")
            .expect("static regex")
    })
}

/// Parses the last contiguous run of `agent <id>: <ACTION>` lines. Anything
/// before it (reasoning, earlier drafts) is ignored. Every controlled agent
/// gets either its parsed action or `fallback` with a reason.
pub fn parse_response(text: &str, controlled: &[usize], fallback: ParseFallback) -> AdvisorResponse {
    let lines: Vec<&str> = text.lines().collect();
    let mut block: Vec<(usize, String)> = Vec::new();
    let mut current: Vec<(usize, String)> = Vec::new();
    for line in &lines {
        match answer_line().captures(line) {
            Some(c) => {
                if let Ok(id) = c[1].parse::<usize>() {
                    current.push((id, c[2].to_string()));
                }
            }
            None => {
                if !current.is_empty() {
                    block = std::mem::take(&mut current);
                }
            }
        }
    }
    if !current.is_empty() {
        block = current;
    }

    let mut answers: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (id, word) in block.iter() {
        answers.entry(*id).or_default().push(word.clone());
    }
    let advice = controlled
        .iter()
        .map(|&agent| {
            let parsed = if block.is_empty() {
                Err("no answer block in response".to_string())
            } else {
                match answers.get(&agent).map(Vec::as_slice) {
                    None | Some([]) => Err(format!("agent {agent} missing from answer block")),
                    Some([word]) => Action::from_name(word)
                        .ok_or_else(|| format!("unknown action `{word}` for agent {agent}")),
                    Some(words) => {
                        let first = Action::from_name(&words[0]);
                        if first.is_some() && words.iter().all(|w| Action::from_name(w) == first) {
                            Ok(first.unwrap())
                        } else {
                            Err(format!("conflicting answers for agent {agent}"))
                        }
                    }
                }
            };
            match parsed {
                Ok(action) => AgentAdvice {
                    agent,
                    action: Some(action),
                    fallback: None,
                },
                Err(reason) => AgentAdvice {
                    agent,
                    action: fallback.action(),
                    fallback: Some(reason),
                },
            }
        })
        .collect();
    AdvisorResponse {
        advice,
        raw: Some(text.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markdown_decoration_is_tolerated() {
        let r = parse_response("**agent 3:** `north`.", &[3], ParseFallback::Wait);
        assert_eq!(r.action(3), Some(Action::North));
    }
}
