//! Prompt construction: a preamble describing the problem, two worked
//! examples, then the current world as coordinate lists.

use std::fmt::Write as _;

use dtmapf_core::observation::window_origin;
use dtmapf_core::{Coord, FOV};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SnapshotAgent, WorldSnapshot};
use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    /// Hard limit on the estimated prompt size, in tokens.
    pub max_tokens: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self { max_tokens: 12_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: String) -> Self {
        Self {
            role: role.into(),
            content,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    /// (question, answer) pairs, simple one first.
    pub examples: Vec<(String, String)>,
    pub query: String,
    /// Set when the obstacle list was cut down to the controlled agents' surroundings.
    pub truncated: bool,
}

impl PromptBundle {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut m = vec![ChatMessage::new("system", self.system.clone())];
        for (q, a) in &self.examples {
            m.push(ChatMessage::new("user", q.clone()));
            m.push(ChatMessage::new("assistant", a.clone()));
        }
        m.push(ChatMessage::new("user", self.query.clone()));
        m
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for m in self.messages() {
            let _ = write!(s, "[{}]\n{}\n", m.role, m.content);
        }
        s
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text().as_bytes()))
    }

    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.text())
    }
}

/// Rough token count: one token per four bytes.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

const SYSTEM: &str = "\
You are coordinating agents in a multi-agent path finding problem on a 4-connected grid.

Environment:
- Cells are written (row, col). Row 0 is the top (north) edge and rows grow southward; column 0 is the left (west) edge and columns grow eastward.
- Obstacle cells can never be entered, and agents cannot leave the grid.
- Every agent has its own goal cell. An agent that reaches its goal is finished and leaves the board.

Actions (one per agent per timestep):
- WAIT: stay in place
- NORTH: row - 1
- EAST: col + 1
- SOUTH: row + 1
- WEST: col - 1

Constraints:
- Two agents may not end a timestep in the same cell.
- Two agents may not swap cells in one timestep.
- A move into an obstacle, off the grid or into a conflict is cancelled and penalised, and the agent stays where it was.
- Agents that you do not control act on their own; assume they may move toward their goals.

Task: choose the next action for each controlled agent so that it gets closer to its goal without collisions. You may reason step by step first. End your reply with the answer block: one line per controlled agent, exactly in the form
agent <id>: <ACTION>
and nothing after it.";

struct Example {
    snapshot: WorldSnapshot,
    controlled: Vec<usize>,
    answer: &'static str,
}

fn agent(id: usize, pos: (i32, i32), goal: (i32, i32)) -> SnapshotAgent {
    SnapshotAgent {
        id,
        pos: Coord::new(pos.0, pos.1),
        goal: Coord::new(goal.0, goal.1),
        done: false,
    }
}

fn examples() -> Vec<Example> {
    let simple = Example {
        snapshot: WorldSnapshot {
            width: 5,
            height: 5,
            obstacles: vec![Coord::new(1, 3), Coord::new(3, 1)],
            agents: vec![agent(0, (2, 1), (2, 4)), agent(1, (0, 0), (4, 4))],
            t: 0,
            done_agents_block: false,
        },
        controlled: vec![0],
        answer: "\
Agent 0 is at (2, 1) and its goal (2, 4) is in the same row, 3 columns to the east.
The cells (2, 2), (2, 3) and (2, 4) are free and no other agent is in that row, so moving east shortens the path by one.

agent 0: EAST",
    };
    // A corridor with one side pocket at (0, 2); the agents face each other.
    let mut obstacles = vec![Coord::new(0, 0), Coord::new(0, 1), Coord::new(0, 3), Coord::new(0, 4)];
    obstacles.extend((0..5).map(|c| Coord::new(2, c)));
    let challenging = Example {
        snapshot: WorldSnapshot {
            width: 5,
            height: 3,
            obstacles,
            agents: vec![agent(0, (1, 1), (1, 4)), agent(1, (1, 3), (1, 0))],
            t: 3,
            done_agents_block: false,
        },
        controlled: vec![0, 1],
        answer: "\
Row 1 is a corridor; the only other free cell is the pocket at (0, 2).
Agent 0 needs to go east to (1, 4) and agent 1 west to (1, 0), so they must pass each other.
A previous attempt moved agent 0 EAST and agent 1 WEST at the same time: both claimed (1, 2), the moves were cancelled and both agents were penalised.
Instead, agent 0 steps to (1, 2) now and into the pocket at (0, 2) next, while agent 1 waits one step and then walks west through the freed corridor.

agent 0: EAST
agent 1: WAIT",
    };
    vec![simple, challenging]
}

fn coord_list(cells: &[Coord]) -> String {
    cells
        .iter()
        .map(|c| format!("({}, {})", c.row, c.col))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Query text for `snapshot` listing the given obstacle cells.
pub fn format_query(
    snapshot: &WorldSnapshot,
    controlled: &[usize],
    obstacles: &[Coord],
    truncated: bool,
) -> String {
    let mut q = String::new();
    let _ = writeln!(q, "Timestep: {}", snapshot.t);
    let _ = writeln!(q, "Grid: {} rows x {} columns", snapshot.height, snapshot.width);
    if truncated {
        let _ = writeln!(
            q,
            "Obstacles near the controlled agents ({} of {} listed; the rest of the map is not shown):",
            obstacles.len(),
            snapshot.obstacles.len()
        );
    } else {
        let _ = writeln!(q, "Obstacles ({}):", obstacles.len());
    }
    let _ = writeln!(q, "{}", if obstacles.is_empty() { "none".to_string() } else { coord_list(obstacles) });
    let _ = writeln!(q, "Agents:");
    for a in &snapshot.agents {
        if a.done {
            let _ = writeln!(q, "agent {} finished at ({}, {})", a.id, a.goal.row, a.goal.col);
        } else {
            let _ = writeln!(
                q,
                "agent {} at ({}, {}), goal ({}, {})",
                a.id, a.pos.row, a.pos.col, a.goal.row, a.goal.col
            );
        }
    }
    let ids: Vec<String> = controlled.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(q, "Controlled agents: {}", ids.join(", "));
    q.push_str("Give the next action for each controlled agent.");
    q
}

/// Obstacles inside the observation windows around each controlled agent.
fn window_obstacles(snapshot: &WorldSnapshot, controlled: &[usize]) -> Vec<Coord> {
    let windows: Vec<Coord> = controlled
        .iter()
        .filter_map(|id| snapshot.agent(*id))
        .map(|a| window_origin(a.pos))
        .collect();
    let fov = FOV as i32;
    snapshot
        .obstacles
        .iter()
        .copied()
        .filter(|c| {
            windows.iter().any(|o| {
                (o.row..o.row + fov).contains(&c.row) && (o.col..o.col + fov).contains(&c.col)
            })
        })
        .collect()
}

/// Builds the prompt. The obstacle list is cut to the controlled agents'
/// surroundings when the full list would exceed the token budget; if that
/// is still too large the call fails.
pub fn build_prompt(
    snapshot: &WorldSnapshot,
    controlled: &[usize],
    config: &PromptConfig,
) -> Result<PromptBundle, HarnessError> {
    if controlled.is_empty() {
        return Err(HarnessError::Prompt("no controlled agents".into()));
    }
    for id in controlled {
        match snapshot.agent(*id) {
            None => return Err(HarnessError::Prompt(format!("agent {id} not in snapshot"))),
            Some(a) if a.done => return Err(HarnessError::Prompt(format!("agent {id} is already done"))),
            _ => {}
        }
    }
    let examples: Vec<(String, String)> = examples()
        .into_iter()
        .map(|e| {
            let q = format_query(&e.snapshot, &e.controlled, &e.snapshot.obstacles, false);
            (q, e.answer.to_string())
        })
        .collect();
    let mut bundle = PromptBundle {
        system: SYSTEM.to_string(),
        examples,
        query: format_query(snapshot, controlled, &snapshot.obstacles, false),
        truncated: false,
    };
    if bundle.estimated_tokens() <= config.max_tokens {
        return Ok(bundle);
    }
    let near = window_obstacles(snapshot, controlled);
    bundle.query = format_query(snapshot, controlled, &near, true);
    bundle.truncated = true;
    let tokens = bundle.estimated_tokens();
    if tokens > config.max_tokens {
        return Err(HarnessError::Prompt(format!(
            "prompt needs about {tokens} tokens after truncation, budget is {}",
            config.max_tokens
        )));
    }
    Ok(bundle)
}
