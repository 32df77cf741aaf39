//! JSON files for problem instances and plans.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, EnvError};
use crate::grid::{AgentTask, GridMap};
use crate::planner::JointPlan;

/// Map plus agent tasks. The map is stored as text rows for readability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub map: Vec<String>,
    pub agents: Vec<AgentTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ProblemFile {
    pub fn new(map: &GridMap, agents: &[AgentTask], seed: Option<u64>) -> Self {
        Self {
            map: map.to_ascii().lines().map(str::to_owned).collect(),
            agents: agents.to_vec(),
            seed,
        }
    }

    pub fn grid(&self) -> Result<GridMap, EnvError> {
        let map = GridMap::parse_ascii(&self.map.join("\n"))?;
        for (i, a) in self.agents.iter().enumerate() {
            for c in [a.start, a.goal] {
                if !map.is_free(c) {
                    return Err(EnvError::InvalidInstance(format!(
                        "agent {i}: cell {c} is blocked or out of bounds"
                    )));
                }
            }
        }
        Ok(map)
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn load_problem(path: &Path) -> Result<(GridMap, Vec<AgentTask>), DatasetError> {
    let file: ProblemFile = load_json(path)?;
    let map = file.grid()?;
    Ok((map, file.agents))
}

pub fn load_plan(path: &Path) -> Result<JointPlan, DatasetError> {
    let plan: JointPlan = load_json(path)?;
    if !plan.is_consistent() {
        return Err(DatasetError::Format("plan costs disagree with its paths".into()));
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Coord;

    #[test]
    fn problem_round_trip() {
        let map = GridMap::parse_ascii("..#\n...\n").unwrap();
        let agents = vec![AgentTask {
            start: Coord::new(0, 0),
            goal: Coord::new(1, 2),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_json(&path, &ProblemFile::new(&map, &agents, Some(3))).unwrap();
        let (m, a) = load_problem(&path).unwrap();
        assert_eq!(m, map);
        assert_eq!(a, agents);
    }

    #[test]
    fn blocked_start_is_rejected() {
        let file = ProblemFile {
            map: vec!["#.".into()],
            agents: vec![AgentTask {
                start: Coord::new(0, 0),
                goal: Coord::new(0, 1),
            }],
            seed: None,
        };
        assert!(file.grid().is_err());
    }
}
