//! Local 4-channel views of the world.

use serde::{Deserialize, Serialize};

use crate::env::{WorldState, FOV};
use crate::grid::Coord;

pub const CHANNELS: usize = 4;
pub const OBS_CELLS: usize = CHANNELS * FOV * FOV;
/// Packed size in bytes of one observation (400 bits).
pub const PACKED_OBS_BYTES: usize = OBS_CELLS / 8;
/// Local cell of the observing agent inside its window.
pub const CENTER: i32 = 5;

pub const CH_AGENTS: usize = 0;
pub const CH_OWN_GOAL: usize = 1;
pub const CH_OTHER_GOALS: usize = 2;
pub const CH_OBSTACLES: usize = 3;

/// Four binary `FOV x FOV` planes, channel-major then row-major.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    #[serde(with = "packed_serde")]
    cells: [u8; OBS_CELLS],
}

impl std::fmt::Debug for Observation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Observation {{")?;
        for r in 0..FOV {
            for ch in 0..CHANNELS {
                for c in 0..FOV {
                    write!(f, "{}", self.get(ch, r, c) as u8)?;
                }
                write!(f, "  ")?;
            }
            writeln!(f)?;
        }
        write!(f, "}}")
    }
}

impl Default for Observation {
    fn default() -> Self {
        Self::zeros()
    }
}

impl Observation {
    pub fn zeros() -> Self {
        Self {
            cells: [0; OBS_CELLS],
        }
    }

    fn offset(ch: usize, r: usize, c: usize) -> usize {
        ch * FOV * FOV + r * FOV + c
    }

    pub fn get(&self, ch: usize, r: usize, c: usize) -> bool {
        self.cells[Self::offset(ch, r, c)] != 0
    }

    pub fn set(&mut self, ch: usize, r: usize, c: usize, value: bool) {
        self.cells[Self::offset(ch, r, c)] = value as u8;
    }

    /// Raw 0/1 bytes in channel-major order.
    pub fn as_slice(&self) -> &[u8; OBS_CELLS] {
        &self.cells
    }

    pub fn from_slice(bits: &[u8]) -> Option<Self> {
        if bits.len() != OBS_CELLS || bits.iter().any(|b| *b > 1) {
            return None;
        }
        let mut cells = [0u8; OBS_CELLS];
        cells.copy_from_slice(bits);
        Some(Self { cells })
    }

    pub fn channel_count(&self, ch: usize) -> usize {
        self.cells[ch * FOV * FOV..(ch + 1) * FOV * FOV]
            .iter()
            .filter(|b| **b != 0)
            .count()
    }

    pub fn set_cells(&self, ch: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..FOV {
            for c in 0..FOV {
                if self.get(ch, r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Bit `i` of the output is cell `i`, least significant bit first within each byte.
    pub fn pack(&self) -> [u8; PACKED_OBS_BYTES] {
        let mut out = [0u8; PACKED_OBS_BYTES];
        for (i, &b) in self.cells.iter().enumerate() {
            out[i / 8] |= (b & 1) << (i % 8);
        }
        out
    }

    pub fn unpack(packed: &[u8; PACKED_OBS_BYTES]) -> Self {
        let mut cells = [0u8; OBS_CELLS];
        for (i, cell) in cells.iter_mut().enumerate() {
            *cell = (packed[i / 8] >> (i % 8)) & 1;
        }
        Self { cells }
    }

    pub fn is_zero(&self) -> bool {
        self.cells.iter().all(|b| *b == 0)
    }
}

mod packed_serde {
    use super::{Observation, OBS_CELLS, PACKED_OBS_BYTES};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cells: &[u8; OBS_CELLS], s: S) -> Result<S::Ok, S::Error> {
        let obs = Observation { cells: *cells };
        s.serialize_bytes(&obs.pack())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; OBS_CELLS], D::Error> {
        let bytes: Vec<u8> = Vec::deserialize(d)?;
        let packed: [u8; PACKED_OBS_BYTES] = bytes
            .try_into()
            .map_err(|_| D::Error::custom("observation must be 50 packed bytes"))?;
        Ok(Observation::unpack(&packed).cells)
    }
}

/// Top-left global cell of the window around `pos`.
pub fn window_origin(pos: Coord) -> Coord {
    Coord::new(pos.row - CENTER, pos.col - CENTER)
}

/// Local window cell of a global coordinate, if inside the window.
pub fn to_local(pos: Coord, global: Coord) -> Option<(usize, usize)> {
    let o = window_origin(pos);
    let (r, c) = (global.row - o.row, global.col - o.col);
    let fov = FOV as i32;
    ((0..fov).contains(&r) && (0..fov).contains(&c)).then_some((r as usize, c as usize))
}

/// Window cell closest to `goal` in box distance: each coordinate clamped into the window.
pub fn project_goal(pos: Coord, goal: Coord) -> (usize, usize) {
    let o = window_origin(pos);
    let fov = FOV as i32;
    let r = (goal.row - o.row).clamp(0, fov - 1);
    let c = (goal.col - o.col).clamp(0, fov - 1);
    (r as usize, c as usize)
}

/// Local view of agent `agent_id`. Out-of-bounds cells appear as obstacles.
pub fn observe(state: &WorldState, agent_id: usize) -> Observation {
    let me = &state.agents[agent_id];
    let origin = window_origin(me.pos);
    let mut obs = Observation::zeros();
    for r in 0..FOV {
        for c in 0..FOV {
            let g = Coord::new(origin.row + r as i32, origin.col + c as i32);
            if !state.map.is_free(g) {
                obs.set(CH_OBSTACLES, r, c, true);
            }
        }
    }
    for other in &state.agents {
        if other.id == agent_id || !state.occupies(other) {
            continue;
        }
        if let Some((r, c)) = to_local(me.pos, other.pos) {
            obs.set(CH_AGENTS, r, c, true);
        }
        if other.done {
            continue;
        }
        if let Some((r, c)) = to_local(me.pos, other.goal) {
            obs.set(CH_OTHER_GOALS, r, c, true);
        }
    }
    let (gr, gc) = project_goal(me.pos, me.goal);
    obs.set(CH_OWN_GOAL, gr, gc, true);
    obs
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::{AgentTask, GridMap};

    fn single(size: usize, pos: (i32, i32), goal: (i32, i32)) -> WorldState {
        let inst = [AgentTask {
            start: Coord::new(pos.0, pos.1),
            goal: Coord::new(goal.0, goal.1),
        }];
        WorldState::new(Arc::new(GridMap::empty(size, size)), &inst, false).unwrap()
    }

    #[test]
    fn goal_inside_window_is_exact() {
        let s = single(20, (10, 10), (12, 13));
        let obs = observe(&s, 0);
        assert_eq!(obs.set_cells(CH_OWN_GOAL), vec![(7, 8)]);
    }

    #[test]
    fn goal_outside_window_is_clamped() {
        let s = single(20, (0, 0), (15, 15));
        let obs = observe(&s, 0);
        assert_eq!(obs.set_cells(CH_OWN_GOAL), vec![(9, 9)]);
    }

    #[test]
    fn out_of_bounds_cells_are_obstacles() {
        let s = single(20, (0, 0), (15, 15));
        let obs = observe(&s, 0);
        for r in 0..FOV {
            for c in 0..FOV {
                let expected = r < 5 || c < 5;
                assert_eq!(obs.get(CH_OBSTACLES, r, c), expected, "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn neighbours_and_their_goals_are_visible() {
        let inst = [
            AgentTask {
                start: Coord::new(5, 5),
                goal: Coord::new(0, 0),
            },
            AgentTask {
                start: Coord::new(6, 7),
                goal: Coord::new(3, 3),
            },
            AgentTask {
                start: Coord::new(19, 19),
                goal: Coord::new(18, 18),
            },
        ];
        let s = WorldState::new(Arc::new(GridMap::empty(20, 20)), &inst, false).unwrap();
        let obs = observe(&s, 0);
        assert_eq!(obs.set_cells(CH_AGENTS), vec![(6, 7)]);
        assert_eq!(obs.set_cells(CH_OTHER_GOALS), vec![(3, 3)]);
        assert_eq!(obs.set_cells(CH_OWN_GOAL), vec![(0, 0)]);
        assert_eq!(obs.channel_count(CH_OBSTACLES), 0);
    }

    #[test]
    fn pack_unpack() {
        let s = single(12, (3, 3), (11, 0));
        let obs = observe(&s, 0);
        assert_eq!(Observation::unpack(&obs.pack()), obs);
    }
}
