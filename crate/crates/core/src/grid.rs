//! Static grid maps, cell coordinates, the five-action vocabulary and
//! instance sampling.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;

/// Grid cell. `row` grows southward, `col` grows eastward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Coord {
    pub row: i32,
    pub col: i32,
}

impl Coord {
    pub const fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    pub fn offset(self, action: Action) -> Coord {
        let (dr, dc) = action.delta();
        Coord::new(self.row + dr, self.col + dc)
    }

    pub fn manhattan(self, other: Coord) -> u32 {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Action that moves `self` onto `next`, if the two cells are equal or 4-adjacent.
    pub fn action_to(self, next: Coord) -> Option<Action> {
        Action::ALL.into_iter().find(|a| self.offset(*a) == next)
    }
}

impl From<[i32; 2]> for Coord {
    fn from(v: [i32; 2]) -> Self {
        Coord::new(v[0], v[1])
    }
}

impl From<Coord> for [i32; 2] {
    fn from(c: Coord) -> Self {
        [c.row, c.col]
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Agent action. Integer codes are fixed for dataset and model interchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Wait = 0,
    North = 1,
    East = 2,
    South = 3,
    West = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Wait,
        Action::North,
        Action::East,
        Action::South,
        Action::West,
    ];
    pub const COUNT: usize = 5;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Action> {
        Action::ALL.get(code as usize).copied()
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Wait => (0, 0),
            Action::North => (-1, 0),
            Action::East => (0, 1),
            Action::South => (1, 0),
            Action::West => (0, -1),
        }
    }

    pub fn is_move(self) -> bool {
        self != Action::Wait
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Wait => "WAIT",
            Action::North => "NORTH",
            Action::East => "EAST",
            Action::South => "SOUTH",
            Action::West => "WEST",
        }
    }

    /// Case-insensitive lookup of the upper-case names returned by [`Action::name`].
    pub fn from_name(name: &str) -> Option<Action> {
        Action::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(name.trim()))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Static obstacle grid, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    obstacles: Vec<bool>,
}

impl GridMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            obstacles: vec![false; width * height],
        }
    }

    pub fn from_obstacles(
        width: usize,
        height: usize,
        cells: impl IntoIterator<Item = Coord>,
    ) -> Result<Self, EnvError> {
        let mut map = Self::empty(width, height);
        for c in cells {
            if !map.in_bounds(c) {
                return Err(EnvError::OutOfBounds(c));
            }
            let i = map.index(c);
            map.obstacles[i] = true;
        }
        Ok(map)
    }

    /// Parses the text form: `.` free, `#` obstacle, one line per row.
    /// Any other character is read as a free cell so agent letters can be kept.
    pub fn parse_ascii(text: &str) -> Result<Self, EnvError> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(EnvError::InvalidMap("ragged rows".into()));
        }
        let obstacles = rows
            .iter()
            .flat_map(|r| r.chars().map(|ch| ch == '#'))
            .collect();
        Ok(Self {
            width,
            height,
            obstacles,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.row >= 0 && c.col >= 0 && (c.row as usize) < self.height && (c.col as usize) < self.width
    }

    /// Row-major index. Caller guarantees `in_bounds(c)`.
    pub fn index(&self, c: Coord) -> usize {
        c.row as usize * self.width + c.col as usize
    }

    pub fn coord(&self, index: usize) -> Coord {
        Coord::new((index / self.width) as i32, (index % self.width) as i32)
    }

    pub fn is_obstacle(&self, c: Coord) -> bool {
        self.obstacles[self.index(c)]
    }

    /// In bounds and not an obstacle.
    pub fn is_free(&self, c: Coord) -> bool {
        self.in_bounds(c) && !self.obstacles[self.index(c)]
    }

    pub fn set_obstacle(&mut self, c: Coord, value: bool) {
        let i = self.index(c);
        self.obstacles[i] = value;
    }

    pub fn obstacle_count(&self) -> usize {
        self.obstacles.iter().filter(|o| **o).count()
    }

    pub fn density(&self) -> f64 {
        self.obstacle_count() as f64 / self.cells().max(1) as f64
    }

    pub fn obstacle_cells(&self) -> Vec<Coord> {
        (0..self.cells())
            .filter(|&i| self.obstacles[i])
            .map(|i| self.coord(i))
            .collect()
    }

    pub fn free_cells(&self) -> Vec<Coord> {
        (0..self.cells())
            .filter(|&i| !self.obstacles[i])
            .map(|i| self.coord(i))
            .collect()
    }

    /// Free 4-neighbours of `c` in action order (N, E, S, W).
    pub fn neighbors(&self, c: Coord) -> impl Iterator<Item = Coord> + '_ {
        Action::ALL[1..]
            .iter()
            .map(move |a| c.offset(*a))
            .filter(move |n| self.is_free(*n))
    }

    /// Labels each free cell with its 4-connected component id; obstacles get `None`.
    pub fn components(&self) -> Vec<Option<usize>> {
        let mut label = vec![None; self.cells()];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.cells() {
            if self.obstacles[start] || label[start].is_some() {
                continue;
            }
            label[start] = Some(next);
            queue.push_back(self.coord(start));
            while let Some(c) = queue.pop_front() {
                for n in self.neighbors(c) {
                    let ni = self.index(n);
                    if label[ni].is_none() {
                        label[ni] = Some(next);
                        queue.push_back(n);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// BFS distances from `source` over free cells; `None` where unreachable.
    pub fn distances_from(&self, source: Coord) -> Vec<Option<u32>> {
        self.distances_from_blocked(source, |_| false)
    }

    /// BFS distances treating cells for which `blocked` holds as extra obstacles.
    /// A blocked source yields an all-`None` map.
    pub fn distances_from_blocked(
        &self,
        source: Coord,
        blocked: impl Fn(Coord) -> bool,
    ) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.cells()];
        if !self.is_free(source) || blocked(source) {
            return dist;
        }
        dist[self.index(source)] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].unwrap_or(0);
            for n in self.neighbors(c) {
                let ni = self.index(n);
                if dist[ni].is_none() && !blocked(n) {
                    dist[ni] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity(self.cells() + self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.obstacles[r * self.width + c] {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Start and goal of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentTask {
    pub start: Coord,
    pub goal: Coord,
}

pub type Instance = Vec<AgentTask>;

/// Places `floor(density * width * height)` obstacles uniformly without replacement.
pub fn generate_map(
    width: usize,
    height: usize,
    density: f64,
    seed: u64,
) -> Result<GridMap, EnvError> {
    if width * height < 4 {
        return Err(EnvError::InvalidMap(format!(
            "map {width}x{height} has fewer than 4 cells"
        )));
    }
    if !(0.0..=0.5).contains(&density) || density.is_nan() {
        return Err(EnvError::InvalidDensity(density));
    }
    let cells = width * height;
    let count = (density * cells as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = GridMap::empty(width, height);
    for i in index::sample(&mut rng, cells, count) {
        map.obstacles[i] = true;
    }
    Ok(map)
}

const SAMPLE_ATTEMPTS: usize = 64;

/// Draws distinct starts and distinct goals, each goal in its start's component.
pub fn sample_instance(map: &GridMap, n_agents: usize, seed: u64) -> Result<Instance, EnvError> {
    let free = map.free_cells();
    if free.len() < 2 * n_agents {
        return Err(EnvError::Sampling(format!(
            "need {} free cells for {n_agents} agents, map has {}",
            2 * n_agents,
            free.len()
        )));
    }
    let labels = map.components();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_failure = String::new();
    for _ in 0..SAMPLE_ATTEMPTS {
        let mut starts = free.clone();
        starts.shuffle(&mut rng);
        let mut used_goal = vec![false; map.cells()];
        let mut tasks = Vec::with_capacity(n_agents);
        let mut order = free.clone();
        for &start in starts.iter() {
            if tasks.len() == n_agents {
                break;
            }
            let comp = labels[map.index(start)];
            order.shuffle(&mut rng);
            let goal = order.iter().copied().find(|&g| {
                g != start && labels[map.index(g)] == comp && !used_goal[map.index(g)]
            });
            match goal {
                Some(goal) => {
                    used_goal[map.index(goal)] = true;
                    tasks.push(AgentTask { start, goal });
                }
                None => {
                    // start is an isolated cell or its component is exhausted
                    continue;
                }
            }
        }
        if tasks.len() == n_agents {
            return Ok(tasks);
        }
        last_failure = format!(
            "could place only {} of {n_agents} agents with a reachable distinct goal",
            tasks.len()
        );
    }
    Err(EnvError::Sampling(last_failure))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_codes_are_fixed() {
        let codes: Vec<u8> = Action::ALL.iter().map(|a| a.code()).collect();
        assert_eq!(codes, vec![0, 1, 2, 3, 4]);
        assert_eq!(Action::from_code(3), Some(Action::South));
        assert_eq!(Action::from_code(5), None);
        assert_eq!(Coord::new(2, 2).offset(Action::North), Coord::new(1, 2));
        assert_eq!(Coord::new(2, 2).offset(Action::West), Coord::new(2, 1));
        assert_eq!(Action::from_name(" east "), Some(Action::East));
    }

    #[test]
    fn zero_density_map_is_empty() {
        let map = generate_map(10, 10, 0.0, 99).unwrap();
        assert_eq!(map.obstacle_count(), 0);
    }

    #[test]
    fn density_fixes_obstacle_count() {
        let map = generate_map(10, 10, 0.2, 7).unwrap();
        assert_eq!(map.obstacle_count(), 20);
        let map = generate_map(20, 20, 0.1, 3).unwrap();
        assert_eq!(map.obstacle_count(), 40);
        assert!((map.density() - 0.1).abs() < 1.0 / 400.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_map(20, 20, 0.1, 3).unwrap();
        let b = generate_map(20, 20, 0.1, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_map(20, 20, 0.1, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_density_and_tiny_maps() {
        assert!(matches!(
            generate_map(10, 10, 0.6, 1),
            Err(EnvError::InvalidDensity(_))
        ));
        assert!(generate_map(1, 3, 0.0, 1).is_err());
    }

    #[test]
    fn sampled_instance_is_distinct() {
        let map = GridMap::empty(10, 10);
        let inst = sample_instance(&map, 4, 11).unwrap();
        assert_eq!(inst.len(), 4);
        let mut starts: Vec<_> = inst.iter().map(|t| t.start).collect();
        let mut goals: Vec<_> = inst.iter().map(|t| t.goal).collect();
        starts.sort();
        starts.dedup();
        goals.sort();
        goals.dedup();
        assert_eq!(starts.len(), 4);
        assert_eq!(goals.len(), 4);
        assert!(inst.iter().all(|t| t.start != t.goal));
        assert_eq!(inst, sample_instance(&map, 4, 11).unwrap());
    }

    #[test]
    fn exact_fit_terminates() {
        let map = GridMap::empty(4, 2);
        // 8 free cells, 4 agents: either succeeds or reports, never hangs
        match sample_instance(&map, 4, 5) {
            Ok(inst) => assert_eq!(inst.len(), 4),
            Err(EnvError::Sampling(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
        assert!(sample_instance(&map, 5, 5).is_err());
    }

    #[test]
    fn ascii_round_trip() {
        let text = "..#\n#..\n";
        let map = GridMap::parse_ascii(text).unwrap();
        assert_eq!(map.width(), 3);
        assert_eq!(map.height(), 2);
        assert_eq!(map.obstacle_count(), 2);
        assert_eq!(map.to_ascii(), text);
    }
}
