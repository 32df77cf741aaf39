//! Brute-force reference implementations. Deliberately written against plain
//! tuples and slices, without any of the production types, so that tests
//! compare two independent computations.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

/// `(row, col)`.
pub type Cell = (i32, i32);

/// Row-major obstacle grid.
#[derive(Debug, Clone)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub blocked: Vec<bool>,
}

impl Grid {
    pub fn from_ascii(text: &str) -> Self {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let height = rows.len();
        let width = rows[0].trim_end().len();
        let blocked = rows
            .iter()
            .flat_map(|r| r.trim_end().bytes().map(|b| b == b'#'))
            .collect();
        Self {
            width,
            height,
            blocked,
        }
    }

    pub fn free(&self, (r, c): Cell) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.height
            && (c as usize) < self.width
            && !self.blocked[r as usize * self.width + c as usize]
    }

    fn moves(&self, p: Cell) -> Vec<Cell> {
        [(0, 0), (-1, 0), (0, 1), (1, 0), (0, -1)]
            .iter()
            .map(|(dr, dc)| (p.0 + dr, p.1 + dc))
            .filter(|q| self.free(*q))
            .collect()
    }
}

/// Minimum sum of arrival times over joint plans, found by uniform-cost
/// search over the joint state (positions plus done flags). An agent is done
/// the first time it stands on its goal and then leaves the board. Each step
/// costs the number of agents not yet done. Vertex conflicts and swaps
/// between agents present on the board are forbidden. Returns `None` when
/// no joint plan finishes by `horizon`.
pub fn joint_min_soc(grid: &Grid, starts: &[Cell], goals: &[Cell], horizon: u32) -> Option<u64> {
    let n = starts.len();
    let init: Vec<Option<Cell>> = starts
        .iter()
        .zip(goals)
        .map(|(s, g)| if s == g { None } else { Some(*s) })
        .collect();
    let mut best: HashMap<(Vec<Option<Cell>>, u32), u64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0u64, 0u32, init.clone())));
    best.insert((init, 0), 0);
    while let Some(Reverse((cost, t, state))) = heap.pop() {
        if state.iter().all(Option::is_none) {
            return Some(cost);
        }
        if best.get(&(state.clone(), t)).is_some_and(|&c| c < cost) || t >= horizon {
            continue;
        }
        let active: Vec<usize> = (0..n).filter(|&i| state[i].is_some()).collect();
        let options: Vec<Vec<Cell>> = active.iter().map(|&i| grid.moves(state[i].unwrap())).collect();
        let mut choice = vec![0usize; active.len()];
        loop {
            let next: Vec<Cell> = choice.iter().zip(&options).map(|(&k, o)| o[k]).collect();
            let mut ok = true;
            'check: for x in 0..active.len() {
                for y in x + 1..active.len() {
                    let (px, py) = (state[active[x]].unwrap(), state[active[y]].unwrap());
                    if next[x] == next[y] || (next[x] == py && next[y] == px) {
                        ok = false;
                        break 'check;
                    }
                }
            }
            if ok {
                let mut succ = state.clone();
                for (k, &i) in active.iter().enumerate() {
                    succ[i] = if next[k] == goals[i] { None } else { Some(next[k]) };
                }
                let c = cost + active.len() as u64;
                let key = (succ.clone(), t + 1);
                if best.get(&key).is_none_or(|&old| c < old) {
                    best.insert(key, c);
                    heap.push(Reverse((c, t + 1, succ)));
                }
            }
            let mut k = 0;
            loop {
                if k == choice.len() {
                    break;
                }
                choice[k] += 1;
                if choice[k] < options[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == choice.len() {
                break;
            }
        }
    }
    None
}

/// Shortest path length with no other agents, by plain BFS.
pub fn bfs_distance(grid: &Grid, from: Cell, to: Cell) -> Option<u32> {
    bfs_map(grid, from, &[]).get(&to).copied()
}

/// BFS distances from `from`, treating `extra_blocked` as walls.
pub fn bfs_map(grid: &Grid, from: Cell, extra_blocked: &[Cell]) -> HashMap<Cell, u32> {
    let mut dist = HashMap::new();
    if !grid.free(from) {
        return dist;
    }
    dist.insert(from, 0);
    let mut queue = VecDeque::from([from]);
    while let Some(p) = queue.pop_front() {
        let d = dist[&p];
        for q in grid.moves(p) {
            if !dist.contains_key(&q) && !extra_blocked.contains(&q) {
                dist.insert(q, d + 1);
                queue.push_back(q);
            }
        }
    }
    dist
}

/// Number of 4-connected components of free cells.
pub fn component_count(grid: &Grid) -> usize {
    let mut seen = vec![false; grid.width * grid.height];
    let mut count = 0;
    for r in 0..grid.height as i32 {
        for c in 0..grid.width as i32 {
            let i = r as usize * grid.width + c as usize;
            if !grid.free((r, c)) || seen[i] {
                continue;
            }
            count += 1;
            let mut stack = vec![(r, c)];
            seen[i] = true;
            while let Some(p) = stack.pop() {
                for q in grid.moves(p) {
                    let j = q.0 as usize * grid.width + q.1 as usize;
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(q);
                    }
                }
            }
        }
    }
    count
}

/// `out[t] = sum(xs[t..])`, computed independently for every `t`.
pub fn suffix_sums(xs: &[f64]) -> Vec<f64> {
    (0..xs.len()).map(|t| xs[t..].iter().sum()).collect()
}

/// Local window cell closest (Manhattan) to `goal`, for a `size`-wide window
/// whose cell `(center, center)` is the agent at `pos`. Ties cannot occur
/// because the window is a box.
pub fn nearest_window_cell(pos: Cell, goal: Cell, size: i32, center: i32) -> (i32, i32) {
    let mut best = (i32::MAX, (0, 0));
    for lr in 0..size {
        for lc in 0..size {
            let g = (pos.0 - center + lr, pos.1 - center + lc);
            let d = (g.0 - goal.0).abs() + (g.1 - goal.1).abs();
            if d < best.0 {
                best = (d, (lr, lc));
            }
        }
    }
    best.1
}

/// Softmax cross-entropy of one logit row, evaluated in f64 from scratch.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    m + z.ln() - logits[target]
}

/// Two-sided Wilson score interval at 95%.
pub fn wilson_95(successes: usize, n: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054_f64;
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = p + z * z / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    ((centre - half) / denom, (centre + half) / denom)
}

pub mod stub;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_in_open_grid_costs_detour() {
        let g = Grid::from_ascii("...\n...\n");
        // Head-on along the top row: one agent sidesteps.
        assert_eq!(joint_min_soc(&g, &[(0, 0), (0, 2)], &[(0, 2), (0, 0)], 20), Some(6));
    }

    #[test]
    fn corridor_exchange_is_impossible() {
        let g = Grid::from_ascii("...\n");
        assert_eq!(joint_min_soc(&g, &[(0, 0), (0, 2)], &[(0, 2), (0, 0)], 12), None);
    }

    #[test]
    fn agent_on_goal_costs_nothing() {
        let g = Grid::from_ascii("...\n");
        assert_eq!(joint_min_soc(&g, &[(0, 1), (0, 0)], &[(0, 1), (0, 2)], 12), Some(2));
    }

    #[test]
    fn suffix_and_projection() {
        assert_eq!(suffix_sums(&[1.0, 2.0, 3.0]), vec![6.0, 5.0, 3.0]);
        assert_eq!(nearest_window_cell((10, 10), (12, 13), 10, 5), (7, 8));
        assert_eq!(nearest_window_cell((0, 0), (15, 15), 10, 5), (9, 9));
        assert_eq!(component_count(&Grid::from_ascii(".#.\n.#.\n")), 2);
    }
}
