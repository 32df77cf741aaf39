//! Self-checks run by `dtmapf verify`: every production computation here is
//! compared against an independent brute-force reference.

use std::sync::Arc;

use dtmapf_core::dataset::compute_rtg;
use dtmapf_core::planner::{plan_cbs, plan_with_fallback, validate_plan, CbsConfig, JointPlan};
use dtmapf_core::seed::derive;
use dtmapf_core::env::DEFAULT_HORIZON;
use dtmapf_core::{
    generate_map, sample_instance, step_in_place, Action, AgentTask, EpisodeConfig, GridMap, RewardConfig, WorldState,
};
use dtmapf_harness::{oracle_advise, WorldSnapshot};
use dtmapf_model::gradcheck::gradcheck;
use dtmapf_model::{DTConfig, Model, TokenBatch};
use dtmapf_verify::{bfs_map, joint_min_soc, suffix_sums, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn oracle_grid(map: &GridMap) -> Grid {
    Grid::from_ascii(&map.to_ascii())
}

fn cell(c: dtmapf_core::Coord) -> (i32, i32) {
    (c.row, c.col)
}

/// CBS sum of costs against uniform-cost search over the joint state, on
/// two-agent 4x4 maps with at most three obstacles.
pub fn cbs_optimality(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = CbsConfig {
        horizon: 16,
        ..CbsConfig::default()
    };
    let (mut checked, mut solved) = (0, 0);
    let mut failure = None;
    while checked < instances && failure.is_none() {
        let obstacles = rng.random_range(0..=3usize);
        let Ok(map) = generate_map(4, 4, obstacles as f64 / 16.0, rng.random()) else {
            continue;
        };
        let Ok(inst) = sample_instance(&map, 2, rng.random()) else {
            continue;
        };
        let starts: Vec<_> = inst.iter().map(|a| cell(a.start)).collect();
        let goals: Vec<_> = inst.iter().map(|a| cell(a.goal)).collect();
        let expected = joint_min_soc(&oracle_grid(&map), &starts, &goals, cfg.horizon);
        match (plan_cbs(&map, &inst, &cfg), expected) {
            (Ok(plan), Some(soc)) if plan.soc == soc => solved += 1,
            (Err(_), None) => {}
            (got, want) => {
                failure = Some(format!(
                    "instance {checked}: cbs {:?} vs joint search {want:?}\n{}",
                    got.map(|p| p.soc),
                    map.to_ascii()
                ))
            }
        }
        checked += 1;
    }
    match failure {
        Some(f) => Check::new("cbs-optimality", false, f),
        None => Check::new(
            "cbs-optimality",
            true,
            format!("{checked} instances, {solved} solvable, all sums of costs equal"),
        ),
    }
}

/// Steps the environment along `plan` and counts the collisions it reports.
pub fn replay_collisions(map: Arc<GridMap>, inst: &[AgentTask], plan: &JointPlan) -> Result<usize, String> {
    let config = EpisodeConfig::with_horizon(plan.makespan.max(1) + 1);
    let mut world = WorldState::new(map, inst, false).map_err(|e| e.to_string())?;
    let mut collisions = 0;
    while !world.all_done() {
        let t = world.t as usize;
        let actions: Vec<Action> = plan
            .paths
            .iter()
            .map(|p| match (p.get(t), p.get(t + 1)) {
                (Some(a), Some(b)) => a.action_to(*b).unwrap_or(Action::Wait),
                _ => Action::Wait,
            })
            .collect();
        let r = step_in_place(&mut world, &actions, &config).map_err(|e| e.to_string())?;
        collisions += r.collisions.len();
    }
    Ok(collisions)
}

/// Plans every instance of a size x agents x density sweep and checks each
/// returned plan for conflicts, both statically and by replay.
pub fn plan_safety(sizes: &[usize], agents: &[usize], densities: &[f64], per_combo: usize, seed: u64) -> Check {
    let cfg = CbsConfig {
        horizon: 512,
        node_budget: 2_000,
        hold_goal: false,
    };
    let (mut planned, mut unplanned, mut bad) = (0, 0, Vec::new());
    let mut idx = 0u64;
    for &size in sizes {
        for &n in agents {
            for &density in densities {
                for _ in 0..per_combo {
                    idx += 1;
                    let map = match generate_map(size, size, density, derive(seed, "safety-map", idx)) {
                        Ok(m) => Arc::new(m),
                        Err(_) => {
                            unplanned += 1;
                            continue;
                        }
                    };
                    let Ok(inst) = sample_instance(&map, n, derive(seed, "safety-instance", idx)) else {
                        unplanned += 1;
                        continue;
                    };
                    let Ok(out) = plan_with_fallback(&map, &inst, &cfg, derive(seed, "safety-order", idx)) else {
                        unplanned += 1;
                        continue;
                    };
                    planned += 1;
                    let conflicts = validate_plan(&map, &out.plan, false).map(|c| c.len());
                    let replay = replay_collisions(map.clone(), &inst, &out.plan);
                    if conflicts != Ok(0) || replay != Ok(0) {
                        bad.push(format!("{size}/{n}/{density} #{idx}: conflicts {conflicts:?}, replay {replay:?}"));
                    }
                }
            }
        }
    }
    Check::new(
        "plan-safety",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{planned} plans conflict-free and collision-free on replay, {unplanned} instances without a plan")
        } else {
            bad.join("; ")
        },
    )
}

/// Return-to-go against independently summed suffixes, on reward sequences
/// an agent can actually receive: per-step rewards from the environment's
/// table, at most one horizon long, ending with the goal reward.
pub fn rtg_suffix_sums(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = RewardConfig::default();
    let steps = [table.move_reward, table.wait_off_goal, table.wait_on_goal, table.collision];
    let mut worst = 0f64;
    for _ in 0..trials {
        let len = rng.random_range(1..=DEFAULT_HORIZON as usize);
        let mut rewards: Vec<f64> = (0..len - 1).map(|_| steps[rng.random_range(0..steps.len())]).collect();
        rewards.push(table.goal);
        for (a, b) in compute_rtg(&rewards).iter().zip(suffix_sums(&rewards)) {
            worst = worst.max((a - b).abs());
        }
    }
    Check::new("rtg-suffix-sums", worst <= 1e-12, format!("max abs error {worst:e} over {trials} sequences"))
}

fn random_batch(rng: &mut ChaCha8Rng, k: usize, lens: &[usize]) -> TokenBatch {
    let mut b = TokenBatch::zeros(lens.len(), k);
    for (row, &len) in lens.iter().enumerate() {
        for s in 0..len {
            let i = row * k + s;
            b.rtg[i] = rng.random_range(-10.0..20.0);
            b.actions[i] = rng.random_range(0..5);
            b.timesteps[i] = s as u32;
            b.mask[i] = true;
            for v in &mut b.obs[i * 400..(i + 1) * 400] {
                *v = u8::from(rng.random::<f64>() < 0.3);
            }
        }
    }
    b
}

/// Tiny double-precision model with small random biases, so that no ReLU sits
/// exactly on its kink during finite differencing.
pub fn perturbed_tiny(seed: u64) -> Model<f64> {
    let mut m: Model<f64> = Model::new(DTConfig::tiny()).expect("tiny config is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = m.layout().clone();
    for t in layout.tensors.iter().filter(|t| t.name.ends_with("bias")) {
        for x in &mut m.params.data[t.range()] {
            *x += 0.1 * rng.random_range(-1.0..1.0);
        }
    }
    m
}

/// Backpropagation against central differences on every parameter tensor.
pub fn gradients(seed: u64, per_tensor: usize) -> Check {
    let model = perturbed_tiny(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch = random_batch(&mut rng, 4, &[4, 2, 3]);
    match gradcheck(&model, &batch, per_tensor, 1e-5, seed) {
        Err(e) => Check::new("gradcheck", false, e.to_string()),
        Ok(report) => {
            let worst = report
                .iter()
                .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
                .map(|t| (t.name.clone(), t.max_rel_err))
                .unwrap_or_default();
            let all = report.len() == model.layout().tensors.len();
            Check::new(
                "gradcheck",
                all && worst.1 <= 1e-4,
                format!("{} tensors, worst relative error {:e} in {}", report.len(), worst.1, worst.0),
            )
        }
    }
}

/// Oracle advice against breadth-first distances computed by the reference.
pub fn oracle_steps(snapshots: usize, seed: u64) -> Check {
    let mut checked = 0;
    let mut failure = None;
    let mut i = 0u64;
    while checked < snapshots && failure.is_none() {
        i += 1;
        let density = [0.0, 0.1, 0.2][i as usize % 3];
        let Ok(map) = generate_map(12, 12, density, derive(seed, "oracle-map", i)) else { continue };
        let map = Arc::new(map);
        let Ok(inst) = sample_instance(&map, 6, derive(seed, "oracle-instance", i)) else { continue };
        let Ok(world) = WorldState::new(map.clone(), &inst, false) else { continue };
        let s = WorldSnapshot::from_world(&world);
        let grid = oracle_grid(&map);
        // One controlled agent at a time, so no yielding is involved.
        for id in 0..inst.len() {
            let [(_, action)] = oracle_advise(&s, &[id])[..] else { unreachable!() };
            let me = s.agent(id).expect("agent exists");
            let others: Vec<(i32, i32)> = s.occupied_by_others(id).into_iter().map(cell).collect();
            // A goal held by another agent counts as blocked, like any occupied cell.
            let dist = if others.contains(&cell(me.goal)) {
                Default::default()
            } else {
                bfs_map(&grid, cell(me.goal), &others)
            };
            let here = dist.get(&cell(me.pos)).copied();
            let next = me.pos.offset(action);
            let ok = match here {
                None | Some(0) => action == Action::Wait,
                Some(d) => dist.get(&cell(next)) == Some(&(d - 1)),
            };
            if !ok {
                failure = Some(format!("snapshot {i} agent {id}: {action:?} from distance {here:?}"));
            }
        }
        checked += 1;
    }
    match failure {
        Some(f) => Check::new("oracle-shortest-step", false, f),
        None => Check::new("oracle-shortest-step", true, format!("{checked} snapshots")),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Run the full 720-instance safety sweep instead of a sample.
    pub full: bool,
}

pub fn run_suite(opts: &SuiteOptions) -> Vec<Check> {
    let seed = opts.seed;
    let mut checks = vec![
        cbs_optimality(200, seed),
        rtg_suffix_sums(200, seed),
        gradients(seed, 200),
        oracle_steps(100, seed),
    ];
    checks.push(if opts.full {
        plan_safety(&[10, 20, 40], &[4, 8, 16], &[0.0, 0.1, 0.2], 27, seed)
    } else {
        plan_safety(&[10, 20], &[4, 8], &[0.0, 0.2], 3, seed)
    });
    checks
}
