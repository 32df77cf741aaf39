mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::{c, dt_policies, map, scripted, tiny_model, wait_policies};
use dtmapf_core::planner::{plan_cbs, CbsConfig};
use dtmapf_core::record::{Controller, EpisodeRecord, ScenarioEvent};
use dtmapf_core::seed::derive;
use dtmapf_core::{generate_map, sample_instance, AgentTask, Coord, EpisodeConfig, GridMap, Instance, WorldState};
use dtmapf_harness::advisor::{LlmAdvisor, LlmConfig, ParseFallback};
use dtmapf_harness::scenario::scenario_at;
use dtmapf_harness::{
    make_scenario, run_dynamic_episode, run_episode, run_static_with_rescue, t_change_for_size,
    HarnessError, NoHooks, OracleAdvisor, Policy, ScenarioConfig,
};
use dtmapf_verify::stub::{Reply, StubServer};
use dtmapf_verify::{bfs_map, Grid};

#[test]
fn goal_change_timesteps_follow_map_size() {
    assert_eq!(t_change_for_size(20), Some(15));
    assert_eq!(t_change_for_size(40), Some(30));
    assert_eq!(t_change_for_size(80), Some(50));
    assert_eq!(t_change_for_size(10), None);
    let (e, cfg) = make_scenario(20, 8, 0.25, 1).unwrap();
    assert_eq!((e.count, e.t_change, cfg.t_change, cfg.window), (2, 15, 15, 5));
    let (e, _) = make_scenario(80, 16, 0.5, 1).unwrap();
    assert_eq!((e.count, e.t_change), (8, 50));
    let (e, _) = make_scenario(40, 10, 0.25, 1).unwrap();
    assert_eq!((e.count, e.t_change), (3, 30));
    assert_eq!(make_scenario(20, 8, 0.25, 9).unwrap(), make_scenario(20, 8, 0.25, 9).unwrap());
    assert!(make_scenario(20, 2, 0.25, 1).is_err());
    assert!(make_scenario(10, 8, 0.25, 1).is_err());
}

fn world(size: usize, density: f64, n: usize, i: u64) -> (Arc<GridMap>, Instance) {
    let grid = Arc::new(generate_map(size, size, density, derive(31, "map", i)).unwrap());
    let inst = sample_instance(&grid, n, derive(31, "inst", i)).unwrap();
    (grid, inst)
}

#[test]
fn new_goals_are_reachable_fresh_and_deterministic() {
    for i in 0..30 {
        let (grid, inst) = world(20, 0.2, 8, i);
        let state = WorldState::new(grid.clone(), &inst, false).unwrap();
        let (event, _) = make_scenario(20, 8, 0.5, derive(31, "event", i)).unwrap();
        let picks = event.select(&state).unwrap();
        assert_eq!(picks, event.select(&state).unwrap());
        assert_eq!(picks.len(), 4);
        let mut seen = BTreeSet::new();
        for (id, goal) in &picks {
            let pos = state.agents[*id].pos;
            assert!(grid.distances_from(pos)[grid.index(*goal)].is_some_and(|d| d > 0));
            assert!(state.agents.iter().all(|a| a.goal != *goal));
            assert!(seen.insert(*goal));
        }
    }
}

fn affected(record: &EpisodeRecord) -> BTreeSet<usize> {
    record
        .events
        .iter()
        .filter_map(|e| match e {
            ScenarioEvent::GoalChange { agent, .. } => Some(*agent),
            _ => None,
        })
        .collect()
}

fn advisor_steps(record: &EpisodeRecord) -> Vec<(usize, u32)> {
    (0..record.n_agents())
        .flat_map(|a| record.advisor_steps(a).into_iter().map(move |t| (a, t)))
        .collect()
}

fn dynamic(
    grid: Arc<GridMap>,
    inst: &[AgentTask],
    policies: &mut [Box<dyn Policy>],
    window: u32,
    with_advisor: bool,
    seed: u64,
) -> EpisodeRecord {
    let (event, mut cfg) = make_scenario(20, inst.len(), 0.25, seed).unwrap();
    cfg.window = window;
    let mut oracle = OracleAdvisor;
    let adv = with_advisor.then_some(&mut oracle as &mut dyn dtmapf_harness::Advisor);
    run_dynamic_episode(grid, inst, policies, adv, &event, &cfg, &EpisodeConfig::with_horizon(80)).unwrap()
}

#[test]
fn advisor_control_stays_inside_the_window() {
    let model = tiny_model(8, 8);
    for i in 0..12 {
        let (grid, inst) = world(20, 0.1, 8, i);
        let record = dynamic(grid, &inst, &mut dt_policies(&model, 8), 5, true, i);
        record.check_consistency().unwrap();
        let changed = affected(&record);
        assert!(!changed.is_empty());
        for (a, t) in advisor_steps(&record) {
            assert!(changed.contains(&a), "unaffected agent {a} advised at {t}");
            assert!((15..20).contains(&t), "agent {a} advised at {t}");
        }
        for &a in &changed {
            let expected = (15..20).filter(|&t| record.actions[a].get(t as usize).is_some_and(Option::is_some)).count();
            assert_eq!(record.advisor_steps(a).len(), expected);
        }
        let switches = record
            .events
            .iter()
            .filter(|e| matches!(e, ScenarioEvent::ControllerSwitch { .. }))
            .count();
        assert_eq!(switches, 2 * changed.len());
    }
}

#[test]
fn advising_all_unfinished_agents_is_available() {
    let model = tiny_model(8, 8);
    let (grid, inst) = world(20, 0.1, 8, 3);
    let (event, mut cfg) = make_scenario(20, 8, 0.25, 3).unwrap();
    cfg.advise_all_unfinished = true;
    let mut oracle = OracleAdvisor;
    let record = run_dynamic_episode(
        grid,
        &inst,
        &mut dt_policies(&model, 8),
        Some(&mut oracle),
        &event,
        &cfg,
        &EpisodeConfig::with_horizon(80),
    )
    .unwrap();
    let advised: BTreeSet<usize> = advisor_steps(&record).into_iter().map(|(a, _)| a).collect();
    let active_at_change: BTreeSet<usize> = (0..8).filter(|&a| record.actions[a].get(15).is_some_and(Option::is_some)).collect();
    assert_eq!(advised, active_at_change);
    assert!(advisor_steps(&record).iter().all(|(_, t)| (15..20).contains(t)));
}

#[test]
fn zero_window_equals_a_run_without_advisor() {
    let model = tiny_model(9, 8);
    for i in 0..4 {
        let (grid, inst) = world(20, 0.1, 8, 100 + i);
        let a = dynamic(grid.clone(), &inst, &mut dt_policies(&model, 8), 0, true, i);
        let b = dynamic(grid, &inst, &mut dt_policies(&model, 8), 5, false, i);
        assert_eq!(a, b);
        assert!(advisor_steps(&a).is_empty());
    }
}

#[test]
fn goal_change_does_not_disturb_the_prefix() {
    let model = tiny_model(10, 8);
    for i in 0..4 {
        let (grid, inst) = world(20, 0.1, 8, 200 + i);
        let dyn_rec = dynamic(grid.clone(), &inst, &mut dt_policies(&model, 8), 5, true, i);
        let pure = run_episode(grid, &inst, &mut dt_policies(&model, 8), None, &EpisodeConfig::with_horizon(80), &mut NoHooks).unwrap();
        for a in 0..8 {
            let n = 15.min(pure.actions[a].len());
            assert_eq!(dyn_rec.actions[a][..n], pure.actions[a][..n], "agent {a}");
        }
    }
}

fn verify_grid(grid: &GridMap) -> Grid {
    Grid {
        width: grid.width(),
        height: grid.height(),
        blocked: (0..grid.cells()).map(|i| grid.is_obstacle(grid.coord(i))).collect(),
    }
}

fn cell(c: Coord) -> (i32, i32) {
    (c.row, c.col)
}

#[test]
fn first_oracle_step_shortens_unobstructed_paths() {
    let model = tiny_model(11, 8);
    let mut unobstructed = 0;
    for i in 0..20 {
        let (grid, inst) = world(20, 0.1, 8, 300 + i);
        let record = dynamic(grid.clone(), &inst, &mut dt_policies(&model, 8), 5, true, i);
        let g = verify_grid(&grid);
        for ev in &record.events {
            let ScenarioEvent::GoalChange { agent, new_goal, t, .. } = ev else { continue };
            let t = *t as usize;
            let pos = record.positions[*agent][t];
            let others: Vec<(i32, i32)> = (0..8)
                .filter(|&b| b != *agent && record.actions[b].get(t).is_some_and(Option::is_some))
                .map(|b| cell(record.positions[b][t]))
                .collect();
            let free = bfs_map(&g, cell(*new_goal), &[]);
            let around = bfs_map(&g, cell(*new_goal), &others);
            let collided = record.collisions.iter().any(|c| c.agent == *agent && c.t as usize == t);
            if free.get(&cell(pos)) != around.get(&cell(pos)) || collided {
                continue;
            }
            unobstructed += 1;
            let before = free[&cell(pos)];
            let after = free[&cell(record.positions[*agent][t + 1])];
            assert_eq!(after + 1, before, "episode {i} agent {agent}");
        }
    }
    assert!(unobstructed >= 20, "{unobstructed}");
}

#[test]
fn rescue_is_idle_when_everyone_finishes_in_time() {
    for i in 0..10 {
        let (grid, inst) = world(10, 0.1, 4, 400 + i);
        let plan = plan_cbs(&grid, &inst, &CbsConfig::default()).unwrap();
        let budget = plan.makespan + 1;
        let record = run_static_with_rescue(grid, &inst, &mut scripted(&plan.paths), &mut OracleAdvisor, budget, &EpisodeConfig::with_horizon(64)).unwrap();
        assert!(record.success());
        assert_eq!(record.total_advisor_steps(), 0);
        assert!(record.events.is_empty());
    }
}

#[test]
fn rescue_takes_over_only_unfinished_agents_after_the_budget() {
    let grid = map(&"..........\n".repeat(10));
    let inst = vec![
        AgentTask { start: c(0, 0), goal: c(0, 3) },
        AgentTask { start: c(9, 9), goal: c(2, 5) },
        AgentTask { start: c(5, 0), goal: c(5, 9) },
    ];
    // Agent 0 finishes by itself; agents 1 and 2 never move.
    let mut policies = scripted(&[vec![c(0, 0), c(0, 1), c(0, 2), c(0, 3)], vec![c(9, 9)], vec![c(5, 0)]]);
    let record = run_static_with_rescue(grid, &inst, &mut policies, &mut OracleAdvisor, 10, &EpisodeConfig::with_horizon(40)).unwrap();
    assert!(record.success());
    assert_eq!(record.advisor_steps(0), Vec::<u32>::new());
    for a in [1, 2] {
        let steps = record.advisor_steps(a);
        assert_eq!(steps.first(), Some(&10));
        assert_eq!(steps.len() as u32, record.arrival_times[a].unwrap() - 10);
    }
    assert!(record.arrival_times[1].unwrap() >= 10 + 11);
    assert!(record.arrival_times[2].unwrap() >= 10 + 9);
}

#[test]
fn zero_budget_is_a_pure_advisor_episode() {
    let (grid, inst) = world(10, 0.0, 2, 500);
    let record = run_static_with_rescue(grid.clone(), &inst, &mut wait_policies(2), &mut OracleAdvisor, 0, &EpisodeConfig::with_horizon(64)).unwrap();
    assert!(record.success());
    for a in 0..2 {
        let acted = record.actions[a].iter().filter(|x| x.is_some()).count();
        assert_eq!(record.advisor_steps(a).len(), acted);
    }
    let err = run_static_with_rescue(grid, &inst, &mut wait_policies(2), &mut OracleAdvisor, 64, &EpisodeConfig::with_horizon(64));
    assert!(matches!(err, Err(HarnessError::Scenario(_))));
}

#[test]
fn window_must_end_before_the_horizon() {
    let (event, cfg) = scenario_at(60, 8, 0.25, 0).unwrap();
    let (grid, inst) = world(20, 0.0, 8, 600);
    let err = run_dynamic_episode(grid, &inst, &mut wait_policies(8), None, &event, &cfg, &EpisodeConfig::with_horizon(64));
    assert!(matches!(err, Err(HarnessError::Scenario(_))));
    assert!(ScenarioConfig { t_change: 10, ..ScenarioConfig::default() }.validate(64).is_ok());
}

#[test]
fn llm_failures_inside_an_episode_are_recorded() {
    let server = StubServer::start(vec![Reply::chat("I am not sure.")]).unwrap();
    let cfg = LlmConfig {
        url: server.url.clone(),
        retries: 0,
        parse_fallback: ParseFallback::DeferToPolicy,
        ..LlmConfig::default()
    };
    let mut llm = LlmAdvisor::new(cfg).unwrap();
    let model = tiny_model(12, 8);
    let (grid, inst) = world(20, 0.1, 8, 700);
    let (event, scenario) = make_scenario(20, 8, 0.25, 4).unwrap();
    let record = run_dynamic_episode(
        grid,
        &inst,
        &mut dt_policies(&model, 8),
        Some(&mut llm),
        &event,
        &scenario,
        &EpisodeConfig::with_horizon(40),
    )
    .unwrap();
    let fallbacks = record
        .events
        .iter()
        .filter(|e| matches!(e, ScenarioEvent::AdvisorFallback { .. }))
        .count();
    assert!(fallbacks >= 2);
    assert_eq!(fallbacks, llm.calls.iter().map(|c| c.fallbacks).sum::<usize>());
    // Deferred steps are chosen by the policy.
    assert_eq!(advisor_steps(&record), Vec::<(usize, u32)>::new());
    assert!(record.controllers.iter().flatten().flatten().all(|c| *c == Controller::Policy));
}
