mod common;

use std::sync::Arc;

use common::{c, map};
use dtmapf_core::seed::derive;
use dtmapf_core::{generate_map, sample_instance, Action, AgentTask, WorldState};
use dtmapf_harness::advisor::{build_prompt, parse_response, ParseFallback, PromptConfig};
use dtmapf_harness::{oracle_advise, HarnessError, WorldSnapshot};
use dtmapf_verify::{bfs_map, Grid};

fn snapshot(text: &str, tasks: &[AgentTask]) -> WorldSnapshot {
    WorldSnapshot::from_world(&WorldState::new(map(text), tasks, false).unwrap())
}

#[test]
fn oracle_walks_straight_down_a_clear_row() {
    let s = snapshot(&"........\n".repeat(8), &[AgentTask { start: c(3, 3), goal: c(3, 6) }]);
    assert_eq!(oracle_advise(&s, &[0]), vec![(0, Action::East)]);
}

#[test]
fn oracle_waits_when_boxed_in_by_agents() {
    let tasks = [
        AgentTask { start: c(2, 2), goal: c(0, 0) },
        AgentTask { start: c(1, 2), goal: c(4, 4) },
        AgentTask { start: c(3, 2), goal: c(4, 3) },
        AgentTask { start: c(2, 1), goal: c(4, 0) },
        AgentTask { start: c(2, 3), goal: c(0, 4) },
    ];
    let s = snapshot(&".....\n".repeat(5), &tasks);
    assert_eq!(oracle_advise(&s, &[0]), vec![(0, Action::Wait)]);
}

#[test]
fn oracle_breaks_ties_by_action_code() {
    // North (1) and East (2) both shorten the path; North wins.
    let s = snapshot(&".....\n".repeat(5), &[AgentTask { start: c(4, 0), goal: c(0, 4) }]);
    assert_eq!(oracle_advise(&s, &[0]), vec![(0, Action::North)]);
}

fn verify_grid(s: &WorldSnapshot) -> Grid {
    let mut blocked = vec![false; s.width * s.height];
    for o in &s.obstacles {
        blocked[o.row as usize * s.width + o.col as usize] = true;
    }
    Grid { width: s.width, height: s.height, blocked }
}

#[test]
fn oracle_steps_lie_on_shortest_paths_around_other_agents() {
    let mut snapshots = 0;
    let mut moves = 0;
    for i in 0..150u64 {
        let density = [0.0, 0.1, 0.2, 0.3][i as usize % 4];
        let grid = Arc::new(generate_map(10, 10, density, derive(21, "map", i)).unwrap());
        let Ok(inst) = sample_instance(&grid, 8, derive(21, "inst", i)) else { continue };
        let s = WorldSnapshot::from_world(&WorldState::new(grid, &inst, false).unwrap());
        let ids: Vec<usize> = (0..inst.len()).collect();
        let advice = oracle_advise(&s, &ids);
        let g = verify_grid(&s);
        let target = |id: usize, a: Action| {
            let p = s.agent(id).unwrap().pos;
            (p.row + a.delta().0, p.col + a.delta().1)
        };
        for &(id, action) in &advice {
            let me = s.agent(id).unwrap();
            let others: Vec<(i32, i32)> = s
                .occupied_by_others(id)
                .iter()
                .map(|p| (p.row, p.col))
                .collect();
            let goal = (me.goal.row, me.goal.col);
            let pos = (me.pos.row, me.pos.col);
            let dist = if others.contains(&goal) {
                Default::default()
            } else {
                bfs_map(&g, goal, &others)
            };
            match dist.get(&pos) {
                None => assert_eq!(action, Action::Wait, "snapshot {i} agent {id}: unreachable goal"),
                Some(&d) => {
                    assert!(d > 0);
                    // Lowest action code among the shortening moves.
                    let first = Action::ALL[1..]
                        .iter()
                        .find(|a| {
                            let (r, c) = a.delta();
                            dist.get(&(pos.0 + r, pos.1 + c)) == Some(&(d - 1))
                        })
                        .copied()
                        .unwrap();
                    if action == Action::Wait {
                        // Yielded to a lower id heading for the same cell.
                        let wanted = target(id, first);
                        assert!(
                            advice.iter().any(|&(o, a)| o < id && a.is_move() && target(o, a) == wanted),
                            "snapshot {i} agent {id} waits without reason"
                        );
                        continue;
                    }
                    assert_eq!(action, first, "snapshot {i} agent {id}");
                    let next = target(id, action);
                    assert_eq!(dist.get(&next), Some(&(d - 1)), "snapshot {i} agent {id}");
                    moves += 1;
                }
            }
        }
        snapshots += 1;
    }
    assert!(snapshots >= 100, "only {snapshots} snapshots");
    assert!(moves > 500);
}

fn sample_snapshot() -> WorldSnapshot {
    let grid = Arc::new(generate_map(20, 20, 0.2, 5).unwrap());
    let inst = sample_instance(&grid, 6, 6).unwrap();
    WorldSnapshot::from_world(&WorldState::new(grid, &inst, false).unwrap())
}

#[test]
fn oracle_agents_do_not_claim_the_same_cell() {
    let tasks = [
        AgentTask { start: c(0, 1), goal: c(2, 1) },
        AgentTask { start: c(1, 0), goal: c(1, 2) },
    ];
    // Both shortest first steps lead to (1, 1).
    let s = snapshot(&"...\n...\n...\n".to_string(), &tasks);
    assert_eq!(oracle_advise(&s, &[0, 1]), vec![(0, Action::South), (1, Action::Wait)]);
    assert_eq!(oracle_advise(&s, &[1]), vec![(1, Action::East)]);
}

#[test]
fn prompts_are_deterministic_and_complete() {
    let s = sample_snapshot();
    let a = build_prompt(&s, &[1, 4], &PromptConfig::default()).unwrap();
    let b = build_prompt(&s.clone(), &[1, 4], &PromptConfig::default()).unwrap();
    assert_eq!(a.text(), b.text());
    assert_eq!(a.sha256(), b.sha256());
    assert!(!a.truncated);

    let msgs = a.messages();
    assert_eq!(msgs.len(), 6);
    assert_eq!(msgs[0].role, "system");
    assert_eq!(msgs.last().unwrap().content, a.query);
    let text = a.text();
    let simple = text.find(&a.examples[0].0).unwrap();
    let hard = text.find(&a.examples[1].0).unwrap();
    let query = text.rfind(&a.query).unwrap();
    assert!(simple < hard && hard < query);
    for word in ["WAIT", "NORTH", "EAST", "SOUTH", "WEST", "agent <id>: <ACTION>", "(row, col)"] {
        assert!(a.system.contains(word), "preamble lacks {word}");
    }
    assert!(a.query.contains("Controlled agents: 1, 4"));
    for o in &s.obstacles {
        assert!(a.query.contains(&format!("({}, {})", o.row, o.col)));
    }
    // Every example answer parses under its own rules.
    for (q, ans) in &a.examples {
        let ids: Vec<usize> = q
            .lines()
            .find_map(|l| l.strip_prefix("Controlled agents: "))
            .unwrap()
            .split(", ")
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(parse_response(ans, &ids, ParseFallback::Wait).fallback_count(), 0);
    }
}

#[test]
fn prompt_without_controlled_agents_is_an_error() {
    let s = sample_snapshot();
    assert!(matches!(build_prompt(&s, &[], &PromptConfig::default()), Err(HarnessError::Prompt(_))));
}

#[test]
fn over_budget_prompts_keep_only_nearby_obstacles() {
    let grid = Arc::new(generate_map(80, 80, 0.3, 9).unwrap());
    let inst = sample_instance(&grid, 4, 9).unwrap();
    let s = WorldSnapshot::from_world(&WorldState::new(grid, &inst, false).unwrap());
    let full = build_prompt(&s, &[0], &PromptConfig { max_tokens: 1_000_000 }).unwrap();
    let budget = full.estimated_tokens() / 2;
    let cut = build_prompt(&s, &[0], &PromptConfig { max_tokens: budget }).unwrap();
    assert!(cut.truncated);
    assert!(cut.estimated_tokens() <= budget);
    let me = s.agent(0).unwrap().pos;
    let listed = cut.query.lines().nth(3).unwrap();
    for o in &s.obstacles {
        let near = (o.row - me.row + 5) as u32 <= 9 && (o.col - me.col + 5) as u32 <= 9;
        assert_eq!(listed.contains(&format!("({}, {})", o.row, o.col)), near, "{o}");
    }
    let err = build_prompt(&s, &[0], &PromptConfig { max_tokens: 100 });
    assert!(matches!(err, Err(HarnessError::Prompt(_))));
}

#[test]
fn answer_block_is_parsed() {
    let r = parse_response("agent 0: EAST\nagent 1: WAIT", &[0, 1], ParseFallback::Wait);
    assert_eq!(r.action(0), Some(Action::East));
    assert_eq!(r.action(1), Some(Action::Wait));
    assert_eq!(r.fallback_count(), 0);
    let r = parse_response("Agent 2: south\nAGENT 3: West", &[2, 3], ParseFallback::Wait);
    assert_eq!((r.action(2), r.action(3)), (Some(Action::South), Some(Action::West)));
}

#[test]
fn garbled_text_falls_back_for_everyone() {
    for fallback in [ParseFallback::Wait, ParseFallback::DeferToPolicy] {
        let r = parse_response("I think everyone should go home.", &[0, 1, 5], fallback);
        assert_eq!(r.advice.len(), 3);
        for a in &r.advice {
            assert!(a.fallback.as_deref().unwrap().contains("no answer block"));
            let expected = (fallback == ParseFallback::Wait).then_some(Action::Wait);
            assert_eq!(a.action, expected);
        }
    }
}

#[test]
fn only_the_final_block_counts() {
    let text = "Let me think.\nagent 0: NORTH\nagent 1: NORTH\nThat would collide, so instead:\n\nagent 0: EAST\nagent 1: WAIT\n";
    let r = parse_response(text, &[0, 1], ParseFallback::Wait);
    assert_eq!((r.action(0), r.action(1)), (Some(Action::East), Some(Action::Wait)));
}

#[test]
fn bad_entries_fall_back_per_agent() {
    let text = "agent 0: EAST\nagent 1: FLY\nagent 7: NORTH\nagent 3: WEST\nagent 3: NORTH";
    let r = parse_response(text, &[0, 1, 2, 3], ParseFallback::Wait);
    assert_eq!(r.action(0), Some(Action::East));
    let reason = |id| r.get(id).unwrap().fallback.clone().unwrap();
    assert!(reason(1).contains("unknown action"));
    assert!(reason(2).contains("missing"));
    assert!(reason(3).contains("conflicting"));
    assert_eq!(r.action(1), Some(Action::Wait));
    assert!(r.get(7).is_none());
}
