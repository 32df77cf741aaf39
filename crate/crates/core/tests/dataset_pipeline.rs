use std::sync::Arc;

use dtmapf_core::dataset::{
    build_corpus, chunk, compute_rtg, dechunk, read_dataset, rollout_expert, write_dataset,
    AgentTrajectory, CorpusSpec, Slot, Transition,
};
use dtmapf_core::planner::{plan_cbs, CbsConfig};
use dtmapf_core::{generate_map, sample_instance, Action, EpisodeConfig, Observation};
use dtmapf_verify::suffix_sums;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn rtg_matches_suffix_sum_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let rewards: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..20.0)).collect();
        let rtg = compute_rtg(&rewards);
        for (a, b) in rtg.iter().zip(suffix_sums(&rewards)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn synthetic(len: usize, seed: u64) -> AgentTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AgentTrajectory {
        episode_id: seed,
        agent_id: 0,
        transitions: (0..len)
            .map(|t| {
                let mut obs = Observation::zeros();
                for _ in 0..20 {
                    obs.set(rng.random_range(0..4), rng.random_range(0..10), rng.random_range(0..10), true);
                }
                Transition {
                    rtg: rng.random_range(-50.0f32..20.0) as f64,
                    obs,
                    action: Action::from_code(rng.random_range(0..5)).unwrap(),
                    timestep: t as u32,
                    reward: 0.0,
                }
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn chunk_round_trip(len in 0usize..400, seed in any::<u64>()) {
        let traj = synthetic(len, seed);
        let chunks = chunk(&traj, 50, 50);
        prop_assert_eq!(chunks.len(), len.div_ceil(50));
        prop_assert!(chunks.iter().all(|c| c.is_well_formed()));
        let expected: Vec<Slot> = traj.transitions.iter().map(Slot::from).collect();
        prop_assert_eq!(dechunk(&chunks), expected);
    }
}

/// Move costs -0.3, waiting off goal -0.5, and the step onto the goal adds +20.
fn expected_reward(action: Action, arrives: bool) -> f64 {
    let base = if action.is_move() { -0.3 } else { -0.5 };
    if arrives {
        base + 20.0
    } else {
        base
    }
}

#[test]
fn stored_rewards_match_plan() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    while checked < 30 {
        let map = Arc::new(generate_map(12, 12, 0.15, rng.random()).unwrap());
        let Ok(inst) = sample_instance(&map, 6, rng.random()) else {
            continue;
        };
        let plan = plan_cbs(&map, &inst, &CbsConfig::default()).unwrap();
        let trajs = rollout_expert(map, &inst, &plan, &EpisodeConfig::default(), checked).unwrap();
        for (a, traj) in trajs.iter().enumerate() {
            let path = &plan.paths[a];
            assert_eq!(traj.transitions.len(), path.len() - 1);
            for (t, tr) in traj.transitions.iter().enumerate() {
                assert_eq!(path[t].offset(tr.action), path[t + 1]);
                let want = expected_reward(tr.action, t + 1 == path.len() - 1);
                assert!((tr.reward - want).abs() < 1e-12);
            }
            if let Some(first) = traj.transitions.first() {
                assert!((first.rtg - traj.total_return()).abs() <= 1e-12);
            }
        }
        checked += 1;
    }
}

#[test]
fn dataset_file_round_trip_is_bit_exact() {
    let spec = CorpusSpec {
        agent_counts: vec![4],
        grid_sizes: vec![10],
        densities: vec![0.1],
        envs_per_combination: 3,
        ..CorpusSpec::desk()
    };
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let meta = build_corpus(&spec, &a).unwrap();
    let (meta2, chunks) = read_dataset(&a).unwrap();
    assert_eq!(meta, meta2);
    assert_eq!(chunks.len(), meta.chunks);
    write_dataset(&b, &meta2, &chunks).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn desk_corpus_is_deterministic() {
    let spec = CorpusSpec::desk();
    assert_eq!(spec.enumerate().len(), 40);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let meta = build_corpus(&spec, &a).unwrap();
    build_corpus(&spec, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(meta.episodes + meta.skips.len(), 40);
    assert_eq!(meta.combos.len(), 8);
}

#[test]
fn paper_grid_enumerates_3840_environments() {
    assert_eq!(CorpusSpec::paper().enumerate().len(), 3840);
}
