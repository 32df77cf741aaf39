#![allow(dead_code)]

use dtmapf_core::dataset::{Slot, TrajectoryChunk};
use dtmapf_core::Observation;
use dtmapf_model::TokenBatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_obs(rng: &mut ChaCha8Rng, density: f64) -> Observation {
    let mut o = Observation::zeros();
    for ch in 0..4 {
        for r in 0..10 {
            for c in 0..10 {
                o.set(ch, r, c, rng.random::<f64>() < density);
            }
        }
    }
    o
}

pub fn random_chunk(rng: &mut ChaCha8Rng, k: usize, real: usize, density: f64) -> TrajectoryChunk {
    let mut slots = vec![Slot::default(); k];
    for (t, s) in slots.iter_mut().take(real).enumerate() {
        *s = Slot {
            rtg: rng.random_range(-10.0f32..20.0),
            action: rng.random_range(0..5),
            timestep: t as u16 + rng.random_range(0..3),
            obs: random_obs(rng, density),
        };
    }
    TrajectoryChunk {
        episode_id: 0,
        agent_id: 0,
        chunk_index: 0,
        slots,
        mask: (0..k).map(|i| i < real).collect(),
    }
}

pub fn random_batch(seed: u64, k: usize, lens: &[usize], density: f64) -> TokenBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunks: Vec<TrajectoryChunk> = lens.iter().map(|&l| random_chunk(&mut rng, k, l, density)).collect();
    let refs: Vec<&TrajectoryChunk> = chunks.iter().collect();
    TokenBatch::from_chunks(&refs)
}
