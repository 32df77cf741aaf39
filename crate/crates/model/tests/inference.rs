mod common;

use common::{random_chunk, random_obs};
use dtmapf_core::dataset::TrajectoryChunk;
use dtmapf_model::{DTConfig, HistorySlot, Model, TrainConfig, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn history(len: usize, seed: u64) -> Vec<HistorySlot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|t| HistorySlot {
            rtg: 20.0 - 0.3 * t as f64,
            obs: random_obs(&mut rng, 0.2),
            action: Some((t % 5) as u8),
            timestep: t as u32,
        })
        .collect()
}

#[test]
fn same_history_same_action() {
    let model: Model<f32> = Model::new(DTConfig::toy()).unwrap();
    let h = history(7, 1);
    let a = model.predict_action(&h, None).unwrap();
    assert_eq!(a, model.predict_action(&h, None).unwrap());
    let mut r1 = ChaCha8Rng::seed_from_u64(5);
    let mut r2 = ChaCha8Rng::seed_from_u64(5);
    assert_eq!(
        model.predict_action(&h, Some(&mut r1)).unwrap(),
        model.predict_action(&h, Some(&mut r2)).unwrap()
    );
    assert!(model.predict_action(&[], None).is_err());
}

#[test]
fn only_the_last_context_slots_matter() {
    let cfg = DTConfig {
        context_len: 5,
        ..DTConfig::toy()
    };
    let model: Model<f64> = Model::new(cfg).unwrap();
    let mut long = history(12, 2);
    let tail = long[7..].to_vec();
    let want = model.next_action_logits(&tail).unwrap();
    long[0].rtg = -100.0;
    long[3].action = Some(4);
    assert_eq!(model.next_action_logits(&long).unwrap(), want);
}

#[test]
fn last_action_is_ignored() {
    let model: Model<f64> = Model::new(DTConfig::toy()).unwrap();
    let mut h = history(4, 3);
    let a = model.next_action_logits(&h).unwrap();
    h[3].action = None;
    assert_eq!(model.next_action_logits(&h).unwrap(), a);
}

#[test]
fn overfit_model_replays_its_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let chunk: TrajectoryChunk = random_chunk(&mut rng, 50, 24, 0.1);
    let train = TrainConfig {
        lr: 1e-3,
        warmup_steps: 10,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let mut state: TrainState<f32> = TrainState::new(DTConfig::toy(), train).unwrap();
    state.train_until(std::slice::from_ref(&chunk), 150, None).unwrap();
    let slots = chunk.real_slots();
    let hist: Vec<HistorySlot> = slots
        .iter()
        .map(|s| HistorySlot {
            rtg: s.rtg as f64,
            obs: s.obs.clone(),
            action: Some(s.action),
            timestep: s.timestep as u32,
        })
        .collect();
    for t in 0..hist.len() {
        let got = state.model.predict_action(&hist[..=t], None).unwrap();
        assert_eq!(got, slots[t].action, "slot {t}");
    }
}
