mod common;

use common::random_batch;
use dtmapf_model::gradcheck::gradcheck;
use dtmapf_model::{masked_cross_entropy, DTConfig, Model, TrainConfig, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tiny double-precision model with non-zero biases so that no ReLU sits
/// exactly on its kink.
fn tiny_f64() -> Model<f64> {
    let mut m: Model<f64> = Model::new(DTConfig::tiny()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let layout = m.layout().clone();
    for t in &layout.tensors {
        let scale = if t.name.ends_with("bias") { 0.1 } else { 0.0 };
        for x in &mut m.params.data[t.range()] {
            *x += scale * rng.random_range(-1.0..1.0);
        }
    }
    m
}

#[test]
fn gradients_match_finite_differences() {
    let model = tiny_f64();
    let batch = random_batch(5, 4, &[4, 2, 0], 0.3);
    let report = gradcheck(&model, &batch, 200, 1e-5, 1).unwrap();
    assert_eq!(report.len(), model.layout().tensors.len());
    for t in &report {
        assert!(t.max_rel_err <= 1e-4, "{}: rel {:e} abs {:e}", t.name, t.max_rel_err, t.max_abs_err);
    }
}

#[test]
fn logits_are_causal() {
    let model: Model<f64> = Model::new(DTConfig::tiny()).unwrap();
    let base = random_batch(7, 4, &[4, 4], 0.3);
    let logits = model.logits(&base).unwrap();
    // Interleaved position of slot s is 3s (rtg), 3s+1 (obs), 3s+2 (action).
    for p in 0..12 {
        let mut pert = base.clone();
        for i in 0..pert.batch * pert.len {
            let s = i % pert.len;
            if 3 * s > p {
                pert.rtg[i] += 7.0;
            }
            if 3 * s + 1 > p {
                let o = &mut pert.obs[i * 400..(i + 1) * 400];
                o.iter_mut().for_each(|v| *v = 1 - *v);
                pert.timesteps[i] += 3;
            }
            if 3 * s + 2 > p {
                pert.actions[i] = (pert.actions[i] + 2) % 5;
            }
        }
        let out = model.logits(&pert).unwrap();
        for i in 0..base.batch * base.len {
            let s = i % base.len;
            if 3 * s + 1 <= p {
                for a in 0..5 {
                    assert!((logits[[i, a]] - out[[i, a]]).abs() <= 1e-6, "p={p} slot={s}");
                }
            }
        }
    }
}

#[test]
fn padded_slots_do_not_affect_loss() {
    let model: Model<f64> = Model::new(DTConfig::tiny()).unwrap();
    let base = random_batch(8, 4, &[2, 4], 0.3);
    let mut dirty = base.clone();
    for i in 0..2 {
        let j = 2 + i;
        dirty.rtg[j] = 99.0;
        dirty.actions[j] = 3;
        dirty.timesteps[j] = 9;
        dirty.obs[j * 400..(j + 1) * 400].fill(1);
    }
    let l0 = masked_cross_entropy(&model.logits(&base).unwrap().view(), &base).loss;
    let l1 = masked_cross_entropy(&model.logits(&dirty).unwrap().view(), &dirty).loss;
    assert_eq!(l0, l1);
}

#[test]
fn fully_padded_row_is_finite_and_ignored() {
    let model: Model<f64> = Model::new(DTConfig::tiny()).unwrap();
    let batch = random_batch(9, 4, &[3, 0], 0.3);
    let logits = model.logits(&batch).unwrap();
    assert!(logits.iter().all(|v| v.is_finite()));
    let out = masked_cross_entropy(&logits.view(), &batch);
    assert_eq!(out.count, 3);
    assert!(out.dlogits.rows().into_iter().skip(4).all(|r| r.iter().all(|v| *v == 0.0)));
}

#[test]
fn batch_rows_are_independent() {
    let model: Model<f64> = Model::new(DTConfig::tiny()).unwrap();
    let batch = random_batch(10, 4, &[4, 1, 3], 0.3);
    let logits = model.logits(&batch).unwrap();
    let order = [2usize, 0, 1];
    let mut perm = batch.clone();
    for (dst, &src) in order.iter().enumerate() {
        for s in 0..batch.len {
            let (a, b) = (dst * batch.len + s, src * batch.len + s);
            perm.rtg[a] = batch.rtg[b];
            perm.actions[a] = batch.actions[b];
            perm.timesteps[a] = batch.timesteps[b];
            perm.mask[a] = batch.mask[b];
            perm.obs[a * 400..(a + 1) * 400].copy_from_slice(&batch.obs[b * 400..(b + 1) * 400]);
        }
    }
    let out = model.logits(&perm).unwrap();
    for (dst, &src) in order.iter().enumerate() {
        for s in 0..batch.len {
            for a in 0..5 {
                let d = out[[dst * batch.len + s, a]] - logits[[src * batch.len + s, a]];
                assert!(d.abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let model: Model<f32> = Model::new(DTConfig::default()).unwrap();
    let batch = random_batch(11, 50, &[50, 30, 10, 50], 0.1);
    let out = masked_cross_entropy(&model.logits(&batch).unwrap().view(), &batch);
    assert!((out.loss as f64 - 5f64.ln()).abs() <= 0.15, "loss {}", out.loss);
}

#[test]
fn encoder_is_deterministic_and_distinguishes_inputs() {
    let model: Model<f32> = Model::new(DTConfig::toy()).unwrap();
    let batch = random_batch(12, 4, &[2], 0.2);
    let zeros = vec![0u8; 400];
    let z = model.encode_obs(&zeros);
    assert!(z.iter().all(|v| v.is_finite()));
    let a = model.encode_obs(&batch.obs);
    let b = model.encode_obs(&batch.obs);
    assert_eq!(a, b);
    let diff: f32 = (&a.row(0) - &a.row(1)).mapv(f32::abs).sum();
    assert!(diff > 1e-4);
}

#[test]
fn single_batch_loss_strictly_decreases() {
    let cfg = DTConfig {
        dropout: 0.0,
        ..DTConfig::toy()
    };
    let train = TrainConfig {
        lr: 1e-4,
        warmup_steps: 0,
        ..TrainConfig::default()
    };
    let mut state: TrainState<f32> = TrainState::new(cfg, train).unwrap();
    let batch = random_batch(13, 50, &[50, 20, 35, 8], 0.1);
    let mut last = f64::INFINITY;
    for step in 0..20 {
        let s = state.train_step(&batch).unwrap();
        assert!(s.loss < last, "step {step}: {} >= {last}", s.loss);
        last = s.loss;
    }
}

#[test]
fn all_padding_batch_is_a_no_op() {
    let mut state: TrainState<f32> = TrainState::new(DTConfig::tiny(), TrainConfig::default()).unwrap();
    let before = state.model.params.clone();
    let batch = random_batch(14, 4, &[0, 0], 0.3);
    let s = state.train_step(&batch).unwrap();
    assert_eq!((s.weight, s.loss), (0, 0.0));
    assert_eq!(state.model.params, before);
    assert_eq!(state.step, 0);
}
