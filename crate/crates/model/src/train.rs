use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dtmapf_core::dataset::TrajectoryChunk;

use crate::batch::TokenBatch;
use crate::config::DTConfig;
use crate::error::ModelError;
use crate::model::{masked_cross_entropy, Model};
use crate::params::Params;
use crate::scalar::Scalar;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Linear warmup length in steps; 0 disables warmup.
    pub warmup_steps: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 6e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            warmup_steps: 100,
            grad_clip: 1.0,
            batch_size: 32,
            steps: 2000,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<F> {
    pub model: Model<F>,
    pub train: TrainConfig,
    pub m: Params<F>,
    pub v: Params<F>,
    /// Optimizer updates applied so far.
    pub step: u64,
    /// Batches drawn so far, including skipped all-padding batches.
    pub batches: u64,
    pub rng: ChaCha8Rng,
    /// Exponential moving averages over recent steps.
    pub running_loss: f64,
    pub running_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub grad_norm: f64,
    /// Real slots in the batch; zero means no update was made.
    pub weight: usize,
}

const EMA: f64 = 0.98;

impl<F: Scalar> TrainState<F> {
    pub fn new(config: DTConfig, train: TrainConfig) -> Result<Self, ModelError> {
        let model = Model::new(config)?;
        let layout = model.layout().clone();
        let rng = ChaCha8Rng::seed_from_u64(train.seed);
        Ok(Self {
            model,
            train,
            m: Params::zeros(layout.clone()),
            v: Params::zeros(layout),
            step: 0,
            batches: 0,
            rng,
            running_loss: f64::NAN,
            running_accuracy: f64::NAN,
        })
    }

    /// One AdamW update on `batch`. An all-padding batch leaves the state
    /// untouched apart from the batch counter.
    pub fn train_step(&mut self, batch: &TokenBatch) -> Result<StepStats, ModelError> {
        self.batches += 1;
        if batch.real_count() == 0 {
            return Ok(StepStats {
                step: self.step,
                loss: 0.0,
                accuracy: f64::NAN,
                grad_norm: 0.0,
                weight: 0,
            });
        }
        let (logits, cache) = self.model.forward(batch, Some(&mut self.rng))?;
        let out = masked_cross_entropy(&logits.view(), batch);
        let mut grads = self.model.backward(batch, &cache, &out.dlogits);
        let loss = out.loss.f64();
        let grad_norm = grads.norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(ModelError::NonFinite {
                step: self.step,
                batch: self.batches - 1,
                grad_norm,
            });
        }
        if self.train.grad_clip > 0.0 && grad_norm > self.train.grad_clip {
            let s = F::c(self.train.grad_clip / grad_norm);
            grads.data.iter_mut().for_each(|g| *g *= s);
        }
        self.adamw(&grads);
        let accuracy = out.correct as f64 / out.count as f64;
        let ema = |old: f64, new: f64| if old.is_nan() { new } else { EMA * old + (1.0 - EMA) * new };
        self.running_loss = ema(self.running_loss, loss);
        self.running_accuracy = ema(self.running_accuracy, accuracy);
        Ok(StepStats {
            step: self.step,
            loss,
            accuracy,
            grad_norm,
            weight: out.count,
        })
    }

    fn adamw(&mut self, grads: &Params<F>) {
        let tc = &self.train;
        self.step += 1;
        let t = self.step as i32;
        let lr = tc.lr_at(self.step - 1);
        let bc1 = 1.0 - tc.beta1.powi(t);
        let bc2 = 1.0 - tc.beta2.powi(t);
        let (b1, b2) = (F::c(tc.beta1), F::c(tc.beta2));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        let step_size = F::c(lr / bc1);
        let inv_bc2 = F::c(1.0 / bc2);
        let eps = F::c(tc.eps);
        let layout = self.model.params.layout.clone();
        for spec in &layout.tensors {
            let decay = if spec.decay { F::c(1.0 - lr * tc.weight_decay) } else { F::one() };
            let r = spec.range();
            let p = &mut self.model.params.data[r.clone()];
            let m = &mut self.m.data[r.clone()];
            let v = &mut self.v.data[r.clone()];
            for (((p, m), v), g) in p.iter_mut().zip(m).zip(v).zip(&grads.data[r.clone()]) {
                *m = b1 * *m + one_b1 * *g;
                *v = b2 * *v + one_b2 * *g * *g;
                *p = *p * decay - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }

    /// Draws a batch of chunks with the state's generator.
    pub fn sample_batch(&mut self, chunks: &[TrajectoryChunk]) -> TokenBatch {
        let k = self.train.batch_size.min(chunks.len());
        let idx = index::sample(&mut self.rng, chunks.len(), k);
        let picked: Vec<&TrajectoryChunk> = idx.iter().map(|i| &chunks[i]).collect();
        TokenBatch::from_chunks(&picked)
    }

    /// Trains until `self.step` reaches `until`, writing a CSV row every
    /// `log_every` updates when `log` is given.
    pub fn train_until(
        &mut self,
        chunks: &[TrajectoryChunk],
        until: u64,
        mut log: Option<&mut dyn Write>,
    ) -> Result<Vec<StepStats>, ModelError> {
        if chunks.is_empty() {
            return Err(ModelError::Shape("no training chunks".into()));
        }
        let mut history = Vec::new();
        while self.step < until {
            let batch = self.sample_batch(chunks);
            let stats = self.train_step(&batch)?;
            if stats.weight == 0 {
                continue;
            }
            if let Some(w) = log.as_deref_mut() {
                if self.train.log_every > 0 && self.step % self.train.log_every == 0 {
                    writeln!(
                        w,
                        "{},{:.6},{:.6},{:.6}",
                        self.step, stats.loss, stats.accuracy, stats.grad_norm
                    )?;
                }
            }
            history.push(stats);
        }
        Ok(history)
    }
}

pub const LOG_HEADER: &str = "step,loss,accuracy,grad_norm";

/// Loss and accuracy of `model` over all chunks, without dropout.
pub fn evaluate<F: Scalar>(
    model: &Model<F>,
    chunks: &[TrajectoryChunk],
    batch_size: usize,
) -> Result<(f64, f64), ModelError> {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut count = 0;
    for group in chunks.chunks(batch_size.max(1)) {
        let refs: Vec<&TrajectoryChunk> = group.iter().collect();
        let batch = TokenBatch::from_chunks(&refs);
        let logits = model.logits(&batch)?;
        let out = masked_cross_entropy(&logits.view(), &batch);
        loss += out.loss.f64() * out.count as f64;
        correct += out.correct;
        count += out.count;
    }
    if count == 0 {
        return Ok((0.0, f64::NAN));
    }
    Ok((loss / count as f64, correct as f64 / count as f64))
}
