use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::batch::{HistorySlot, TokenBatch};
use crate::error::ModelError;
use crate::model::{argmax, Model};
use crate::scalar::Scalar;

impl<F: Scalar> Model<F> {
    /// Action logits for the last slot of `history`, using at most the last
    /// `context_len` slots. The last slot's action is ignored.
    pub fn next_action_logits(&self, history: &[HistorySlot]) -> Result<Vec<f64>, ModelError> {
        let batch = TokenBatch::from_history(history, self.config.context_len)?;
        let logits = self.logits(&batch)?;
        Ok(logits.row(batch.len - 1).iter().map(|x| x.f64()).collect())
    }

    /// Greedy action code, or a draw from the softmax when `sample` is given.
    pub fn predict_action(
        &self,
        history: &[HistorySlot],
        sample: Option<&mut ChaCha8Rng>,
    ) -> Result<u8, ModelError> {
        let logits = self.next_action_logits(history)?;
        let code = match sample {
            None => argmax(logits.iter().copied()),
            Some(rng) => {
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
                let mut pick = w.len() - 1;
                for (i, wi) in w.iter().enumerate() {
                    if u < *wi {
                        pick = i;
                        break;
                    }
                    u -= wi;
                }
                pick
            }
        };
        Ok(code as u8)
    }
}
