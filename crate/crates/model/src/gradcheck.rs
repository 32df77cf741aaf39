use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::batch::TokenBatch;
use crate::error::ModelError;
use crate::model::{masked_cross_entropy, Model};

/// Denominator floor so that coordinates whose gradient is (numerically) zero
/// are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn loss(model: &Model<f64>, batch: &TokenBatch) -> Result<f64, ModelError> {
    let logits = model.logits(batch)?;
    Ok(masked_cross_entropy(&logits.view(), batch).loss)
}

/// Compares backpropagated gradients with central differences on up to
/// `per_tensor` coordinates of every tensor (all of them for small tensors).
pub fn gradcheck(
    model: &Model<f64>,
    batch: &TokenBatch,
    per_tensor: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<TensorCheck>, ModelError> {
    let (logits, cache) = model.forward(batch, None)?;
    let out = masked_cross_entropy(&logits.view(), batch);
    let grads = model.backward(batch, &cache, &out.dlogits);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = Vec::new();
    for spec in model.layout().tensors.iter() {
        let n = spec.len();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, per_tensor).into_vec()
        };
        let mut check = TensorCheck {
            name: spec.name.clone(),
            checked: coords.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for c in coords {
            let i = spec.offset + c;
            let orig = probe.params.data[i];
            probe.params.data[i] = orig + eps;
            let up = loss(&probe, batch)?;
            probe.params.data[i] = orig - eps;
            let down = loss(&probe, batch)?;
            probe.params.data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.data[i];
            check.max_abs_err = check.max_abs_err.max((analytic - numeric).abs());
            check.max_rel_err = check.max_rel_err.max(relative_error(analytic, numeric));
        }
        report.push(check);
    }
    Ok(report)
}
