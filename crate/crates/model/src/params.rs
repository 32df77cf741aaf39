//! Flat parameter storage with a named tensor table.

use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::DTConfig;
use crate::scalar::Scalar;
use dtmapf_core::observation::CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Subject to weight decay.
    pub decay: bool,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIds {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub fc_w: usize,
    pub fc_b: usize,
    pub out_w: usize,
    pub out_b: usize,
}

/// Indices into [`Layout::tensors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ids {
    pub conv1_w: usize,
    pub conv1_b: usize,
    pub conv2_w: usize,
    pub conv2_b: usize,
    pub enc_w: usize,
    pub enc_b: usize,
    pub rtg_w: usize,
    pub rtg_b: usize,
    pub action: usize,
    pub timestep: usize,
    pub ln_e_g: usize,
    pub ln_e_b: usize,
    pub blocks: Vec<BlockIds>,
    pub ln_f_g: usize,
    pub ln_f_b: usize,
    pub head_w: usize,
    pub head_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub ids: Ids,
    pub total: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], decay: bool, init: Init) -> usize {
        let spec = TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            decay,
            init,
        };
        self.total += spec.len();
        self.tensors.push(spec);
        self.tensors.len() - 1
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize, std: f64) -> usize {
        self.add(name, &[rows, cols], true, Init::Normal(std))
    }

    fn bias(&mut self, name: String, n: usize) -> usize {
        self.add(name, &[n], false, Init::Zeros)
    }
}

impl Layout {
    pub fn new(cfg: &DTConfig) -> Self {
        let d = cfg.embed_dim;
        let [c1, c2] = cfg.conv_channels;
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let kaiming = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let std = 0.02;
        let proj_std = 0.02 / (2.0 * cfg.n_layers as f64).sqrt();

        let conv1_w = b.matrix("encoder.conv1.weight".into(), 9 * CHANNELS, c1, kaiming(9 * CHANNELS));
        let conv1_b = b.bias("encoder.conv1.bias".into(), c1);
        let conv2_w = b.matrix("encoder.conv2.weight".into(), 9 * c1, c2, kaiming(9 * c1));
        let conv2_b = b.bias("encoder.conv2.bias".into(), c2);
        let enc_w = b.matrix("encoder.fc.weight".into(), 25 * c2, d, (1.0 / (25 * c2) as f64).sqrt());
        let enc_b = b.bias("encoder.fc.bias".into(), d);
        let rtg_w = b.add("embed.rtg.weight", &[d], true, Init::Normal(std));
        let rtg_b = b.bias("embed.rtg.bias".into(), d);
        let action = b.add("embed.action", &[cfg.n_actions, d], false, Init::Normal(std));
        let timestep = b.add("embed.timestep", &[cfg.max_timestep, d], false, Init::Normal(std));
        let ln_e_g = b.add("embed.ln.gain", &[d], false, Init::Ones);
        let ln_e_b = b.bias("embed.ln.bias".into(), d);
        let blocks = (0..cfg.n_layers)
            .map(|l| {
                let p = |s: &str| format!("blocks.{l}.{s}");
                BlockIds {
                    ln1_g: b.add(p("ln1.gain"), &[d], false, Init::Ones),
                    ln1_b: b.bias(p("ln1.bias"), d),
                    qkv_w: b.matrix(p("attn.qkv.weight"), d, 3 * d, std),
                    qkv_b: b.bias(p("attn.qkv.bias"), 3 * d),
                    proj_w: b.matrix(p("attn.proj.weight"), d, d, proj_std),
                    proj_b: b.bias(p("attn.proj.bias"), d),
                    ln2_g: b.add(p("ln2.gain"), &[d], false, Init::Ones),
                    ln2_b: b.bias(p("ln2.bias"), d),
                    fc_w: b.matrix(p("mlp.fc.weight"), d, 4 * d, std),
                    fc_b: b.bias(p("mlp.fc.bias"), 4 * d),
                    out_w: b.matrix(p("mlp.proj.weight"), 4 * d, d, proj_std),
                    out_b: b.bias(p("mlp.proj.bias"), d),
                }
            })
            .collect();
        let ln_f_g = b.add("ln_f.gain", &[d], false, Init::Ones);
        let ln_f_b = b.bias("ln_f.bias".into(), d);
        let head_w = b.matrix("head.weight".into(), d, cfg.n_actions, std);
        let head_b = b.bias("head.bias".into(), cfg.n_actions);
        Self {
            ids: Ids {
                conv1_w,
                conv1_b,
                conv2_w,
                conv2_b,
                enc_w,
                enc_b,
                rtg_w,
                rtg_b,
                action,
                timestep,
                ln_e_g,
                ln_e_b,
                blocks,
                ln_f_g,
                ln_f_b,
                head_w,
                head_b,
            },
            total: b.total,
            tensors: b.tensors,
        }
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Values for every tensor of a [`Layout`], stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub layout: Arc<Layout>,
    pub data: Vec<F>,
}

impl<F: Scalar> Params<F> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![F::zero(); layout.total];
        Self { layout, data }
    }

    /// Draws every tensor from its initializer using `seed`.
    pub fn init(layout: Arc<Layout>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(layout.clone());
        for t in &layout.tensors {
            let slot = &mut p.data[t.range()];
            match t.init {
                Init::Zeros => {}
                Init::Ones => slot.fill(F::one()),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("valid std");
                    for x in slot.iter_mut() {
                        *x = F::c(dist.sample(&mut rng));
                    }
                }
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, id: usize) -> &[F] {
        &self.data[self.layout.tensors[id].range()]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut [F] {
        let r = self.layout.tensors[id].range();
        &mut self.data[r]
    }

    pub fn vec(&self, id: usize) -> ArrayView1<'_, F> {
        ArrayView1::from(self.tensor(id))
    }

    pub fn vec_mut(&mut self, id: usize) -> ArrayViewMut1<'_, F> {
        ArrayViewMut1::from(self.tensor_mut(id))
    }

    pub fn mat(&self, id: usize) -> ArrayView2<'_, F> {
        let s = &self.layout.tensors[id].shape;
        ArrayView2::from_shape((s[0], s[1]), self.tensor(id)).expect("matrix tensor")
    }

    pub fn mat_mut(&mut self, id: usize) -> ArrayViewMut2<'_, F> {
        let s = self.layout.tensors[id].shape.clone();
        ArrayViewMut2::from_shape((s[0], s[1]), self.tensor_mut(id)).expect("matrix tensor")
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x.f64() * x.f64()).sum::<f64>().sqrt()
    }

    pub fn cast<G: Scalar>(&self) -> Params<G> {
        Params {
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| G::c(x.f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parameter_count_is_near_target() {
        let layout = Layout::new(&DTConfig::default());
        let n = layout.total as f64;
        assert!((n / 1.3e6 - 1.0).abs() <= 0.2, "{n} parameters");
    }

    #[test]
    fn tensors_tile_the_buffer() {
        let layout = Layout::new(&DTConfig::tiny());
        let mut next = 0;
        for t in &layout.tensors {
            assert_eq!(t.offset, next);
            next += t.len();
        }
        assert_eq!(next, layout.total);
        let names: std::collections::HashSet<_> = layout.tensors.iter().map(|t| &t.name).collect();
        assert_eq!(names.len(), layout.tensors.len());
    }

    #[test]
    fn init_is_seeded() {
        let layout = Arc::new(Layout::new(&DTConfig::tiny()));
        let a: Params<f32> = Params::init(layout.clone(), 1);
        let b: Params<f32> = Params::init(layout.clone(), 1);
        let c: Params<f32> = Params::init(layout, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
