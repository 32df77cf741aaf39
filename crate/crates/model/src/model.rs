//! Decision Transformer forward and backward passes.
//!
//! Each slot contributes three tokens in the order return-to-go, observation,
//! action. The action logits for slot `t` are read from the hidden state of the
//! observation token of slot `t`, which attends to everything up to and
//! including that token.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use dtmapf_core::observation::{CHANNELS, OBS_CELLS};

use crate::batch::TokenBatch;
use crate::config::DTConfig;
use crate::error::ModelError;
use crate::layers::*;
use crate::params::{Layout, Params};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: DTConfig,
    pub params: Params<F>,
}

struct BlockCache<F> {
    ln1: LnCache<F>,
    a: Array2<F>,
    qkv: Array2<F>,
    probs: Vec<Array2<F>>,
    att: Array2<F>,
    drop_att: Option<Array2<F>>,
    ln2: LnCache<F>,
    c: Array2<F>,
    u: Array2<F>,
    g: Array2<F>,
    drop_mlp: Option<Array2<F>>,
}

/// Activations kept for the backward pass.
pub struct Cache<F> {
    batch: usize,
    len: usize,
    cols1: Array2<F>,
    active1: Vec<bool>,
    cols2: Array2<F>,
    active2: Vec<bool>,
    pool_arg: Vec<u32>,
    flat: Array2<F>,
    rtg_norm: Vec<F>,
    ln_e: LnCache<F>,
    drop_e: Option<Array2<F>>,
    blocks: Vec<BlockCache<F>>,
    ln_f: LnCache<F>,
    zf: Array2<F>,
}

/// Result of the masked cross-entropy over action logits.
#[derive(Debug, Clone)]
pub struct LossOutput<F> {
    pub loss: F,
    pub correct: usize,
    pub count: usize,
    pub dlogits: Array2<F>,
}

fn dropout_mask<F: Scalar>(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<F> {
    let keep = F::c(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { F::zero() } else { keep })
}

impl<F: Scalar> Model<F> {
    pub fn new(config: DTConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Arc::new(Layout::new(&config));
        let params = Params::init(layout, config.param_seed);
        Ok(Self { config, params })
    }

    pub fn from_params(config: DTConfig, params: Params<F>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = Layout::new(&config);
        if *params.layout != expected {
            return Err(ModelError::Shape("parameter layout does not match config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.params.layout
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Embeds `n` observations, each 400 binary cells in channel-major order.
    pub fn encode_obs(&self, obs: &[u8]) -> Array2<F> {
        self.encode(obs).0
    }

    #[allow(clippy::type_complexity)]
    fn encode(&self, obs: &[u8]) -> (Array2<F>, (Array2<F>, Vec<bool>, Array2<F>, Vec<bool>, Vec<u32>, Array2<F>)) {
        let p = &self.params;
        let ids = &p.layout.ids;
        let n = obs.len() / OBS_CELLS;
        let mut x0 = Array2::<F>::zeros((n * 100, CHANNELS));
        {
            let dst = x0.as_slice_mut().unwrap();
            for i in 0..n {
                let o = &obs[i * OBS_CELLS..(i + 1) * OBS_CELLS];
                for ch in 0..CHANNELS {
                    for px in 0..100 {
                        if o[ch * 100 + px] != 0 {
                            dst[(i * 100 + px) * CHANNELS + ch] = F::one();
                        }
                    }
                }
            }
        }
        let cols1 = im2col(&x0.view());
        let mut h1 = linear(&cols1.view(), &p.mat(ids.conv1_w), &p.vec(ids.conv1_b));
        let active1 = relu(&mut h1);
        let cols2 = im2col(&h1.view());
        let mut h2 = linear(&cols2.view(), &p.mat(ids.conv2_w), &p.vec(ids.conv2_b));
        let active2 = relu(&mut h2);
        let (pooled, pool_arg) = max_pool(&h2);
        let c2 = pooled.ncols();
        let flat = pooled
            .into_shape_with_order((n, 25 * c2))
            .expect("pooled rows are contiguous");
        let enc = linear(&flat.view(), &p.mat(ids.enc_w), &p.vec(ids.enc_b));
        (enc, (cols1, active1, cols2, active2, pool_arg, flat))
    }

    /// Action logits, one row per slot (`batch * len` rows). Dropout is applied
    /// only when `rng` is given.
    pub fn forward(
        &self,
        batch: &TokenBatch,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<F>, Cache<F>), ModelError> {
        batch.validate(self.config.context_len, self.config.n_actions)?;
        let cfg = &self.config;
        let p = &self.params;
        let ids = &p.layout.ids;
        let (bsz, t) = (batch.batch, batch.len);
        let n_tok = 3 * t;
        let d = cfg.embed_dim;
        let drop_p = if rng.is_some() { cfg.dropout } else { 0.0 };

        let (enc, (cols1, active1, cols2, active2, pool_arg, flat)) = self.encode(&batch.obs);

        let rtg_norm: Vec<F> = batch.rtg.iter().map(|r| F::c(r / cfg.rtg_scale)).collect();
        let mut x = Array2::<F>::zeros((bsz * n_tok, d));
        let (rtg_w, rtg_b) = (p.vec(ids.rtg_w), p.vec(ids.rtg_b));
        let (act_tab, ts_tab) = (p.mat(ids.action), p.mat(ids.timestep));
        for bi in 0..bsz {
            for si in 0..t {
                let i = bi * t + si;
                let base = bi * n_tok + 3 * si;
                let ts = ts_tab.row((batch.timesteps[i] as usize).min(cfg.max_timestep - 1));
                let mut r = x.row_mut(base);
                r.assign(&(&rtg_w * rtg_norm[i]));
                r += &rtg_b;
                r += &ts;
                let mut o = x.row_mut(base + 1);
                o.assign(&enc.row(i));
                o += &ts;
                let mut a = x.row_mut(base + 2);
                a.assign(&act_tab.row(batch.actions[i] as usize));
                a += &ts;
            }
        }
        let (mut x, ln_e) = layer_norm(&x.view(), &p.vec(ids.ln_e_g), &p.vec(ids.ln_e_b));
        let drop_e = match rng.as_deref_mut() {
            Some(r) if drop_p > 0.0 => {
                let m = dropout_mask(r, x.dim(), drop_p);
                x *= &m;
                Some(m)
            }
            _ => None,
        };

        let allowed: Vec<Array2<bool>> = (0..bsz)
            .map(|bi| {
                Array2::from_shape_fn((n_tok, n_tok), |(i, j)| {
                    j == i || (j < i && batch.mask[bi * t + j / 3])
                })
            })
            .collect();

        let heads = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = F::c(1.0 / (dh as f64).sqrt());
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for bid in &ids.blocks {
            let (a, ln1) = layer_norm(&x.view(), &p.vec(bid.ln1_g), &p.vec(bid.ln1_b));
            let qkv = linear(&a.view(), &p.mat(bid.qkv_w), &p.vec(bid.qkv_b));
            let mut att = Array2::<F>::zeros((bsz * n_tok, d));
            let mut probs = Vec::with_capacity(bsz * heads);
            for (bi, allow) in allowed.iter().enumerate() {
                let rows = bi * n_tok..(bi + 1) * n_tok;
                for h in 0..heads {
                    let q = qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                    let k = qkv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                    let v = qkv.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                    let mut sc = q.dot(&k.t()) * scale;
                    masked_softmax(&mut sc, &allow.view());
                    put_block(&mut att, rows.start, h * dh, &sc.dot(&v));
                    probs.push(sc);
                }
            }
            let mut y = linear(&att.view(), &p.mat(bid.proj_w), &p.vec(bid.proj_b));
            let drop_att = match rng.as_deref_mut() {
                Some(r) if drop_p > 0.0 => {
                    let m = dropout_mask(r, y.dim(), drop_p);
                    y *= &m;
                    Some(m)
                }
                _ => None,
            };
            x += &y;
            let (c, ln2) = layer_norm(&x.view(), &p.vec(bid.ln2_g), &p.vec(bid.ln2_b));
            let u = linear(&c.view(), &p.mat(bid.fc_w), &p.vec(bid.fc_b));
            let g = gelu(&u);
            let mut m = linear(&g.view(), &p.mat(bid.out_w), &p.vec(bid.out_b));
            let drop_mlp = match rng.as_deref_mut() {
                Some(r) if drop_p > 0.0 => {
                    let mk = dropout_mask(r, m.dim(), drop_p);
                    m *= &mk;
                    Some(mk)
                }
                _ => None,
            };
            x += &m;
            blocks.push(BlockCache {
                ln1,
                a,
                qkv,
                probs,
                att,
                drop_att,
                ln2,
                c,
                u,
                g,
                drop_mlp,
            });
        }

        let obs_rows: Vec<usize> = (0..bsz * t).map(|i| (i / t) * n_tok + 3 * (i % t) + 1).collect();
        let xo = x.select(Axis(0), &obs_rows);
        let (zf, ln_f) = layer_norm(&xo.view(), &p.vec(ids.ln_f_g), &p.vec(ids.ln_f_b));
        let logits = linear(&zf.view(), &p.mat(ids.head_w), &p.vec(ids.head_b));
        let cache = Cache {
            batch: bsz,
            len: t,
            cols1,
            active1,
            cols2,
            active2,
            pool_arg,
            flat,
            rtg_norm,
            ln_e,
            drop_e,
            blocks,
            ln_f,
            zf,
        };
        Ok((logits, cache))
    }

    /// Logits without keeping activations or applying dropout.
    pub fn logits(&self, batch: &TokenBatch) -> Result<Array2<F>, ModelError> {
        Ok(self.forward(batch, None)?.0)
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the logits.
    pub fn backward(&self, batch: &TokenBatch, cache: &Cache<F>, dlogits: &Array2<F>) -> Params<F> {
        let cfg = &self.config;
        let p = &self.params;
        let ids = &p.layout.ids;
        let mut gr = Params::zeros(p.layout.clone());
        let (bsz, t) = (cache.batch, cache.len);
        let n_tok = 3 * t;
        let d = cfg.embed_dim;

        let dzf = {
            let (mut dw, mut db) = gr.mat_vec_mut(ids.head_w, ids.head_b);
            linear_backward(&cache.zf.view(), &p.mat(ids.head_w), &dlogits.view(), &mut dw, &mut db, true)
                .unwrap()
        };
        let dxo = {
            let (mut dg, mut db) = gr.vec_vec_mut(ids.ln_f_g, ids.ln_f_b);
            layer_norm_backward(&cache.ln_f, &p.vec(ids.ln_f_g), &dzf.view(), &mut dg, &mut db)
        };
        let mut dx = Array2::<F>::zeros((bsz * n_tok, d));
        for i in 0..bsz * t {
            let row = (i / t) * n_tok + 3 * (i % t) + 1;
            dx.row_mut(row).assign(&dxo.row(i));
        }

        let heads = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = F::c(1.0 / (dh as f64).sqrt());
        for (bid, bc) in ids.blocks.iter().zip(&cache.blocks).rev() {
            let mut dm = dx.clone();
            if let Some(mk) = &bc.drop_mlp {
                dm *= mk;
            }
            let mut dg = {
                let (mut dw, mut db) = gr.mat_vec_mut(bid.out_w, bid.out_b);
                linear_backward(&bc.g.view(), &p.mat(bid.out_w), &dm.view(), &mut dw, &mut db, true).unwrap()
            };
            gelu_backward(&bc.u, &mut dg);
            let dc = {
                let (mut dw, mut db) = gr.mat_vec_mut(bid.fc_w, bid.fc_b);
                linear_backward(&bc.c.view(), &p.mat(bid.fc_w), &dg.view(), &mut dw, &mut db, true).unwrap()
            };
            {
                let (mut dgn, mut dbn) = gr.vec_vec_mut(bid.ln2_g, bid.ln2_b);
                dx += &layer_norm_backward(&bc.ln2, &p.vec(bid.ln2_g), &dc.view(), &mut dgn, &mut dbn);
            }

            let mut dy = dx.clone();
            if let Some(mk) = &bc.drop_att {
                dy *= mk;
            }
            let datt = {
                let (mut dw, mut db) = gr.mat_vec_mut(bid.proj_w, bid.proj_b);
                linear_backward(&bc.att.view(), &p.mat(bid.proj_w), &dy.view(), &mut dw, &mut db, true).unwrap()
            };
            let mut dqkv = Array2::<F>::zeros((bsz * n_tok, 3 * d));
            for bi in 0..bsz {
                let rows = bi * n_tok..(bi + 1) * n_tok;
                for h in 0..heads {
                    let probs = &bc.probs[bi * heads + h];
                    let q = bc.qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                    let k = bc.qkv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                    let v = bc.qkv.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                    let d_o = datt.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                    let mut dp = d_o.dot(&v.t());
                    let dv = probs.t().dot(&d_o);
                    softmax_backward(probs, &mut dp);
                    dp *= scale;
                    put_block(&mut dqkv, rows.start, h * dh, &dp.dot(&k));
                    put_block(&mut dqkv, rows.start, d + h * dh, &dp.t().dot(&q));
                    put_block(&mut dqkv, rows.start, 2 * d + h * dh, &dv);
                }
            }
            let da = {
                let (mut dw, mut db) = gr.mat_vec_mut(bid.qkv_w, bid.qkv_b);
                linear_backward(&bc.a.view(), &p.mat(bid.qkv_w), &dqkv.view(), &mut dw, &mut db, true).unwrap()
            };
            let (mut dgn, mut dbn) = gr.vec_vec_mut(bid.ln1_g, bid.ln1_b);
            dx += &layer_norm_backward(&bc.ln1, &p.vec(bid.ln1_g), &da.view(), &mut dgn, &mut dbn);
        }

        if let Some(mk) = &cache.drop_e {
            dx *= mk;
        }
        let dtok = {
            let (mut dg, mut db) = gr.vec_vec_mut(ids.ln_e_g, ids.ln_e_b);
            layer_norm_backward(&cache.ln_e, &p.vec(ids.ln_e_g), &dx.view(), &mut dg, &mut db)
        };

        let mut denc = Array2::<F>::zeros((bsz * t, d));
        for i in 0..bsz * t {
            let base = (i / t) * n_tok + 3 * (i % t);
            let (dr, d_o, da) = (dtok.row(base), dtok.row(base + 1), dtok.row(base + 2));
            {
                let mut w = gr.vec_mut(ids.rtg_w);
                w.scaled_add(cache.rtg_norm[i], &dr);
            }
            {
                let mut b = gr.vec_mut(ids.rtg_b);
                b += &dr;
            }
            {
                let ts = (batch.timesteps[i] as usize).min(cfg.max_timestep - 1);
                let mut tab = gr.mat_mut(ids.timestep);
                let mut row = tab.row_mut(ts);
                row += &dr;
                row += &d_o;
                row += &da;
            }
            {
                let mut tab = gr.mat_mut(ids.action);
                let mut row = tab.row_mut(batch.actions[i] as usize);
                row += &da;
            }
            denc.row_mut(i).assign(&d_o);
        }

        let dflat = {
            let (mut dw, mut db) = gr.mat_vec_mut(ids.enc_w, ids.enc_b);
            linear_backward(&cache.flat.view(), &p.mat(ids.enc_w), &denc.view(), &mut dw, &mut db, true).unwrap()
        };
        let c2 = cfg.conv_channels[1];
        let n_obs = bsz * t;
        let dpooled = dflat
            .into_shape_with_order((n_obs * 25, c2))
            .expect("contiguous");
        let mut dz2 = max_pool_backward(&dpooled, &cache.pool_arg, n_obs * 100);
        relu_backward(&mut dz2, &cache.active2);
        let dcols2 = {
            let (mut dw, mut db) = gr.mat_vec_mut(ids.conv2_w, ids.conv2_b);
            linear_backward(&cache.cols2.view(), &p.mat(ids.conv2_w), &dz2.view(), &mut dw, &mut db, true).unwrap()
        };
        let mut dz1 = col2im(&dcols2, cfg.conv_channels[0]);
        relu_backward(&mut dz1, &cache.active1);
        let (mut dw, mut db) = gr.mat_vec_mut(ids.conv1_w, ids.conv1_b);
        linear_backward(&cache.cols1.view(), &p.mat(ids.conv1_w), &dz1.view(), &mut dw, &mut db, false);
        gr
    }
}

/// Mean cross-entropy over real slots, with its gradient. Padded slots carry
/// zero weight; a batch with no real slot has zero loss and zero gradient.
pub fn masked_cross_entropy<F: Scalar>(logits: &ArrayView2<F>, batch: &TokenBatch) -> LossOutput<F> {
    let count = batch.real_count();
    let mut dlogits = Array2::zeros(logits.dim());
    let mut loss = F::zero();
    let mut correct = 0;
    if count == 0 {
        return LossOutput {
            loss,
            correct,
            count,
            dlogits,
        };
    }
    let inv = F::c(1.0 / count as f64);
    for (i, row) in logits.rows().into_iter().enumerate() {
        if !batch.mask[i] {
            continue;
        }
        let target = batch.actions[i] as usize;
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        let exps: Array1<F> = row.mapv(|v| (v - m).exp());
        let z = exps.sum();
        loss += (m + z.ln() - row[target]) * inv;
        let argmax = argmax(row.iter().copied());
        if argmax == target {
            correct += 1;
        }
        let mut drow = dlogits.row_mut(i);
        drow.assign(&(exps / z * inv));
        drow[target] -= inv;
    }
    LossOutput {
        loss,
        correct,
        count,
        dlogits,
    }
}

/// Index of the first maximum.
pub fn argmax<F: PartialOrd>(xs: impl IntoIterator<Item = F>) -> usize {
    let mut best: Option<(usize, F)> = None;
    for (i, x) in xs.into_iter().enumerate() {
        if best.as_ref().is_none_or(|(_, b)| x > *b) {
            best = Some((i, x));
        }
    }
    best.map_or(0, |(i, _)| i)
}

impl<F: Scalar> Params<F> {
    /// Disjoint mutable views of a matrix tensor and a later vector tensor.
    pub fn mat_vec_mut(&mut self, m: usize, v: usize) -> (ndarray::ArrayViewMut2<'_, F>, ndarray::ArrayViewMut1<'_, F>) {
        let (ms, vs) = (self.layout.tensors[m].clone(), self.layout.tensors[v].clone());
        assert!(ms.range().end <= vs.offset, "tensor order");
        let (lo, hi) = self.data.split_at_mut(vs.offset);
        let mview = ndarray::ArrayViewMut2::from_shape((ms.shape[0], ms.shape[1]), &mut lo[ms.range()]).unwrap();
        (mview, ndarray::ArrayViewMut1::from(&mut hi[..vs.len()]))
    }

    pub fn vec_vec_mut(&mut self, a: usize, b: usize) -> (ndarray::ArrayViewMut1<'_, F>, ndarray::ArrayViewMut1<'_, F>) {
        let (sa, sb) = (self.layout.tensors[a].clone(), self.layout.tensors[b].clone());
        assert!(sa.range().end <= sb.offset, "tensor order");
        let (lo, hi) = self.data.split_at_mut(sb.offset);
        (
            ndarray::ArrayViewMut1::from(&mut lo[sa.range()]),
            ndarray::ArrayViewMut1::from(&mut hi[..sb.len()]),
        )
    }
}
