//! Forward and backward kernels. Activations are row-major matrices with one
//! row per token (or per pixel for the convolutions).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use crate::scalar::Scalar;

pub const LN_EPS: f64 = 1e-5;

/// `x W + b`.
pub fn linear<F: Scalar>(x: &ArrayView2<F>, w: &ArrayView2<F>, b: &ArrayView1<F>) -> Array2<F> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn linear_backward<F: Scalar>(
    x: &ArrayView2<F>,
    w: &ArrayView2<F>,
    dy: &ArrayView2<F>,
    dw: &mut ArrayViewMut2<F>,
    db: &mut ArrayViewMut1<F>,
    need_dx: bool,
) -> Option<Array2<F>> {
    ndarray::linalg::general_mat_mul(F::one(), &x.t(), dy, F::one(), dw);
    *db += &dy.sum_axis(Axis(0));
    need_dx.then(|| dy.dot(&w.t()))
}

pub struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

pub fn layer_norm<F: Scalar>(
    x: &ArrayView2<F>,
    g: &ArrayView1<F>,
    b: &ArrayView1<F>,
) -> (Array2<F>, LnCache<F>) {
    let d = F::c(x.ncols() as f64);
    let eps = F::c(LN_EPS);
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| *v * *v).sum::<F>() / d;
        *r = F::one() / (var + eps).sqrt();
        row *= *r;
    }
    let mut y = &xhat * g;
    y += b;
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward<F: Scalar>(
    cache: &LnCache<F>,
    g: &ArrayView1<F>,
    dy: &ArrayView2<F>,
    dg: &mut ArrayViewMut1<F>,
    db: &mut ArrayViewMut1<F>,
) -> Array2<F> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = F::c(dy.ncols() as f64);
    let mut dx = dy * g;
    for ((mut row, xh), r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.rstd) {
        let mean = row.sum() / d;
        let mean_x = row.iter().zip(xh).map(|(a, b)| *a * *b).sum::<F>() / d;
        row.zip_mut_with(&xh, |v, x| *v = (*v - mean - *x * mean_x) * *r);
    }
    dx
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

pub fn gelu<F: Scalar>(u: &Array2<F>) -> Array2<F> {
    let (k, c, half) = (F::c(GELU_K), F::c(GELU_C), F::c(0.5));
    u.mapv(|x| half * x * (F::one() + (k * (x + c * x * x * x)).tanh()))
}

pub fn gelu_backward<F: Scalar>(u: &Array2<F>, dy: &mut Array2<F>) {
    let (k, c, half, three) = (F::c(GELU_K), F::c(GELU_C), F::c(0.5), F::c(3.0));
    dy.zip_mut_with(u, |d, &x| {
        let th = (k * (x + c * x * x * x)).tanh();
        let grad = half * (F::one() + th) + half * x * (F::one() - th * th) * k * (F::one() + three * c * x * x);
        *d *= grad;
    });
}

/// 3x3, stride 1, zero padding 1 patches of a batch of 10x10 images stored as
/// rows `image * 100 + r * 10 + c` with one column per channel. Patch columns
/// are ordered `(kr * 3 + kc) * channels + channel`.
pub fn im2col<F: Scalar>(x: &ArrayView2<F>) -> Array2<F> {
    let ch = x.ncols();
    let images = x.nrows() / 100;
    let mut out = Array2::zeros((x.nrows(), 9 * ch));
    let src = x.as_standard_layout();
    let src = src.as_slice().unwrap();
    let dst = out.as_slice_mut().unwrap();
    for n in 0..images {
        for r in 0..10i32 {
            for c in 0..10i32 {
                let row = n * 100 + (r * 10 + c) as usize;
                for kr in 0..3i32 {
                    let sr = r + kr - 1;
                    if !(0..10).contains(&sr) {
                        continue;
                    }
                    for kc in 0..3i32 {
                        let sc = c + kc - 1;
                        if !(0..10).contains(&sc) {
                            continue;
                        }
                        let from = (n * 100 + (sr * 10 + sc) as usize) * ch;
                        let to = row * 9 * ch + (kr * 3 + kc) as usize * ch;
                        dst[to..to + ch].copy_from_slice(&src[from..from + ch]);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`].
pub fn col2im<F: Scalar>(cols: &Array2<F>, ch: usize) -> Array2<F> {
    let images = cols.nrows() / 100;
    let mut out = Array2::<F>::zeros((cols.nrows(), ch));
    let src = cols.as_slice().unwrap();
    let dst = out.as_slice_mut().unwrap();
    for n in 0..images {
        for r in 0..10i32 {
            for c in 0..10i32 {
                let row = n * 100 + (r * 10 + c) as usize;
                for kr in 0..3i32 {
                    let sr = r + kr - 1;
                    if !(0..10).contains(&sr) {
                        continue;
                    }
                    for kc in 0..3i32 {
                        let sc = c + kc - 1;
                        if !(0..10).contains(&sc) {
                            continue;
                        }
                        let to = (n * 100 + (sr * 10 + sc) as usize) * ch;
                        let from = row * 9 * ch + (kr * 3 + kc) as usize * ch;
                        for i in 0..ch {
                            dst[to + i] += src[from + i];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2x2 max pooling from 10x10 to 5x5. Returns the pooled rows and, for each
/// output element, the flat index of the winning input element.
pub fn max_pool<F: Scalar>(x: &Array2<F>) -> (Array2<F>, Vec<u32>) {
    let ch = x.ncols();
    let images = x.nrows() / 100;
    let mut out = Array2::zeros((images * 25, ch));
    let mut arg = vec![0u32; images * 25 * ch];
    let src = x.as_slice().unwrap();
    let dst = out.as_slice_mut().unwrap();
    for n in 0..images {
        for pr in 0..5 {
            for pc in 0..5 {
                let orow = n * 25 + pr * 5 + pc;
                for c in 0..ch {
                    let mut best = usize::MAX;
                    for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = (n * 100 + (2 * pr + dr) * 10 + 2 * pc + dc) * ch + c;
                        if best == usize::MAX || src[i] > src[best] {
                            best = i;
                        }
                    }
                    dst[orow * ch + c] = src[best];
                    arg[orow * ch + c] = best as u32;
                }
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward<F: Scalar>(dy: &Array2<F>, arg: &[u32], input_rows: usize) -> Array2<F> {
    let ch = dy.ncols();
    let mut dx = Array2::zeros((input_rows, ch));
    let dst = dx.as_slice_mut().unwrap();
    for (g, &i) in dy.iter().zip(arg) {
        dst[i as usize] += *g;
    }
    dx
}

/// In-place ReLU; returns the pre-activation sign mask.
pub fn relu<F: Scalar>(x: &mut Array2<F>) -> Vec<bool> {
    let mut active = Vec::with_capacity(x.len());
    for v in x.iter_mut() {
        let on = *v > F::zero();
        if !on {
            *v = F::zero();
        }
        active.push(on);
    }
    active
}

pub fn relu_backward<F: Scalar>(dy: &mut Array2<F>, active: &[bool]) {
    for (d, on) in dy.iter_mut().zip(active) {
        if !on {
            *d = F::zero();
        }
    }
}

/// Row softmax of `scores` restricted to `allowed`; disallowed entries get 0.
pub fn masked_softmax<F: Scalar>(scores: &mut Array2<F>, allowed: &ArrayView2<bool>) {
    for (mut row, ok) in scores.rows_mut().into_iter().zip(allowed.rows()) {
        let mut m = F::neg_infinity();
        for (v, a) in row.iter().zip(ok) {
            if *a && *v > m {
                m = *v;
            }
        }
        let mut z = F::zero();
        for (v, a) in row.iter_mut().zip(ok) {
            *v = if *a { (*v - m).exp() } else { F::zero() };
            z += *v;
        }
        row /= z;
    }
}

/// Gradient of softmax rows: `P * (dP - sum(dP * P))`.
pub fn softmax_backward<F: Scalar>(p: &Array2<F>, dp: &mut Array2<F>) {
    for (mut drow, prow) in dp.rows_mut().into_iter().zip(p.rows()) {
        let dot = drow.iter().zip(prow).map(|(a, b)| *a * *b).sum::<F>();
        drow.zip_mut_with(&prow, |d, &pv| *d = pv * (*d - dot));
    }
}

/// Copies `src` into columns `[col, col + src.ncols())` of rows
/// `[row, row + src.nrows())` of `dst`.
pub fn put_block<F: Scalar>(dst: &mut Array2<F>, row: usize, col: usize, src: &Array2<F>) {
    dst.slice_mut(s![row..row + src.nrows(), col..col + src.ncols()])
        .assign(src);
}
