//! Dense building blocks with hand-written backward passes.
//!
//! Row convention: a sequence is an `L x C` matrix and a linear layer maps
//! it as `x W + b` with `W: in x out` and `b: 1 x out`.

use ndarray::{Array2, ArrayView2, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

/// `x W + b` with `b` broadcast over rows.
pub fn linear(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates weight and bias gradients; returns the input gradient.
pub fn linear_backward(
    x: ArrayView2<f64>,
    w: &Array2<f64>,
    dy: ArrayView2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    accumulate_weight_grad(x, dy, dw);
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&w.t())
}

/// `dw += x^T dy`.
pub fn accumulate_weight_grad(x: ArrayView2<f64>, dy: ArrayView2<f64>, dw: &mut Array2<f64>) {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), &dy, 1.0, dw);
}

/// `x tanh(softplus(x))`, using `tanh(ln(1 + e^x)) = n / (n + 2)` with
/// `n = e^x (e^x + 2)`.
pub fn mish(x: f64) -> f64 {
    if x > 20.0 {
        return x;
    }
    let w = x.exp();
    let n = w * (w + 2.0);
    x * n / (n + 2.0)
}

pub fn mish_grad(x: f64) -> f64 {
    if x > 20.0 {
        return 1.0;
    }
    let w = x.exp();
    let n = w * (w + 2.0);
    let tsp = n / (n + 2.0);
    tsp + x * (1.0 - tsp * tsp) * w / (1.0 + w)
}

pub fn mish_array(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(mish)
}

/// `dy * mish'(x)`.
pub fn mish_backward(x: &Array2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
    Zip::from(x).and(&dy).map_collect(|&x, &g| g * mish_grad(x))
}

/// Per-row normalization cache.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

pub fn layer_norm(
    x: ArrayView2<f64>,
    gamma: &Array2<f64>,
    beta: &Array2<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let c = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / c;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / c;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * inv);
        inv_std.push(inv);
    }
    let y = &xhat * gamma + beta;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Array2<f64>,
    dy: ArrayView2<f64>,
    dgamma: &mut Array2<f64>,
    dbeta: &mut Array2<f64>,
) -> Array2<f64> {
    *dgamma += &(&dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = &dy * gamma;
    let c = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, (mut out, (g, xh))) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows().into_iter().zip(cache.xhat.rows()))
        .enumerate()
    {
        let mean_g = g.sum() / c;
        let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / c;
        let inv = cache.inv_std[i];
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gv, &xv| *o = inv * (gv - mean_g - xv * mean_gx));
    }
    dx
}

/// Row-wise softmax in place.
pub fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Gradient of the pre-softmax scores given probabilities `p` and `dp`.
pub fn softmax_rows_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut ds = p * dp;
    for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
        let dot = row.sum();
        Zip::from(&mut row)
            .and(&prow)
            .for_each(|d, &pv| *d -= pv * dot);
    }
    ds
}

/// Fixed sinusoidal features: first half sines, second half cosines.
pub fn sinusoidal(position: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (position * freq).sin();
        out[half + i] = (position * freq).cos();
    }
    out
}

pub fn positional_table(len: usize, dim: usize) -> Array2<f64> {
    let mut table = Array2::zeros((len, dim));
    for (l, mut row) in table.rows_mut().into_iter().enumerate() {
        for (dst, v) in row.iter_mut().zip(sinusoidal(l as f64, dim)) {
            *dst = v;
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn fd<F: Fn(&Array2<f64>) -> f64>(f: F, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            g.as_slice_mut().unwrap()[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn mish_derivative_matches_central_difference() {
        for &x in &[-30.0, -3.0, -0.5, 0.0, 0.7, 4.0, 25.0] {
            let h = 1e-6;
            let num = (mish(x + h) - mish(x - h)) / (2.0 * h);
            assert!((num - mish_grad(x)).abs() < 1e-7, "x={x}");
            let reference = x * x.exp().ln_1p().tanh();
            assert!((mish(x) - reference).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let mut r = rng::seeded(3);
        let x = rng::standard_normal(3, 5, &mut r);
        let gamma = rng::standard_normal(1, 5, &mut r);
        let beta = rng::standard_normal(1, 5, &mut r);
        let w = rng::standard_normal(3, 5, &mut r);
        let loss = |x: &Array2<f64>| (&layer_norm(x.view(), &gamma, &beta).0 * &w).sum();
        let (_, cache) = layer_norm(x.view(), &gamma, &beta);
        let mut dg = Array2::zeros((1, 5));
        let mut db = Array2::zeros((1, 5));
        let dx = layer_norm_backward(&cache, &gamma, w.view(), &mut dg, &mut db);
        let num = fd(loss, &x);
        assert!((&dx - &num).iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_backprop() {
        let mut r = rng::seeded(4);
        let s = rng::standard_normal(2, 4, &mut r);
        let w = rng::standard_normal(2, 4, &mut r);
        let f = |s: &Array2<f64>| {
            let mut p = s.clone();
            softmax_rows(&mut p);
            (&p * &w).sum()
        };
        let mut p = s.clone();
        softmax_rows(&mut p);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let ds = softmax_rows_backward(&p, &w);
        let num = fd(f, &s);
        assert!((&ds - &num).iter().all(|d| d.abs() < 1e-7));
    }
}
