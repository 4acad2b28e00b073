//! Central finite-difference checks of the noise-prediction loss gradients.

use expose_core::adapter::{init_adapter, AdapterParams};
use expose_core::model::{
    backward, forward, AudioCond, AudioFeatures, BaseModelParams, IdentityCond, ModelConfig,
};
use expose_core::rng::{self, Rng};
use ndarray::Array2;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub struct Case {
    pub params: BaseModelParams,
    pub adapter: AdapterParams,
    pub z_t: Array2<f64>,
    pub eps: Array2<f64>,
    pub audio: AudioFeatures,
    pub t: usize,
}

pub fn case(cfg: ModelConfig, seed: u64) -> Case {
    let mut r = rng::seeded(seed);
    let mut params = BaseModelParams::init(&cfg, &mut r).unwrap();
    // Move every tensor away from its structured initial value so no
    // gradient is trivially zero.
    params.for_each_mut(|_, t| *t += &rng::normal_scaled(t.nrows(), t.ncols(), 0.3, &mut r));
    let mut adapter = init_adapter(&cfg, &mut r).unwrap();
    for t in adapter.tensors_mut() {
        *t += &rng::normal_scaled(t.nrows(), t.ncols(), 0.3, &mut r);
    }
    let z_t = rng::standard_normal(cfg.seq_len, cfg.feature_dim, &mut r);
    let eps = rng::standard_normal(cfg.seq_len, cfg.feature_dim, &mut r);
    let audio =
        AudioFeatures::new(rng::standard_normal(cfg.seq_len, cfg.audio_dim, &mut r)).unwrap();
    Case {
        params,
        adapter,
        z_t,
        eps,
        audio,
        t: 417,
    }
}

fn dropout_stream(seed: Option<u64>) -> Option<Rng> {
    seed.map(rng::seeded)
}

fn loss(
    c: &Case,
    params: &BaseModelParams,
    adapter: &AdapterParams,
    uncond: bool,
    drop_seed: Option<u64>,
) -> f64 {
    let (audio, identity) = conds(c, adapter, uncond);
    let mut dr = dropout_stream(drop_seed);
    let (out, _) = forward(params, c.z_t.view(), c.t, audio, identity, dr.as_mut()).unwrap();
    (&out - &c.eps).mapv(|d| d * d).mean().unwrap()
}

fn conds<'a>(
    c: &'a Case,
    adapter: &'a AdapterParams,
    uncond: bool,
) -> (AudioCond<'a>, IdentityCond<'a>) {
    if uncond {
        (AudioCond::Unconditional, IdentityCond::Unconditional)
    } else {
        (
            AudioCond::Features(&c.audio),
            IdentityCond::Adapter(adapter),
        )
    }
}

fn analytic(c: &Case, uncond: bool, drop_seed: Option<u64>) -> (BaseModelParams, AdapterParams) {
    let (audio, identity) = conds(c, &c.adapter, uncond);
    let mut dr = dropout_stream(drop_seed);
    let (out, cache) = forward(&c.params, c.z_t.view(), c.t, audio, identity, dr.as_mut()).unwrap();
    let dout = (&out - &c.eps) * (2.0 / out.len() as f64);
    let mut g = c.params.zeros_like();
    let mut ga = c.adapter.zeros_like();
    backward(&c.params, &cache, dout.view(), Some(&mut g), Some(&mut ga));
    (g, ga)
}

fn rel_err(a: &Array2<f64>, n: &Array2<f64>) -> f64 {
    let diff = (a - n).mapv(|v| v * v).sum().sqrt();
    let scale = a
        .mapv(|v| v * v)
        .sum()
        .sqrt()
        .max(n.mapv(|v| v * v).sum().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn check_base(c: &Case, uncond: bool, drop_seed: Option<u64>) -> Vec<(String, f64, f64)> {
    let (g, _) = analytic(c, uncond, drop_seed);
    let names: Vec<String> = c
        .params
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let grads: Vec<Array2<f64>> = g
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    let mut out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let shape = grads[k].dim();
        let mut num = Array2::zeros(shape);
        for idx in 0..grads[k].len() {
            let bump = |delta: f64| {
                let mut p = c.params.clone();
                p.for_each_mut(|j, t| {
                    if j == k {
                        t.as_slice_mut().unwrap()[idx] += delta;
                    }
                });
                loss(c, &p, &c.adapter, uncond, drop_seed)
            };
            num.as_slice_mut().unwrap()[idx] = (bump(STEP) - bump(-STEP)) / (2.0 * STEP);
        }
        let norm = grads[k].mapv(|v| v * v).sum().sqrt();
        out.push((name.clone(), rel_err(&grads[k], &num), norm));
    }
    out
}

pub fn check_adapter(c: &Case, drop_seed: Option<u64>) -> Vec<(String, f64, f64)> {
    let (_, ga) = analytic(c, false, drop_seed);
    let grads: Vec<(String, Array2<f64>)> = ga
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let mut out = Vec::new();
    for (k, (name, grad)) in grads.iter().enumerate() {
        let mut num = Array2::zeros(grad.dim());
        for idx in 0..grad.len() {
            let bump = |delta: f64| {
                let mut a = c.adapter.clone();
                a.tensors_mut()[k].as_slice_mut().unwrap()[idx] += delta;
                loss(c, &c.params, &a, false, drop_seed)
            };
            num.as_slice_mut().unwrap()[idx] = (bump(STEP) - bump(-STEP)) / (2.0 * STEP);
        }
        let norm = grad.mapv(|v| v * v).sum().sqrt();
        out.push((name.clone(), rel_err(grad, &num), norm));
    }
    out
}
