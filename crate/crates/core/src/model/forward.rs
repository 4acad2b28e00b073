//! Denoiser forward and backward passes.
//!
//! Token path: `x = z_t W_in + b_in + positions + temb(t)`, then per block
//! `h = TiLM(LN1(x), a)`, `x += Attn(h; identity tokens)`, `x += FF(LN2(x))`,
//! and finally `eps = LN_f(x) W_out + b_out`.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng as _;

use super::params::BaseModelParams;
use super::types::AudioFeatures;
use crate::adapter::{self, AdapterParams, AttentionCache, IdentityTokens};
use crate::error::{Error, Result};
use crate::nn::{self, LayerNormCache};
use crate::rng::Rng;

/// Audio condition for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum AudioCond<'a> {
    Features(&'a AudioFeatures),
    /// The learned unconditional vector broadcast over all frames.
    Unconditional,
}

/// Identity condition for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum IdentityCond<'a> {
    /// The base model's unconditional identity keys and values.
    Unconditional,
    Adapter(&'a AdapterParams),
}

impl<'a> From<Option<&'a AdapterParams>> for IdentityCond<'a> {
    fn from(adapter: Option<&'a AdapterParams>) -> Self {
        adapter.map_or(IdentityCond::Unconditional, IdentityCond::Adapter)
    }
}

struct LayerCache {
    ln1: LayerNormCache,
    normed: Array2<f64>,
    scale: Array2<f64>,
    modulated: Array2<f64>,
    q: Array2<f64>,
    attn: AttentionCache,
    attn_out: Array2<f64>,
    mask1: Option<Array2<f64>>,
    ln2: LayerNormCache,
    h2: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    mask2: Option<Array2<f64>>,
}

/// Intermediate values saved for [`backward`].
pub struct ForwardCache {
    z_t: Array2<f64>,
    time_features: Array2<f64>,
    time_pre: Array2<f64>,
    time_act: Array2<f64>,
    audio: Array2<f64>,
    audio_mish: Array2<f64>,
    audio_unconditional: bool,
    adapter: Option<AdapterParams>,
    layers: Vec<LayerCache>,
    final_ln: LayerNormCache,
    final_h: Array2<f64>,
}

pub(crate) fn audio_matrix(params: &BaseModelParams, audio: AudioCond, len: usize) -> Array2<f64> {
    match audio {
        AudioCond::Features(a) => a.values().clone(),
        AudioCond::Unconditional => params
            .uncond_audio
            .broadcast((len, params.config.audio_dim))
            .expect("unconditional audio is 1 x D")
            .to_owned(),
    }
}

pub(crate) fn identity_tokens(params: &BaseModelParams, identity: IdentityCond) -> IdentityTokens {
    match identity {
        IdentityCond::Unconditional => IdentityTokens::unconditional(params),
        IdentityCond::Adapter(a) => a.project(params),
    }
}

fn check_inputs(
    params: &BaseModelParams,
    z_t: &ArrayView2<f64>,
    t: usize,
    audio: AudioCond,
    identity: IdentityCond,
) -> Result<()> {
    let cfg = &params.config;
    if z_t.dim() != (cfg.seq_len, cfg.feature_dim) {
        return Err(Error::Shape(format!(
            "noisy sequence {:?} != ({}, {})",
            z_t.dim(),
            cfg.seq_len,
            cfg.feature_dim
        )));
    }
    if t == 0 || t > cfg.diffusion_steps {
        return Err(Error::Domain {
            t,
            max: cfg.diffusion_steps,
        });
    }
    if let AudioCond::Features(a) = audio {
        if a.values().dim() != (cfg.seq_len, cfg.audio_dim) {
            return Err(Error::Shape(format!(
                "audio {:?} != ({}, {})",
                a.values().dim(),
                cfg.seq_len,
                cfg.audio_dim
            )));
        }
    }
    if let IdentityCond::Adapter(a) = identity {
        a.check_compatible(cfg)?;
    }
    if !z_t.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("noisy sequence".into()));
    }
    Ok(())
}

fn dropout_mask(shape: (usize, usize), p: f64, r: &mut Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if r.gen::<f64>() < p { 0.0 } else { keep })
}

/// Learned timestep embedding `mish(sin(t) W1 + b1) W2 + b2`, `1 x C`.
pub fn timestep_embedding(params: &BaseModelParams, t: usize) -> Result<Array2<f64>> {
    let cfg = &params.config;
    if t == 0 || t > cfg.diffusion_steps {
        return Err(Error::Domain {
            t,
            max: cfg.diffusion_steps,
        });
    }
    let feats = timestep_features(t, cfg.model_dim);
    let act = nn::mish_array(&nn::linear(feats.view(), &params.time_w1, &params.time_b1));
    Ok(nn::linear(act.view(), &params.time_w2, &params.time_b2))
}

/// Fixed sinusoidal features of a timestep, `1 x dim`.
pub fn timestep_features(t: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_vec((1, dim), nn::sinusoidal(t as f64, dim)).expect("row vector")
}

/// Full forward pass. Passing `dropout` enables training-mode dropout.
pub fn forward(
    params: &BaseModelParams,
    z_t: ArrayView2<f64>,
    t: usize,
    audio: AudioCond,
    identity: IdentityCond,
    mut dropout: Option<&mut Rng>,
) -> Result<(Array2<f64>, ForwardCache)> {
    check_inputs(params, &z_t, t, audio, identity)?;
    let cfg = &params.config;
    let len = cfg.seq_len;

    let time_features = timestep_features(t, cfg.model_dim);
    let time_pre = nn::linear(time_features.view(), &params.time_w1, &params.time_b1);
    let time_act = nn::mish_array(&time_pre);
    let temb = nn::linear(time_act.view(), &params.time_w2, &params.time_b2);

    let mut x = nn::linear(z_t, &params.in_w, &params.in_b);
    x += &params.positions;
    x += &temb;

    let audio_values = audio_matrix(params, audio, len);
    let audio_mish = nn::mish_array(&audio_values);
    let tokens = identity_tokens(params, identity);
    let p_drop = if dropout.is_some() { cfg.dropout } else { 0.0 };

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for lp in &params.layers {
        let (normed, ln1) = nn::layer_norm(x.view(), &lp.ln1_gain, &lp.ln1_bias);
        let scale = nn::linear(audio_mish.view(), &lp.tilm_scale_w, &lp.tilm_scale_b);
        let shift = nn::linear(audio_mish.view(), &lp.tilm_shift_w, &lp.tilm_shift_b);
        let modulated = &normed * &scale + &shift;

        let q = modulated.dot(&lp.wq);
        let k = modulated.dot(&lp.wk);
        let v = modulated.dot(&lp.wv);
        let (attn_out, attn) =
            adapter::attention_forward(q.view(), k.view(), v.view(), &tokens, cfg.num_heads);
        let mut o = nn::linear(attn_out.view(), &lp.wo, &lp.bo);
        let mask1 = match dropout.as_deref_mut() {
            Some(r) if p_drop > 0.0 => {
                let m = dropout_mask(o.dim(), p_drop, r);
                o *= &m;
                Some(m)
            }
            _ => None,
        };
        x += &o;

        let (h2, ln2) = nn::layer_norm(x.view(), &lp.ln2_gain, &lp.ln2_bias);
        let ff_pre = nn::linear(h2.view(), &lp.ff_w1, &lp.ff_b1);
        let ff_act = nn::mish_array(&ff_pre);
        let mut f = nn::linear(ff_act.view(), &lp.ff_w2, &lp.ff_b2);
        let mask2 = match dropout.as_deref_mut() {
            Some(r) if p_drop > 0.0 => {
                let m = dropout_mask(f.dim(), p_drop, r);
                f *= &m;
                Some(m)
            }
            _ => None,
        };
        x += &f;

        layers.push(LayerCache {
            ln1,
            normed,
            scale,
            modulated,
            q,
            attn,
            attn_out,
            mask1,
            ln2,
            h2,
            ff_pre,
            ff_act,
            mask2,
        });
    }

    let (final_h, final_ln) =
        nn::layer_norm(x.view(), &params.final_ln_gain, &params.final_ln_bias);
    let out = nn::linear(final_h.view(), &params.out_w, &params.out_b);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("denoiser output".into()));
    }
    let adapter_cache = match identity {
        IdentityCond::Unconditional => None,
        IdentityCond::Adapter(a) => Some(a.clone()),
    };
    Ok((
        out,
        ForwardCache {
            z_t: z_t.to_owned(),
            time_features,
            time_pre,
            time_act,
            audio: audio_values,
            audio_mish,
            audio_unconditional: matches!(audio, AudioCond::Unconditional),
            adapter: adapter_cache,
            layers,
            final_ln,
            final_h,
        },
    ))
}

/// Evaluation-mode noise prediction.
pub fn predict(
    params: &BaseModelParams,
    z_t: ArrayView2<f64>,
    t: usize,
    audio: AudioCond,
    identity: IdentityCond,
) -> Result<Array2<f64>> {
    forward(params, z_t, t, audio, identity, None).map(|(out, _)| out)
}

/// Evaluation-mode noise prediction with real audio; `adapter = None`
/// uses the unconditional identity.
pub fn denoise(
    params: &BaseModelParams,
    z_t: ArrayView2<f64>,
    t: usize,
    audio: &AudioFeatures,
    adapter: Option<&AdapterParams>,
) -> Result<Array2<f64>> {
    predict(params, z_t, t, AudioCond::Features(audio), adapter.into())
}

fn lin_back(
    x: ArrayView2<f64>,
    w: &Array2<f64>,
    dy: ArrayView2<f64>,
    grads: Option<(&mut Array2<f64>, &mut Array2<f64>)>,
) -> Array2<f64> {
    match grads {
        Some((dw, db)) => nn::linear_backward(x, w, dy, dw, db),
        None => dy.dot(&w.t()),
    }
}

fn ln_back(
    cache: &LayerNormCache,
    gain: &Array2<f64>,
    dy: ArrayView2<f64>,
    grads: Option<(&mut Array2<f64>, &mut Array2<f64>)>,
) -> Array2<f64> {
    match grads {
        Some((dg, db)) => nn::layer_norm_backward(cache, gain, dy, dg, db),
        None => {
            let mut dg = Array2::zeros(gain.raw_dim());
            let mut db = Array2::zeros(gain.raw_dim());
            nn::layer_norm_backward(cache, gain, dy, &mut dg, &mut db)
        }
    }
}

/// Backpropagate `dout` (gradient of the loss w.r.t. the output).
///
/// Base-parameter gradients are accumulated when `base_grads` is given;
/// adapter gradients when `adapter_grads` is given and the forward pass
/// used an adapter.
pub fn backward(
    params: &BaseModelParams,
    cache: &ForwardCache,
    dout: ArrayView2<f64>,
    mut base_grads: Option<&mut BaseModelParams>,
    adapter_grads: Option<&mut AdapterParams>,
) {
    let cfg = &params.config;
    let (n_tok, c) = (cfg.adapter_tokens, cfg.model_dim);
    let len = cfg.seq_len;

    let dfinal = lin_back(
        cache.final_h.view(),
        &params.out_w,
        dout,
        base_grads
            .as_deref_mut()
            .map(|g| (&mut g.out_w, &mut g.out_b)),
    );
    let mut dx = ln_back(
        &cache.final_ln,
        &params.final_ln_gain,
        dfinal.view(),
        base_grads
            .as_deref_mut()
            .map(|g| (&mut g.final_ln_gain, &mut g.final_ln_bias)),
    );

    let mut daudio_mish = Array2::<f64>::zeros(cache.audio_mish.raw_dim());
    let mut dkeys = Array2::<f64>::zeros((n_tok, c));
    let mut dvalues = Array2::<f64>::zeros((n_tok, c));

    for (i, (lp, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let mut lg = base_grads.as_deref_mut().map(|g| &mut g.layers[i]);

        // Feed-forward residual.
        let mut df = dx.clone();
        if let Some(m) = &lc.mask2 {
            df *= m;
        }
        let dact = lin_back(
            lc.ff_act.view(),
            &lp.ff_w2,
            df.view(),
            lg.as_deref_mut().map(|g| (&mut g.ff_w2, &mut g.ff_b2)),
        );
        let dpre = nn::mish_backward(&lc.ff_pre, dact.view());
        let dh2 = lin_back(
            lc.h2.view(),
            &lp.ff_w1,
            dpre.view(),
            lg.as_deref_mut().map(|g| (&mut g.ff_w1, &mut g.ff_b1)),
        );
        dx += &ln_back(
            &lc.ln2,
            &lp.ln2_gain,
            dh2.view(),
            lg.as_deref_mut()
                .map(|g| (&mut g.ln2_gain, &mut g.ln2_bias)),
        );

        // Attention residual.
        let mut dout_attn = dx.clone();
        if let Some(m) = &lc.mask1 {
            dout_attn *= m;
        }
        let dattn = lin_back(
            lc.attn_out.view(),
            &lp.wo,
            dout_attn.view(),
            lg.as_deref_mut().map(|g| (&mut g.wo, &mut g.bo)),
        );
        let (dq, dk_ext, dv_ext) = adapter::attention_backward(lc.q.view(), &lc.attn, dattn.view());
        let dk = dk_ext.slice(s![..len, ..]);
        let dv = dv_ext.slice(s![..len, ..]);
        dkeys += &dk_ext.slice(s![len.., ..]);
        dvalues += &dv_ext.slice(s![len.., ..]);

        let mut dmod = dq.dot(&lp.wq.t());
        dmod += &dk.dot(&lp.wk.t());
        dmod += &dv.dot(&lp.wv.t());
        if let Some(g) = lg.as_deref_mut() {
            nn::accumulate_weight_grad(lc.modulated.view(), dq.view(), &mut g.wq);
            nn::accumulate_weight_grad(lc.modulated.view(), dk, &mut g.wk);
            nn::accumulate_weight_grad(lc.modulated.view(), dv, &mut g.wv);
        }

        // TiLM: modulated = normed * scale + shift.
        let dnormed = &dmod * &lc.scale;
        let dscale = &dmod * &lc.normed;
        daudio_mish += &lin_back(
            cache.audio_mish.view(),
            &lp.tilm_scale_w,
            dscale.view(),
            lg.as_deref_mut()
                .map(|g| (&mut g.tilm_scale_w, &mut g.tilm_scale_b)),
        );
        daudio_mish += &lin_back(
            cache.audio_mish.view(),
            &lp.tilm_shift_w,
            dmod.view(),
            lg.as_deref_mut()
                .map(|g| (&mut g.tilm_shift_w, &mut g.tilm_shift_b)),
        );
        dx += &ln_back(
            &lc.ln1,
            &lp.ln1_gain,
            dnormed.view(),
            lg.map(|g| (&mut g.ln1_gain, &mut g.ln1_bias)),
        );
    }

    if let (Some(a), Some(ag)) = (&cache.adapter, adapter_grads) {
        a.project_backward(&dkeys, &dvalues, ag);
    }

    let Some(g) = base_grads else { return };
    // Identity keys/values are offsets of the unconditional ones either way.
    g.uncond_keys += &dkeys;
    g.uncond_values += &dvalues;
    if cache.audio_unconditional {
        let daudio = nn::mish_backward(&cache.audio, daudio_mish.view());
        g.uncond_audio += &daudio.sum_axis(Axis(0)).insert_axis(Axis(0));
    }

    nn::accumulate_weight_grad(cache.z_t.view(), dx.view(), &mut g.in_w);
    let dtemb = dx.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.in_b += &dtemb;
    let dtime_act = nn::linear_backward(
        cache.time_act.view(),
        &params.time_w2,
        dtemb.view(),
        &mut g.time_w2,
        &mut g.time_b2,
    );
    let dtime_pre = nn::mish_backward(&cache.time_pre, dtime_act.view());
    nn::linear_backward(
        cache.time_features.view(),
        &params.time_w1,
        dtime_pre.view(),
        &mut g.time_w1,
        &mut g.time_b1,
    );
}
