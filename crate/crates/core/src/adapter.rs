//! Per-subject personalization: a learnable token sequence projected into
//! extra attention keys and values.
//!
//! One `(tokens, W_k, W_v)` triple is shared by every transformer layer.
//! Projected tokens are added to the base model's unconditional identity
//! keys and values, so an adapter with zero projections reproduces the
//! base model exactly.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{BaseModelParams, ModelConfig};
use crate::nn;
use crate::rng::{self, Rng};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// `N x C` subject tokens.
    pub tokens: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

/// Extra keys and values appended to every layer's attention.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityTokens {
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

impl IdentityTokens {
    pub fn empty(model_dim: usize) -> Self {
        Self {
            keys: Array2::zeros((0, model_dim)),
            values: Array2::zeros((0, model_dim)),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.nrows() == 0
    }

    pub fn unconditional(base: &BaseModelParams) -> Self {
        Self {
            keys: base.uncond_keys.clone(),
            values: base.uncond_values.clone(),
        }
    }
}

pub fn count_adapter_params(model_dim: usize, tokens: usize) -> usize {
    tokens * model_dim + 2 * model_dim * model_dim
}

/// Tokens and `W_k` drawn from `N(0, 0.02^2)`, `W_v = 0`.
pub fn init_adapter(config: &ModelConfig, r: &mut Rng) -> Result<AdapterParams> {
    config.validate()?;
    let (n, c) = (config.adapter_tokens, config.model_dim);
    Ok(AdapterParams {
        tokens: rng::normal_scaled(n, c, INIT_STD, r),
        w_k: rng::normal_scaled(c, c, INIT_STD, r),
        w_v: Array2::zeros((c, c)),
    })
}

impl AdapterParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (n, c) = (config.adapter_tokens, config.model_dim);
        Self {
            tokens: Array2::zeros((n, c)),
            w_k: Array2::zeros((c, c)),
            w_v: Array2::zeros((c, c)),
        }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn model_dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.tokens.len() + self.w_k.len() + self.w_v.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tokens: Array2::zeros(self.tokens.raw_dim()),
            w_k: Array2::zeros(self.w_k.raw_dim()),
            w_v: Array2::zeros(self.w_v.raw_dim()),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        vec![
            ("adapter.tokens".into(), &self.tokens),
            ("adapter.w_k".into(), &self.w_k),
            ("adapter.w_v".into(), &self.w_v),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.tokens, &mut self.w_k, &mut self.w_v]
    }

    pub fn check_compatible(&self, config: &ModelConfig) -> Result<()> {
        let (n, c) = (config.adapter_tokens, config.model_dim);
        if self.tokens.dim() != (n, c) || self.w_k.dim() != (c, c) || self.w_v.dim() != (c, c) {
            return Err(Error::Shape(format!(
                "adapter with {} tokens of width {} does not fit model with {n} tokens of width {c}",
                self.tokens.nrows(),
                self.tokens.ncols()
            )));
        }
        Ok(())
    }

    /// Keys `k_u + c W_k` and values `v_u + c W_v` for the given base.
    pub fn project(&self, base: &BaseModelParams) -> IdentityTokens {
        let mut keys = self.tokens.dot(&self.w_k);
        keys += &base.uncond_keys;
        let mut values = self.tokens.dot(&self.w_v);
        values += &base.uncond_values;
        IdentityTokens { keys, values }
    }

    /// Chain rule through `project`: accumulate into `grads`.
    pub fn project_backward(&self, dkeys: &Array2<f64>, dvalues: &Array2<f64>, grads: &mut Self) {
        nn::accumulate_weight_grad(self.tokens.view(), dkeys.view(), &mut grads.w_k);
        nn::accumulate_weight_grad(self.tokens.view(), dvalues.view(), &mut grads.w_v);
        grads.tokens += &dkeys.dot(&self.w_k.t());
        grads.tokens += &dvalues.dot(&self.w_v.t());
    }
}

/// Saved per-head attention probabilities, `L x (L + N)` each.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub probs: Vec<Array2<f64>>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

fn check_attention_shapes(
    q: &ArrayView2<f64>,
    k: &ArrayView2<f64>,
    v: &ArrayView2<f64>,
    extra: &IdentityTokens,
    num_heads: usize,
) -> Result<()> {
    let c = q.ncols();
    if k.dim() != q.dim() || v.dim() != q.dim() {
        return Err(Error::Shape(format!(
            "q {:?}, k {:?}, v {:?} must agree",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    if extra.keys.ncols() != c || extra.values.dim() != extra.keys.dim() {
        return Err(Error::Shape(format!(
            "identity tokens {:?}/{:?} do not match width {c}",
            extra.keys.dim(),
            extra.values.dim()
        )));
    }
    if num_heads == 0 || !c.is_multiple_of(num_heads) {
        return Err(Error::Shape(format!(
            "width {c} not divisible into {num_heads} heads"
        )));
    }
    Ok(())
}

/// Multi-head scaled dot-product attention of `q` over `[k; extra.keys]`
/// and `[v; extra.values]`, normalized over all `L + N` entries.
pub fn adapted_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    extra: &IdentityTokens,
    num_heads: usize,
) -> Result<Array2<f64>> {
    check_attention_shapes(&q, &k, &v, extra, num_heads)?;
    Ok(attention_forward(q, k, v, extra, num_heads).0)
}

pub(crate) fn attention_forward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    extra: &IdentityTokens,
    num_heads: usize,
) -> (Array2<f64>, AttentionCache) {
    let (l, c) = q.dim();
    let dh = c / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let keys = ndarray::concatenate![ndarray::Axis(0), k, extra.keys.view()];
    let values = ndarray::concatenate![ndarray::Axis(0), v, extra.values.view()];
    let mut out = Array2::zeros((l, c));
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&keys.slice(cols).t());
        scores *= scale;
        nn::softmax_rows(&mut scores);
        out.slice_mut(cols).assign(&scores.dot(&values.slice(cols)));
        probs.push(scores);
    }
    (
        out,
        AttentionCache {
            probs,
            keys,
            values,
        },
    )
}

/// Returns `(dq, dkeys, dvalues)` where the key/value gradients cover the
/// `L + N` extended rows.
pub(crate) fn attention_backward(
    q: ArrayView2<f64>,
    cache: &AttentionCache,
    dout: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let num_heads = cache.probs.len();
    let c = q.ncols();
    let dh = c / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(cache.keys.raw_dim());
    let mut dv = Array2::zeros(cache.values.raw_dim());
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout_h = dout.slice(cols);
        let dp = dout_h.dot(&cache.values.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dout_h));
        let mut ds = nn::softmax_rows_backward(p, &dp);
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&cache.keys.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}
