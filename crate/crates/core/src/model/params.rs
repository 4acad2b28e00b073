use ndarray::Array2;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array2<f64>,
    pub ln1_bias: Array2<f64>,
    /// TiLM scale branch `s(a) = mish(a) W + b`, `D x C`.
    pub tilm_scale_w: Array2<f64>,
    pub tilm_scale_b: Array2<f64>,
    /// TiLM shift branch `m(a) = mish(a) W + b`, `D x C`.
    pub tilm_shift_w: Array2<f64>,
    pub tilm_shift_b: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln2_gain: Array2<f64>,
    pub ln2_bias: Array2<f64>,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array2<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array2<f64>,
}

/// Frozen-after-pretraining denoiser weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModelParams {
    pub config: ModelConfig,
    pub in_w: Array2<f64>,
    pub in_b: Array2<f64>,
    pub time_w1: Array2<f64>,
    pub time_b1: Array2<f64>,
    pub time_w2: Array2<f64>,
    pub time_b2: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_ln_gain: Array2<f64>,
    pub final_ln_bias: Array2<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array2<f64>,
    /// Broadcast over frames when the audio condition is dropped.
    pub uncond_audio: Array2<f64>,
    /// Identity keys and values used when no subject adapter is present.
    pub uncond_keys: Array2<f64>,
    pub uncond_values: Array2<f64>,
    /// Fixed sinusoidal positions, `L x C`; not trained.
    pub(crate) positions: Array2<f64>,
}

fn glorot(rows: usize, cols: usize, r: &mut Rng) -> Array2<f64> {
    rng::normal_scaled(rows, cols, (1.0 / rows as f64).sqrt(), r)
}

impl LayerParams {
    fn init(cfg: &ModelConfig, r: &mut Rng) -> Self {
        let (c, m, d) = (cfg.model_dim, cfg.mlp_dim, cfg.audio_dim);
        Self {
            ln1_gain: Array2::ones((1, c)),
            ln1_bias: Array2::zeros((1, c)),
            tilm_scale_w: rng::normal_scaled(d, c, 0.02, r),
            tilm_scale_b: Array2::ones((1, c)),
            tilm_shift_w: glorot(d, c, r),
            tilm_shift_b: Array2::zeros((1, c)),
            wq: glorot(c, c, r),
            wk: glorot(c, c, r),
            wv: glorot(c, c, r),
            wo: glorot(c, c, r),
            bo: Array2::zeros((1, c)),
            ln2_gain: Array2::ones((1, c)),
            ln2_bias: Array2::zeros((1, c)),
            ff_w1: glorot(c, m, r),
            ff_b1: Array2::zeros((1, m)),
            ff_w2: glorot(m, c, r),
            ff_b2: Array2::zeros((1, c)),
        }
    }

    fn named(&self) -> [(&'static str, &Array2<f64>); 17] {
        [
            ("ln1.gain", &self.ln1_gain),
            ("ln1.bias", &self.ln1_bias),
            ("tilm.scale.w", &self.tilm_scale_w),
            ("tilm.scale.b", &self.tilm_scale_b),
            ("tilm.shift.w", &self.tilm_shift_w),
            ("tilm.shift.b", &self.tilm_shift_b),
            ("attn.wq", &self.wq),
            ("attn.wk", &self.wk),
            ("attn.wv", &self.wv),
            ("attn.wo", &self.wo),
            ("attn.bo", &self.bo),
            ("ln2.gain", &self.ln2_gain),
            ("ln2.bias", &self.ln2_bias),
            ("ff.w1", &self.ff_w1),
            ("ff.b1", &self.ff_b1),
            ("ff.w2", &self.ff_w2),
            ("ff.b2", &self.ff_b2),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 17] {
        [
            ("ln1.gain", &mut self.ln1_gain),
            ("ln1.bias", &mut self.ln1_bias),
            ("tilm.scale.w", &mut self.tilm_scale_w),
            ("tilm.scale.b", &mut self.tilm_scale_b),
            ("tilm.shift.w", &mut self.tilm_shift_w),
            ("tilm.shift.b", &mut self.tilm_shift_b),
            ("attn.wq", &mut self.wq),
            ("attn.wk", &mut self.wk),
            ("attn.wv", &mut self.wv),
            ("attn.wo", &mut self.wo),
            ("attn.bo", &mut self.bo),
            ("ln2.gain", &mut self.ln2_gain),
            ("ln2.bias", &mut self.ln2_bias),
            ("ff.w1", &mut self.ff_w1),
            ("ff.b1", &mut self.ff_b1),
            ("ff.w2", &mut self.ff_w2),
            ("ff.b2", &mut self.ff_b2),
        ]
    }
}

impl BaseModelParams {
    pub fn init(config: &ModelConfig, r: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (c, f, d, n) = (
            config.model_dim,
            config.feature_dim,
            config.audio_dim,
            config.adapter_tokens,
        );
        let layers = (0..config.num_layers)
            .map(|_| LayerParams::init(config, r))
            .collect();
        Ok(Self {
            config: *config,
            in_w: glorot(f, c, r),
            in_b: Array2::zeros((1, c)),
            time_w1: glorot(c, c, r),
            time_b1: Array2::zeros((1, c)),
            time_w2: glorot(c, c, r),
            time_b2: Array2::zeros((1, c)),
            layers,
            final_ln_gain: Array2::ones((1, c)),
            final_ln_bias: Array2::zeros((1, c)),
            out_w: rng::normal_scaled(c, f, 0.02, r),
            out_b: Array2::zeros((1, f)),
            uncond_audio: Array2::zeros((1, d)),
            uncond_keys: rng::normal_scaled(n, c, 0.02, r),
            uncond_values: rng::normal_scaled(n, c, 0.02, r),
            positions: nn::positional_table(config.seq_len, c),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(|_, t| t.fill(0.0));
        out
    }

    /// Tensors in a fixed order with dotted names.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("input.w".into(), &self.in_w),
            ("input.b".into(), &self.in_b),
            ("time.w1".into(), &self.time_w1),
            ("time.b1".into(), &self.time_b1),
            ("time.w2".into(), &self.time_w2),
            ("time.b2".into(), &self.time_b2),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(
                layer
                    .named()
                    .into_iter()
                    .map(|(n, t)| (format!("layers.{i}.{n}"), t)),
            );
        }
        out.extend([
            ("final_ln.gain".to_string(), &self.final_ln_gain),
            ("final_ln.bias".to_string(), &self.final_ln_bias),
            ("output.w".to_string(), &self.out_w),
            ("output.b".to_string(), &self.out_b),
            ("uncond.audio".to_string(), &self.uncond_audio),
            ("uncond.keys".to_string(), &self.uncond_keys),
            ("uncond.values".to_string(), &self.uncond_values),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = vec![
            &mut self.in_w,
            &mut self.in_b,
            &mut self.time_w1,
            &mut self.time_b1,
            &mut self.time_w2,
            &mut self.time_b2,
        ];
        for layer in &mut self.layers {
            out.extend(layer.named_mut().into_iter().map(|(_, t)| t));
        }
        out.extend([
            &mut self.final_ln_gain,
            &mut self.final_ln_bias,
            &mut self.out_w,
            &mut self.out_b,
            &mut self.uncond_audio,
            &mut self.uncond_keys,
            &mut self.uncond_values,
        ]);
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut Array2<f64>)) {
        for (i, t) in self.tensors_mut().into_iter().enumerate() {
            f(i, t);
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Replace tensors by name, checking each shape against the current one.
    pub fn assign(&mut self, tensors: &[(String, Array2<f64>)]) -> Result<()> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                names.len(),
                tensors.len()
            )));
        }
        let slots = self.tensors_mut();
        for ((name, slot), (given_name, value)) in names.iter().zip(slots).zip(tensors) {
            if name != given_name || slot.dim() != value.dim() {
                return Err(Error::Shape(format!(
                    "tensor {given_name} {:?} does not fit slot {name} {:?}",
                    value.dim(),
                    slot.dim()
                )));
            }
            slot.assign(value);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Closed-form parameter count for a configuration.
pub fn count_base_params(cfg: &ModelConfig) -> usize {
    let (c, m, d, f, n) = (
        cfg.model_dim,
        cfg.mlp_dim,
        cfg.audio_dim,
        cfg.feature_dim,
        cfg.adapter_tokens,
    );
    let per_layer = 4 * c + 2 * (d * c + c) + 4 * c * c + c + c * m + m + m * c + c;
    f * c + c + 2 * (c * c + c) + cfg.num_layers * per_layer + 2 * c + c * f + f + d + 2 * n * c
}
