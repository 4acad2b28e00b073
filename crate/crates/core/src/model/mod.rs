//! The expression denoiser: a transformer over per-frame expression tokens,
//! conditioned on audio through TiLM, on identity through extra attention
//! keys/values, and on the diffusion timestep through an additive embedding.

mod audio;
mod config;
mod forward;
mod params;
mod tilm;
mod types;

use rand::Rng as _;

pub use audio::{encode_audio, AudioEncoder, BandEnergyEncoder};
pub use config::ModelConfig;
pub use forward::{
    backward, denoise, forward, predict, timestep_embedding, timestep_features, AudioCond,
    ForwardCache, IdentityCond,
};
pub use params::{count_base_params, BaseModelParams, LayerParams};
pub use tilm::{tilm, Tilm};
pub use types::{
    AudioFeatures, ExpressionSequence, Waveform, EXPRESSION_DIM, FEATURE_DIM, FRAME_RATE, JAW_DIM,
};

use crate::adapter::AdapterParams;
use crate::rng::Rng;

/// Independently replace the audio and the identity condition by their
/// unconditional counterparts, each with probability `p`.
///
/// Both coins are always drawn so the stream advances identically
/// whatever the outcome.
pub fn apply_condition_dropout<'a>(
    audio: &'a AudioFeatures,
    adapter: Option<&'a AdapterParams>,
    p: f64,
    rng: &mut Rng,
) -> (AudioCond<'a>, IdentityCond<'a>) {
    let drop_audio = rng.gen::<f64>() < p;
    let drop_identity = rng.gen::<f64>() < p;
    let a = if drop_audio {
        AudioCond::Unconditional
    } else {
        AudioCond::Features(audio)
    };
    let i = match adapter {
        Some(ad) if !drop_identity => IdentityCond::Adapter(ad),
        _ => IdentityCond::Unconditional,
    };
    (a, i)
}

/// Anything that predicts the added noise from a noisy sequence.
///
/// The transformer implements it; tests substitute closed-form oracles.
pub trait NoisePredictor: Sync {
    fn seq_len(&self) -> usize;

    fn predict_noise(
        &self,
        z_t: ndarray::ArrayView2<f64>,
        t: usize,
        audio: AudioCond,
        identity: IdentityCond,
    ) -> crate::Result<ndarray::Array2<f64>>;
}

impl NoisePredictor for BaseModelParams {
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn predict_noise(
        &self,
        z_t: ndarray::ArrayView2<f64>,
        t: usize,
        audio: AudioCond,
        identity: IdentityCond,
    ) -> crate::Result<ndarray::Array2<f64>> {
        predict(self, z_t, t, audio, identity)
    }
}
