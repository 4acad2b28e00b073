//! Synthetic talking identities.
//!
//! A persona maps a frame-level audio sequence to expression coefficients
//! through a linear response, a bias, a two-pole smoothing filter and an
//! idiosyncratic oscillation, plus observation noise. All personas share a
//! common articulation map; identity lives in the per-persona deviations.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{AudioFeatures, ExpressionSequence, FEATURE_DIM, FRAME_RATE};
use crate::rng::{self, Rng};

/// Seed of the articulation map shared by every persona.
const SHARED_MAP_SEED: u64 = 0x5eed_a11c;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaConfig {
    pub audio_dim: usize,
    /// Scale of the per-persona response deviation from the shared map.
    pub identity_scale: f64,
    pub bias_scale: f64,
    pub oscillation_scale: f64,
    pub smoothing_range: (f64, f64),
    pub oscillation_hz_range: (f64, f64),
    pub noise_range: (f64, f64),
    /// Audio AR(1) coefficient controlling temporal smoothness.
    pub audio_smoothness: f64,
    /// Per-clip multiplicative range of audio energy.
    pub energy_range: (f64, f64),
    /// Per-clip multiplicative range of the unpredictable residual.
    pub content_noise_range: (f64, f64),
    /// Scale of the per-persona constant offset in audio features.
    pub voice_scale: f64,
}

impl PersonaConfig {
    pub fn with_audio_dim(audio_dim: usize) -> Self {
        Self {
            audio_dim,
            ..Self::default()
        }
    }
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self {
            audio_dim: 16,
            identity_scale: 0.6,
            bias_scale: 0.3,
            oscillation_scale: 0.3,
            smoothing_range: (0.2, 0.7),
            oscillation_hz_range: (0.5, 3.0),
            noise_range: (0.05, 0.15),
            audio_smoothness: 0.8,
            energy_range: (0.6, 1.4),
            content_noise_range: (0.5, 2.0),
            voice_scale: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub id: u64,
    pub seed: u64,
    /// `D x 53` audio-to-expression response.
    pub response: Array2<f64>,
    pub bias: Array1<f64>,
    /// Pole of each of the two cascaded smoothing stages.
    pub smoothing: f64,
    pub oscillation_amp: Array1<f64>,
    pub oscillation_hz: f64,
    pub noise: f64,
    /// Constant offset this persona's voice adds to audio features.
    pub voice: Array1<f64>,
}

/// Per-clip content: what is said and how, independent of who says it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipContent {
    pub energy: f64,
    pub residual_scale: f64,
    pub phase: f64,
}

fn uniform(r: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        r.gen_range(lo..hi)
    } else {
        lo
    }
}

fn gauss(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

pub fn shared_response(audio_dim: usize) -> Array2<f64> {
    let mut r = rng::seeded(SHARED_MAP_SEED);
    rng::normal_scaled(
        audio_dim,
        FEATURE_DIM,
        (1.0 / audio_dim as f64).sqrt(),
        &mut r,
    )
}

/// Deterministic persona for `seed`.
pub fn generate_persona(seed: u64, cfg: &PersonaConfig) -> PersonaSpec {
    let mut r = rng::substream(seed, &[0x7e55]);
    let d = cfg.audio_dim;
    let deviation = rng::normal_scaled(d, FEATURE_DIM, (1.0 / d as f64).sqrt(), &mut r);
    let response = shared_response(d) + deviation * cfg.identity_scale;
    let bias = Array1::from_shape_simple_fn(FEATURE_DIM, || cfg.bias_scale * gauss(&mut r));
    let smoothing = uniform(&mut r, cfg.smoothing_range);
    let oscillation_amp =
        Array1::from_shape_simple_fn(FEATURE_DIM, || cfg.oscillation_scale * gauss(&mut r));
    let oscillation_hz = uniform(&mut r, cfg.oscillation_hz_range);
    let noise = uniform(&mut r, cfg.noise_range);
    let voice = Array1::from_shape_simple_fn(d, || cfg.voice_scale * gauss(&mut r));
    PersonaSpec {
        id: seed,
        seed,
        response,
        bias,
        smoothing,
        oscillation_amp,
        oscillation_hz,
        noise,
        voice,
    }
}

impl PersonaSpec {
    /// Parameter-space interpolation `(1 - w) self + w other`.
    pub fn blend(&self, other: &PersonaSpec, w: f64) -> PersonaSpec {
        let mix = |a: f64, b: f64| (1.0 - w) * a + w * b;
        PersonaSpec {
            id: self.id,
            seed: self.seed,
            response: &self.response * (1.0 - w) + &other.response * w,
            bias: &self.bias * (1.0 - w) + &other.bias * w,
            smoothing: mix(self.smoothing, other.smoothing),
            oscillation_amp: &self.oscillation_amp * (1.0 - w) + &other.oscillation_amp * w,
            oscillation_hz: mix(self.oscillation_hz, other.oscillation_hz),
            noise: mix(self.noise, other.noise),
            voice: &self.voice * (1.0 - w) + &other.voice * w,
        }
    }

    /// Frobenius distance between response matrices.
    pub fn response_distance(&self, other: &PersonaSpec) -> f64 {
        (&self.response - &other.response)
            .mapv(|v| v * v)
            .sum()
            .sqrt()
    }

    /// Euclidean distance over all identity parameters.
    pub fn parameter_distance(&self, other: &PersonaSpec) -> f64 {
        let sq = |a: f64, b: f64| (a - b) * (a - b);
        let vec_sq = |a: &Array1<f64>, b: &Array1<f64>| (a - b).mapv(|v| v * v).sum();
        (self.response_distance(other).powi(2)
            + vec_sq(&self.bias, &other.bias)
            + vec_sq(&self.oscillation_amp, &other.oscillation_amp)
            + sq(self.smoothing, other.smoothing)
            + sq(self.oscillation_hz, other.oscillation_hz)
            + sq(self.noise, other.noise))
        .sqrt()
    }

    /// Expressions this persona produces for `audio`. `noise` supplies the
    /// residual draws and is untouched when the persona is noise-free.
    pub fn respond(
        &self,
        audio: &AudioFeatures,
        content: &ClipContent,
        noise: &mut Rng,
    ) -> ExpressionSequence {
        let len = audio.len();
        let drive = audio.values().dot(&self.response) + self.bias.view().insert_axis(Axis(0));
        let rho = self.smoothing;
        let mut stage1 = drive.row(0).to_owned();
        let mut stage2 = stage1.clone();
        let mut out = Array2::zeros((len, FEATURE_DIM));
        let sigma = self.noise * content.residual_scale;
        for l in 0..len {
            stage1 = &stage1 * rho + &drive.row(l) * (1.0 - rho);
            stage2 = &stage2 * rho + &stage1 * (1.0 - rho);
            let phase = 2.0 * PI * self.oscillation_hz * l as f64 / FRAME_RATE + content.phase;
            let mut row = &stage2 + &(&self.oscillation_amp * phase.sin());
            if sigma > 0.0 {
                row.mapv_inplace(|v| v + sigma * gauss(noise));
            }
            out.row_mut(l).assign(&row);
        }
        ExpressionSequence::new(out).expect("persona output is finite and 53 wide")
    }
}

/// Audio features and content factors for `audio_seed` in `speaker`'s
/// voice. Content depends on the seed only.
pub fn synthesize_audio(
    speaker: &PersonaSpec,
    audio_seed: u64,
    len: usize,
    cfg: &PersonaConfig,
) -> (AudioFeatures, ClipContent) {
    let mut r = rng::substream(audio_seed, &[0xa0d1]);
    let content = ClipContent {
        energy: uniform(&mut r, cfg.energy_range),
        residual_scale: {
            let (lo, hi) = cfg.content_noise_range;
            if hi > lo {
                (lo.ln() + r.gen::<f64>() * (hi.ln() - lo.ln())).exp()
            } else {
                lo
            }
        },
        phase: r.gen_range(0.0..2.0 * PI),
    };
    let phi = cfg.audio_smoothness;
    let innovation = (1.0 - phi * phi).sqrt();
    let d = cfg.audio_dim;
    let mut values = Array2::zeros((len, d));
    let mut state = Array1::from_shape_simple_fn(d, || gauss(&mut r));
    for l in 0..len {
        if l > 0 {
            state.mapv_inplace(|s| phi * s + innovation * gauss(&mut r));
        }
        values
            .row_mut(l)
            .assign(&(&state * content.energy + &speaker.voice));
    }
    (AudioFeatures::new(values).expect("finite audio"), content)
}

fn noise_stream(audio_seed: u64) -> Rng {
    rng::substream(audio_seed, &[0x0153])
}

/// A genuine clip: `persona` speaking the audio drawn from `audio_seed`.
pub fn synthesize_clip(
    persona: &PersonaSpec,
    audio_seed: u64,
    len: usize,
    cfg: &PersonaConfig,
) -> (AudioFeatures, ExpressionSequence) {
    forge_clip(persona, persona, audio_seed, len, cfg)
}

/// A forgery: the target's audio re-enacted with the actor's talking
/// identity.
pub fn forge_clip(
    target: &PersonaSpec,
    actor: &PersonaSpec,
    audio_seed: u64,
    len: usize,
    cfg: &PersonaConfig,
) -> (AudioFeatures, ExpressionSequence) {
    let (audio, content) = synthesize_audio(target, audio_seed, len, cfg);
    let expr = actor.respond(&audio, &content, &mut noise_stream(audio_seed));
    (audio, expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PersonaConfig {
        PersonaConfig::default()
    }

    #[test]
    fn personas_are_seeded() {
        assert_eq!(generate_persona(3, &cfg()), generate_persona(3, &cfg()));
        let (a, b) = (generate_persona(0, &cfg()), generate_persona(1, &cfg()));
        assert!(a.parameter_distance(&b) > 0.0);
    }

    #[test]
    fn clips_are_seeded_and_self_forgery_is_genuine() {
        let p = generate_persona(4, &cfg());
        let a = synthesize_clip(&p, 10, 50, &cfg());
        assert_eq!(a, synthesize_clip(&p, 10, 50, &cfg()));
        assert_eq!(a, forge_clip(&p, &p, 10, 50, &cfg()));
        let q = generate_persona(5, &cfg());
        let f = forge_clip(&p, &q, 10, 50, &cfg());
        assert_eq!(f.0, a.0);
        assert_ne!(f.1, a.1);
    }

    #[test]
    fn noise_free_persona_is_a_function_of_audio() {
        let mut p = generate_persona(6, &cfg());
        p.noise = 0.0;
        let (audio, content) = synthesize_audio(&p, 3, 40, &cfg());
        let e1 = p.respond(&audio, &content, &mut rng::seeded(1));
        let e2 = p.respond(&audio, &content, &mut rng::seeded(2));
        assert_eq!(e1, e2);
    }

    #[test]
    fn blending_interpolates() {
        let (a, b) = (generate_persona(0, &cfg()), generate_persona(1, &cfg()));
        assert_eq!(a.blend(&b, 0.0).response, a.response);
        assert!((a.blend(&b, 1.0).response_distance(&b)) < 1e-12);
    }
}
