//! Content-agnostic authentication.
//!
//! A clip is scored by how much better a subject adapter reconstructs the
//! noise than the identity-free model does, over one shared set of
//! `(t, eps)` samples. Both predictors are guided:
//!
//! ```text
//! eps_a = eps(0, 0) + s_a (eps(a, 0) - eps(0, 0))
//! eps_c = eps_a     + s_c (eps(a, c) - eps(a, 0))
//! ```

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterParams;
use crate::error::{Error, Result};
use crate::model::{AudioCond, AudioFeatures, ExpressionSequence, IdentityCond, NoisePredictor};
use crate::rng;
use crate::schedule::{NoiseSchedule, TimestepGrid};

pub const DEFAULT_WINDOW: usize = 15;

const GRID_STREAM: u64 = 0x6121d;
const NOISE_STREAM: u64 = 0xe95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub s_a: f64,
    pub s_c: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            s_a: 0.5,
            s_c: 0.25,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_a.is_finite() && self.s_c.is_finite()) {
            return Err(Error::Config("guidance strengths must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    pub grid: TimestepGrid,
    /// Noise draws per timestep.
    pub noise_count: usize,
    pub seed: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            grid: TimestepGrid::equally_spaced(201, 800, 60),
            noise_count: 64,
            seed: 0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.noise_count == 0 {
            return Err(Error::Config("noise_count must be at least 1".into()));
        }
        self.grid.validate(steps)
    }
}

/// Combine branch predictions. `identity` is `eps(a, c)`; without it the
/// result is the audio-guided prediction alone.
pub fn combine_guidance(
    uncond: &Array2<f64>,
    audio: &Array2<f64>,
    identity: Option<&Array2<f64>>,
    g: &GuidanceConfig,
) -> Array2<f64> {
    let mut out = uncond + &((audio - uncond) * g.s_a);
    if let Some(full) = identity {
        out += &((full - audio) * g.s_c);
    }
    out
}

/// Guided noise prediction; `adapter = None` gives the identity-free
/// predictor.
pub fn guided_denoise<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z_t: ArrayView2<f64>,
    t: usize,
    audio: &AudioFeatures,
    adapter: Option<&AdapterParams>,
    g: &GuidanceConfig,
) -> Result<Array2<f64>> {
    let (unadapted, adapted) = guided_pair(predictor, z_t, t, audio, adapter, g)?;
    Ok(adapted.unwrap_or(unadapted))
}

/// Both guided predictions from one set of branch evaluations.
fn guided_pair<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z_t: ArrayView2<f64>,
    t: usize,
    audio: &AudioFeatures,
    adapter: Option<&AdapterParams>,
    g: &GuidanceConfig,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    let uncond = predictor.predict_noise(
        z_t,
        t,
        AudioCond::Unconditional,
        IdentityCond::Unconditional,
    )?;
    let cond = predictor.predict_noise(
        z_t,
        t,
        AudioCond::Features(audio),
        IdentityCond::Unconditional,
    )?;
    let unadapted = combine_guidance(&uncond, &cond, None, g);
    let adapted = match adapter {
        Some(ad) => {
            let full = predictor.predict_noise(
                z_t,
                t,
                AudioCond::Features(audio),
                IdentityCond::Adapter(ad),
            )?;
            Some(combine_guidance(&uncond, &cond, Some(&full), g))
        }
        None => None,
    };
    Ok((unadapted, adapted))
}

/// Squared reconstruction errors of one `(t, eps)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub t: usize,
    pub draw: usize,
    pub unadapted: f64,
    pub adapted: f64,
}

/// Authentication score of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthScore {
    /// `d2 / d1`; lower means the adapter's identity fits the clip.
    pub value: f64,
    /// Mean identity-free error.
    pub d1: f64,
    /// Mean adapted error.
    pub d2: f64,
    pub samples: Vec<SampleError>,
    /// Per-frame errors (summed over channels, averaged over samples).
    pub frame_unadapted: Vec<f64>,
    pub frame_adapted: Vec<f64>,
}

/// The shared `(t, draw)` sample plan for a scoring config.
pub fn sample_plan(cfg: &ScoringConfig, steps: usize) -> Result<Vec<(usize, usize)>> {
    cfg.validate(steps)?;
    let ts = cfg
        .grid
        .points(&mut rng::substream(cfg.seed, &[GRID_STREAM]))?;
    Ok(ts
        .into_iter()
        .flat_map(|t| (0..cfg.noise_count).map(move |k| (t, k)))
        .collect())
}

/// Noise of draw `k` at timestep `t`; identical for every clip and for
/// every `noise_count >= k + 1`.
fn sample_noise(cfg: &ScoringConfig, t: usize, k: usize, shape: (usize, usize)) -> Array2<f64> {
    let mut r = rng::substream(cfg.seed, &[NOISE_STREAM, t as u64, k as u64]);
    rng::standard_normal(shape.0, shape.1, &mut r)
}

fn frame_errors(eps: &Array2<f64>, pred: &Array2<f64>) -> Result<Array2<f64>> {
    let per_frame = (eps - pred)
        .mapv(|v| v * v)
        .sum_axis(Axis(1))
        .insert_axis(Axis(1));
    if per_frame.iter().all(|v| v.is_finite()) {
        Ok(per_frame)
    } else {
        Err(Error::Numeric("non-finite reconstruction error".into()))
    }
}

struct Accumulated {
    samples: Vec<SampleError>,
    frame_unadapted: Vec<f64>,
    frame_adapted: Vec<f64>,
}

fn accumulate<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: &ExpressionSequence,
    audio: &AudioFeatures,
    adapter: Option<&AdapterParams>,
    cfg: &ScoringConfig,
    g: &GuidanceConfig,
    schedule: &NoiseSchedule,
) -> Result<Accumulated> {
    g.validate()?;
    if z.len() != audio.len() || z.len() != predictor.seq_len() {
        return Err(Error::Shape(format!(
            "clip of {} frames with {} audio frames, model expects {}",
            z.len(),
            audio.len(),
            predictor.seq_len()
        )));
    }
    let plan = sample_plan(cfg, schedule.steps())?;
    let len = z.len();
    let mut frame_unadapted = Array2::zeros((len, 1));
    let mut frame_adapted = Array2::zeros((len, 1));
    let mut samples = Vec::with_capacity(plan.len());
    for &(t, draw) in &plan {
        let eps = sample_noise(cfg, t, draw, z.values().dim());
        let z_t = schedule.forward_diffuse(z.view(), t, eps.view())?;
        let (unadapted, adapted) = guided_pair(predictor, z_t.view(), t, audio, adapter, g)?;
        let fu = frame_errors(&eps, &unadapted)?;
        let fa = match &adapted {
            Some(a) => frame_errors(&eps, a)?,
            None => fu.clone(),
        };
        frame_unadapted += &fu;
        frame_adapted += &fa;
        samples.push(SampleError {
            t,
            draw,
            unadapted: fu.sum(),
            adapted: fa.sum(),
        });
    }
    let n = plan.len() as f64;
    Ok(Accumulated {
        samples,
        frame_unadapted: frame_unadapted.iter().map(|v| v / n).collect(),
        frame_adapted: frame_adapted.iter().map(|v| v / n).collect(),
    })
}

/// Mean squared noise-prediction error of the guided predictor
/// (with the adapter if one is given) over the config's sample set.
pub fn reconstruction_distance<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: &ExpressionSequence,
    audio: &AudioFeatures,
    adapter: Option<&AdapterParams>,
    cfg: &ScoringConfig,
    g: &GuidanceConfig,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let acc = accumulate(predictor, z, audio, adapter, cfg, g, schedule)?;
    let errors: Vec<f64> = acc.samples.iter().map(|s| s.adapted).collect();
    Ok(mean(&errors))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `mean(adapted) / mean(unadapted)`.
pub fn ratio_of_means(adapted: &[f64], unadapted: &[f64]) -> Result<f64> {
    if adapted.is_empty() || adapted.len() != unadapted.len() {
        return Err(Error::Input(format!(
            "ratio needs matching nonempty samples, got {} and {}",
            adapted.len(),
            unadapted.len()
        )));
    }
    let d1 = mean(unadapted);
    if d1 <= 0.0 {
        return Err(Error::Degenerate(format!(
            "identity-free reconstruction error is {d1}"
        )));
    }
    Ok(mean(adapted) / d1)
}

/// Score a clip against a subject adapter.
pub fn authenticate<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: &ExpressionSequence,
    audio: &AudioFeatures,
    adapter: &AdapterParams,
    cfg: &ScoringConfig,
    g: &GuidanceConfig,
    schedule: &NoiseSchedule,
) -> Result<AuthScore> {
    let acc = accumulate(predictor, z, audio, Some(adapter), cfg, g, schedule)?;
    let adapted: Vec<f64> = acc.samples.iter().map(|s| s.adapted).collect();
    let unadapted: Vec<f64> = acc.samples.iter().map(|s| s.unadapted).collect();
    let value = ratio_of_means(&adapted, &unadapted)?;
    Ok(AuthScore {
        value,
        d1: mean(&unadapted),
        d2: mean(&adapted),
        samples: acc.samples,
        frame_unadapted: acc.frame_unadapted,
        frame_adapted: acc.frame_adapted,
    })
}

/// Centered moving average; windows are truncated at the edges.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let left = (window - 1) / 2;
    let right = window / 2;
    Ok((0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(series.len() - 1);
            mean(&series[lo..=hi])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalScores {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub mean: f64,
}

/// Per-frame ratio series of an existing score.
pub fn temporal_from_score(score: &AuthScore, window: usize) -> Result<TemporalScores> {
    let raw = score
        .frame_adapted
        .iter()
        .zip(&score.frame_unadapted)
        .map(|(a, u)| {
            if *u > 0.0 {
                Ok(a / u)
            } else {
                Err(Error::Degenerate("zero per-frame error".into()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let smoothed = moving_average(&raw, window)?;
    let mean = mean(&smoothed);
    Ok(TemporalScores {
        raw,
        smoothed,
        mean,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn temporal_scores<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: &ExpressionSequence,
    audio: &AudioFeatures,
    adapter: &AdapterParams,
    cfg: &ScoringConfig,
    g: &GuidanceConfig,
    schedule: &NoiseSchedule,
    window: usize,
) -> Result<TemporalScores> {
    if window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let score = authenticate(predictor, z, audio, adapter, cfg, g, schedule)?;
    temporal_from_score(&score, window)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub mu: f64,
    pub sigma: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Real,
    Fake,
}

impl DecisionRule {
    pub const DEFAULT_K: f64 = 2.0;
    pub const PRESET_KS: [f64; 3] = [1.0, 2.0, 3.0];

    pub fn threshold(&self) -> f64 {
        self.mu + self.k * self.sigma
    }

    /// Fake iff strictly above the threshold.
    pub fn decide(&self, value: f64) -> Verdict {
        if value > self.threshold() {
            Verdict::Fake
        } else {
            Verdict::Real
        }
    }
}

/// Gaussian threshold `mu + k sigma` from real validation scores, with the
/// unbiased standard deviation.
pub fn fit_decision_rule(validation: &[f64], k: f64) -> Result<DecisionRule> {
    if validation.len() < 2 {
        return Err(Error::InsufficientData {
            need: 2,
            got: validation.len(),
        });
    }
    let mu = mean(validation);
    let var =
        validation.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (validation.len() - 1) as f64;
    Ok(DecisionRule {
        mu,
        sigma: var.sqrt(),
        k,
    })
}

pub fn decide(score: &AuthScore, rule: &DecisionRule) -> Verdict {
    rule.decide(score.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::init_adapter;
    use crate::model::{BaseModelParams, ModelConfig, FEATURE_DIM};
    use crate::schedule::ScheduleConfig;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    /// Scalar branches: 0 unconditional, 1 with audio, 2 with identity.
    struct Toy {
        len: usize,
    }

    impl NoisePredictor for Toy {
        fn seq_len(&self) -> usize {
            self.len
        }

        fn predict_noise(
            &self,
            _z_t: ArrayView2<f64>,
            _t: usize,
            audio: AudioCond,
            identity: IdentityCond,
        ) -> Result<Array2<f64>> {
            let v = match (audio, identity) {
                (AudioCond::Unconditional, _) => 0.0,
                (_, IdentityCond::Unconditional) => 1.0,
                _ => 2.0,
            };
            Ok(Array2::from_elem((self.len, FEATURE_DIM), v))
        }
    }

    /// Recovers the exact noise from `z_t` given the clean sequence, plus
    /// a constant offset.
    struct Offset<'a> {
        z: &'a ExpressionSequence,
        schedule: &'a NoiseSchedule,
        c: f64,
    }

    impl NoisePredictor for Offset<'_> {
        fn seq_len(&self) -> usize {
            self.z.len()
        }

        fn predict_noise(
            &self,
            z_t: ArrayView2<f64>,
            t: usize,
            _audio: AudioCond,
            _identity: IdentityCond,
        ) -> Result<Array2<f64>> {
            let ab = self.schedule.alpha_bar(t)?;
            let eps = (&z_t - &(self.z.values() * ab.sqrt())) / (1.0 - ab).sqrt();
            Ok(eps + self.c)
        }
    }

    fn small_cfg() -> ScoringConfig {
        ScoringConfig {
            grid: TimestepGrid::equally_spaced(201, 800, 3),
            noise_count: 2,
            seed: 9,
        }
    }

    fn audio(len: usize, dim: usize) -> AudioFeatures {
        AudioFeatures::new(Array2::from_shape_fn((len, dim), |(l, d)| {
            ((l * 3 + d) as f64).sin()
        }))
        .unwrap()
    }

    fn expr(len: usize) -> ExpressionSequence {
        ExpressionSequence::new(Array2::from_shape_fn((len, FEATURE_DIM), |(l, d)| {
            ((l + 2 * d) as f64).cos() * 0.5
        }))
        .unwrap()
    }

    #[test]
    fn toy_guidance_hand_value() {
        let cfg = ModelConfig::tiny();
        let ad = AdapterParams::zeros(&cfg);
        let a = audio(2, 3);
        let z = Array2::zeros((2, FEATURE_DIM));
        let g = GuidanceConfig::default();
        let out = guided_denoise(&Toy { len: 2 }, z.view(), 5, &a, Some(&ad), &g).unwrap();
        assert!(out.iter().all(|&v| v == 0.75));
        let no_id = guided_denoise(&Toy { len: 2 }, z.view(), 5, &a, None, &g).unwrap();
        assert!(no_id.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn oracle_and_offset_distances() {
        let schedule = ScheduleConfig::default().build().unwrap();
        let z = expr(4);
        let a = audio(4, 3);
        let g = GuidanceConfig::default();
        let oracle = Offset {
            z: &z,
            schedule: &schedule,
            c: 0.0,
        };
        let d =
            reconstruction_distance(&oracle, &z, &a, None, &small_cfg(), &g, &schedule).unwrap();
        assert!(d < 1e-18, "{d}");
        let c = 0.3;
        let shifted = Offset { c, ..oracle };
        let d =
            reconstruction_distance(&shifted, &z, &a, None, &small_cfg(), &g, &schedule).unwrap();
        assert_relative_eq!(d, c * c * 4.0 * FEATURE_DIM as f64, max_relative = 1e-9);
    }

    #[test]
    fn zero_projection_adapter_is_neutral() {
        let cfg = ModelConfig::tiny();
        let mut r = rng::seeded(3);
        let base = BaseModelParams::init(&cfg, &mut r).unwrap();
        let mut ad = init_adapter(&cfg, &mut r).unwrap();
        ad.w_k.fill(0.0);
        ad.w_v.fill(0.0);
        let schedule = ScheduleConfig::default().build().unwrap();
        let s = authenticate(
            &base,
            &expr(cfg.seq_len),
            &audio(cfg.seq_len, cfg.audio_dim),
            &ad,
            &small_cfg(),
            &GuidanceConfig::default(),
            &schedule,
        )
        .unwrap();
        assert!((s.value - 1.0).abs() <= 1e-12, "{}", s.value);
        assert_eq!(s.d1, s.d2);
        assert_eq!(s.samples.len(), 6);
    }

    #[test]
    fn scores_are_reproducible_and_nested_in_noise_count() {
        let cfg = ModelConfig::tiny();
        let mut r = rng::seeded(4);
        let base = BaseModelParams::init(&cfg, &mut r).unwrap();
        let ad = init_adapter(&cfg, &mut r).unwrap();
        let schedule = ScheduleConfig::default().build().unwrap();
        let (z, a) = (expr(cfg.seq_len), audio(cfg.seq_len, cfg.audio_dim));
        let g = GuidanceConfig::default();
        let run = |sc: &ScoringConfig| authenticate(&base, &z, &a, &ad, sc, &g, &schedule).unwrap();
        let first = run(&small_cfg());
        assert_eq!(first, run(&small_cfg()));
        let fewer = run(&ScoringConfig {
            noise_count: 1,
            ..small_cfg()
        });
        assert_eq!(fewer.samples[0], first.samples[0]);
        assert_eq!(fewer.samples[1], first.samples[2]);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ratio_of_means(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 0.5);
        assert_eq!(ratio_of_means(&[3.0, 5.0], &[3.0, 5.0]).unwrap(), 1.0);
        assert!(matches!(
            ratio_of_means(&[1.0], &[0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn moving_average_with_truncated_edges() {
        let ramp = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(moving_average(&ramp, 1).unwrap(), ramp.to_vec());
        assert_eq!(
            moving_average(&ramp, 3).unwrap(),
            vec![1.5, 2.0, 3.0, 4.0, 4.5]
        );
        assert!(moving_average(&ramp, 0).is_err());
    }

    #[test]
    fn constant_frames_give_flat_series() {
        let score = AuthScore {
            value: 0.8,
            d1: 5.0,
            d2: 4.0,
            samples: vec![],
            frame_unadapted: vec![2.5, 2.5],
            frame_adapted: vec![2.0, 2.0],
        };
        let ts = temporal_from_score(&score, DEFAULT_WINDOW).unwrap();
        assert_eq!(ts.smoothed, vec![0.8, 0.8]);
        assert_eq!(ts.mean, score.value);
    }

    #[test]
    fn decision_rules() {
        let r = fit_decision_rule(&[1.0, 1.0, 1.0, 1.0], 2.0).unwrap();
        assert_eq!(r.threshold(), 1.0);
        let r = fit_decision_rule(&[0.9, 1.1], 1.0).unwrap();
        assert_relative_eq!(r.mu, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.sigma, 0.02f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r.threshold(), 1.141_421_356_237_309_5, epsilon = 1e-12);
        assert!(matches!(
            fit_decision_rule(&[1.0], 2.0),
            Err(Error::InsufficientData { need: 2, got: 1 })
        ));

        let rule = DecisionRule {
            mu: 1.0,
            sigma: 0.1,
            k: 2.0,
        };
        assert_eq!(rule.decide(1.15), Verdict::Real);
        assert_eq!(rule.decide(rule.threshold()), Verdict::Real);
        assert_eq!(rule.decide(1.25), Verdict::Fake);
        assert_eq!(rule.decide(1.30), Verdict::Fake);
    }
}
