//! Feature-level corruptions with five severity levels.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AudioFeatures, ExpressionSequence};
use crate::rng::Rng;
use crate::trainer::Clip;

pub const MAX_SEVERITY: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbKind {
    /// Additive Gaussian noise on expressions, scaled by channel std.
    ExpressionNoise,
    /// Additive Gaussian noise on audio features, scaled by channel std.
    AudioNoise,
    /// Centered moving average over expression frames.
    TemporalBlur,
    /// Rounding expressions to a grid, step scaled by channel std.
    Quantization,
    /// Random frames replaced by the previous kept frame.
    FrameDropHold,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 5] = [
        Self::ExpressionNoise,
        Self::AudioNoise,
        Self::TemporalBlur,
        Self::Quantization,
        Self::FrameDropHold,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::ExpressionNoise => "expression-noise",
            Self::AudioNoise => "audio-noise",
            Self::TemporalBlur => "temporal-blur",
            Self::Quantization => "quantization",
            Self::FrameDropHold => "frame-drop-hold",
        }
    }

    /// Magnitudes for severities 1..=5: std multiples for the noise and
    /// quantization kinds, window length for blur, drop probability for
    /// frame dropping.
    pub fn magnitudes(&self) -> [f64; 5] {
        match self {
            Self::ExpressionNoise | Self::AudioNoise => [0.01, 0.02, 0.05, 0.1, 0.2],
            Self::TemporalBlur => [3.0, 5.0, 7.0, 11.0, 15.0],
            Self::Quantization => [0.1, 0.2, 0.5, 1.0, 2.0],
            Self::FrameDropHold => [0.05, 0.1, 0.2, 0.3, 0.5],
        }
    }

    pub fn magnitude(&self, severity: u8) -> Result<f64> {
        match severity {
            0 => Ok(0.0),
            1..=MAX_SEVERITY => Ok(self.magnitudes()[severity as usize - 1]),
            _ => Err(Error::Config(format!(
                "severity {severity} outside 0..={MAX_SEVERITY}"
            ))),
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown perturbation kind {s:?}")))
    }
}

fn channel_std(x: &Array2<f64>) -> Array1<f64> {
    x.std_axis(Axis(0), 0.0)
}

fn add_noise(x: &Array2<f64>, scale: f64, r: &mut Rng) -> Array2<f64> {
    let std = channel_std(x);
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (v, s) in row.iter_mut().zip(&std) {
            let z: f64 = StandardNormal.sample(r);
            *v += scale * s * z;
        }
    }
    out
}

fn blur(x: &Array2<f64>, window: usize) -> Array2<f64> {
    let (len, _) = x.dim();
    let half = window / 2;
    let mut out = Array2::zeros(x.raw_dim());
    for l in 0..len {
        let lo = l.saturating_sub(half);
        let hi = (l + half).min(len - 1);
        out.row_mut(l).assign(
            &x.slice(ndarray::s![lo..=hi, ..])
                .mean_axis(Axis(0))
                .expect("nonempty window"),
        );
    }
    out
}

fn quantize(x: &Array2<f64>, scale: f64) -> Array2<f64> {
    let std = channel_std(x);
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (v, s) in row.iter_mut().zip(&std) {
            let step = scale * s;
            if step > 0.0 {
                *v = (*v / step).round() * step;
            }
        }
    }
    out
}

fn drop_hold(x: &Array2<f64>, p: f64, r: &mut Rng) -> Array2<f64> {
    let mut out = x.clone();
    for l in 1..x.nrows() {
        if r.gen::<f64>() < p {
            let prev = out.row(l - 1).to_owned();
            out.row_mut(l).assign(&prev);
        }
    }
    out
}

/// Corrupt a clip. Severity 0 returns the clip unchanged and leaves the
/// stream untouched.
pub fn perturb(clip: &Clip, kind: PerturbKind, severity: u8, r: &mut Rng) -> Result<Clip> {
    let m = kind.magnitude(severity)?;
    if severity == 0 {
        return Ok(clip.clone());
    }
    let expr = clip.expression.values();
    let (expression, audio) = match kind {
        PerturbKind::ExpressionNoise => (add_noise(expr, m, r), None),
        PerturbKind::AudioNoise => (expr.clone(), Some(add_noise(clip.audio.values(), m, r))),
        PerturbKind::TemporalBlur => (blur(expr, m as usize), None),
        PerturbKind::Quantization => (quantize(expr, m), None),
        PerturbKind::FrameDropHold => (drop_hold(expr, m, r), None),
    };
    Clip::new(
        ExpressionSequence::new(expression)?,
        match audio {
            Some(a) => AudioFeatures::new(a)?,
            None => clip.audio.clone(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FEATURE_DIM;
    use crate::rng;

    fn clip() -> Clip {
        Clip::new(
            ExpressionSequence::new(Array2::from_shape_fn((20, FEATURE_DIM), |(l, d)| {
                ((l * 7 + d * 3) as f64 * 0.37).sin()
            }))
            .unwrap(),
            AudioFeatures::new(Array2::from_shape_fn((20, 4), |(l, d)| {
                ((l + d) as f64 * 0.5).cos()
            }))
            .unwrap(),
        )
        .unwrap()
    }

    fn change(a: &Clip, b: &Clip) -> f64 {
        (a.expression.values() - b.expression.values())
            .mapv(|v| v * v)
            .sum()
            + (a.audio.values() - b.audio.values()).mapv(|v| v * v).sum()
    }

    #[test]
    fn severity_zero_is_identity() {
        let c = clip();
        for kind in PerturbKind::ALL {
            let mut r = rng::seeded(1);
            assert_eq!(perturb(&c, kind, 0, &mut r).unwrap(), c);
        }
    }

    #[test]
    fn magnitudes_increase_with_severity() {
        for kind in PerturbKind::ALL {
            let m = kind.magnitudes();
            assert!(m.windows(2).all(|w| w[0] < w[1]), "{kind}");
        }
        assert!(PerturbKind::ExpressionNoise.magnitude(6).is_err());
    }

    #[test]
    fn noise_damage_grows_with_severity() {
        let c = clip();
        for kind in [PerturbKind::ExpressionNoise, PerturbKind::AudioNoise] {
            let damage: Vec<f64> = (1..=MAX_SEVERITY)
                .map(|s| change(&c, &perturb(&c, kind, s, &mut rng::seeded(5)).unwrap()))
                .collect();
            assert!(damage.windows(2).all(|w| w[0] < w[1]), "{kind}: {damage:?}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let c = clip();
        for kind in PerturbKind::ALL {
            let a = perturb(&c, kind, 3, &mut rng::seeded(2)).unwrap();
            let b = perturb(&c, kind, 3, &mut rng::seeded(2)).unwrap();
            assert_eq!(a, b);
            assert!(change(&a, &c) > 0.0, "{kind}");
        }
    }

    #[test]
    fn kinds_parse_by_name() {
        for kind in PerturbKind::ALL {
            assert_eq!(kind.name().parse::<PerturbKind>().unwrap(), kind);
        }
        assert!(matches!(
            "jpeg".parse::<PerturbKind>(),
            Err(Error::Config(_))
        ));
    }
}
