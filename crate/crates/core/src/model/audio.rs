//! Desk audio front end: log band energies of short Hann-windowed frames,
//! linearly resampled to the expression frame count.

use ndarray::Array2;

use super::types::{AudioFeatures, Waveform};
use crate::error::{Error, Result};

/// Pluggable frame-level audio encoder.
pub trait AudioEncoder {
    fn encode(&self, wave: &Waveform, frames: usize) -> Result<AudioFeatures>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandEnergyEncoder {
    pub bands: usize,
    /// Analysis hop in seconds.
    pub hop_secs: f64,
    pub min_hz: f64,
}

impl BandEnergyEncoder {
    pub fn new(bands: usize) -> Self {
        Self {
            bands,
            hop_secs: 0.01,
            min_hz: 60.0,
        }
    }

    fn band_centers(&self, sample_rate: f64) -> Vec<f64> {
        let max_hz = 0.45 * sample_rate;
        let lo = self.min_hz.min(max_hz * 0.5);
        if self.bands == 1 {
            return vec![lo];
        }
        (0..self.bands)
            .map(|b| lo * (max_hz / lo).powf(b as f64 / (self.bands - 1) as f64))
            .collect()
    }

    fn analyse(&self, wave: &Waveform) -> Vec<Vec<f64>> {
        let sr = wave.sample_rate as f64;
        let hop = ((self.hop_secs * sr).round() as usize).max(1);
        let win = 2 * hop;
        let centers = self.band_centers(sr);
        let n = wave.samples.len();
        let count = n.div_ceil(hop).max(1);
        let hann: Vec<f64> = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
            .collect();
        (0..count)
            .map(|f| {
                let start = f * hop;
                centers
                    .iter()
                    .map(|&hz| {
                        let w = 2.0 * std::f64::consts::PI * hz / sr;
                        let (mut re, mut im) = (0.0, 0.0);
                        for (i, &h) in hann.iter().enumerate() {
                            let Some(&x) = wave.samples.get(start + i) else {
                                break;
                            };
                            let phase = w * i as f64;
                            re += h * x * phase.cos();
                            im -= h * x * phase.sin();
                        }
                        ((re * re + im * im) / win as f64).ln_1p()
                    })
                    .collect()
            })
            .collect()
    }
}

impl AudioEncoder for BandEnergyEncoder {
    fn encode(&self, wave: &Waveform, frames: usize) -> Result<AudioFeatures> {
        encode_with(self, wave, frames)
    }
}

fn encode_with(enc: &BandEnergyEncoder, wave: &Waveform, frames: usize) -> Result<AudioFeatures> {
    if wave.samples.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    if frames == 0 || enc.bands == 0 {
        return Err(Error::Input("need at least one frame and one band".into()));
    }
    let native = enc.analyse(wave);
    let mut out = Array2::zeros((frames, enc.bands));
    let last = (native.len() - 1) as f64;
    for l in 0..frames {
        let pos = if frames == 1 {
            0.0
        } else {
            last * l as f64 / (frames - 1) as f64
        };
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(native.len() - 1);
        let frac = pos - i0 as f64;
        for b in 0..enc.bands {
            out[[l, b]] = (1.0 - frac) * native[i0][b] + frac * native[i1][b];
        }
    }
    AudioFeatures::new(out)
}

/// Encode with the desk band-energy front end.
pub fn encode_audio(wave: &Waveform, frames: usize, bands: usize) -> Result<AudioFeatures> {
    encode_with(&BandEnergyEncoder::new(bands), wave, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64, secs: f64, sr: u32) -> Waveform {
        let n = (secs * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / sr as f64).sin())
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    #[test]
    fn silence_gives_finite_features_of_requested_length() {
        let w = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        let f = encode_audio(&w, 50, 16).unwrap();
        assert_eq!(f.values().dim(), (50, 16));
        assert!(f.values().iter().all(|v| v.is_finite() && *v == 0.0));
    }

    #[test]
    fn any_length_maps_to_target_frames() {
        for n in [1usize, 7, 160, 3333, 16_000] {
            let w =
                Waveform::new((0..n).map(|i| (i as f64 * 0.1).sin()).collect(), 16_000).unwrap();
            assert_eq!(encode_audio(&w, 50, 8).unwrap().len(), 50);
            assert_eq!(encode_audio(&w, 1, 8).unwrap().len(), 1);
        }
    }

    #[test]
    fn deterministic_and_frequency_selective() {
        let low = tone(100.0, 0.5, 16_000);
        let high = tone(3000.0, 0.5, 16_000);
        let a = encode_audio(&low, 20, 12).unwrap();
        assert_eq!(a, encode_audio(&low, 20, 12).unwrap());
        let b = encode_audio(&high, 20, 12).unwrap();
        let argmax = |f: &AudioFeatures| {
            let row = f.values().row(10);
            (0..row.len())
                .max_by(|&i, &j| row[i].total_cmp(&row[j]))
                .unwrap()
        };
        assert!(argmax(&a) < argmax(&b));
    }

    #[test]
    fn empty_waveform_is_rejected() {
        assert!(Waveform::new(vec![], 16_000).is_err());
        let w = Waveform {
            samples: vec![],
            sample_rate: 16_000,
        };
        assert!(matches!(encode_audio(&w, 10, 4), Err(Error::Input(_))));
    }
}
