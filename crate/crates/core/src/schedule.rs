//! Linear noise schedule, the forward diffusion process and timestep grids.
//!
//! Timesteps are 1-indexed: valid values are `1..=T`.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Diffusion constants for `T` steps. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas linearly interpolated from `beta_start` to `beta_end`;
    /// `alpha_bar_t` is the running product of `1 - beta_s`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta bounds must satisfy 0 < start <= end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (beta_end - beta_start) / (steps - 1) as f64;
            (0..steps).map(|i| beta_start + span * i as f64).collect()
        };
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for beta in &betas {
            prod *= 1.0 - beta;
            alpha_bars.push(prod);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Domain {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    /// `sqrt(alpha_bar_t) * z + sqrt(1 - alpha_bar_t) * eps`, elementwise.
    pub fn forward_diffuse(
        &self,
        z: ArrayView2<f64>,
        t: usize,
        eps: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let ab = self.alpha_bar(t)?;
        if z.dim() != eps.dim() {
            return Err(Error::Shape(format!(
                "noise {:?} does not match data {:?}",
                eps.dim(),
                z.dim()
            )));
        }
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(Zip::from(&z)
            .and(&eps)
            .map_collect(|&x, &e| sa * x + sb * e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    UniformRandom,
    EquallySpaced,
}

/// Inclusive timestep range plus the number of points drawn from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestepGrid {
    pub t_start: usize,
    pub t_end: usize,
    pub count: usize,
    pub mode: GridMode,
}

impl TimestepGrid {
    pub fn equally_spaced(t_start: usize, t_end: usize, count: usize) -> Self {
        Self {
            t_start,
            t_end,
            count,
            mode: GridMode::EquallySpaced,
        }
    }

    pub fn uniform(t_start: usize, t_end: usize, count: usize) -> Self {
        Self {
            t_start,
            t_end,
            count,
            mode: GridMode::UniformRandom,
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.t_start == 0 || self.t_start > self.t_end || self.t_end > steps {
            return Err(Error::Grid(format!(
                "bounds [{}, {}] invalid for {steps} steps",
                self.t_start, self.t_end
            )));
        }
        if self.count == 0 {
            return Err(Error::Grid("grid needs at least one point".into()));
        }
        Ok(())
    }

    pub fn points(&self, rng: &mut Rng) -> Result<Vec<usize>> {
        sample_timesteps(self, self.count, rng)
    }
}

/// Draw `n` timesteps from the grid's range according to its mode.
///
/// Equally spaced points are `round(t_start + j (t_end - t_start) / (n - 1))`
/// and always include both endpoints; the random stream is untouched.
pub fn sample_timesteps(grid: &TimestepGrid, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Grid("n must be at least 1".into()));
    }
    if grid.t_start == 0 || grid.t_start > grid.t_end {
        return Err(Error::Grid(format!(
            "bounds [{}, {}] invalid",
            grid.t_start, grid.t_end
        )));
    }
    match grid.mode {
        GridMode::UniformRandom => Ok((0..n)
            .map(|_| rng.gen_range(grid.t_start..=grid.t_end))
            .collect()),
        GridMode::EquallySpaced => {
            let width = grid.t_end - grid.t_start;
            if n == 1 {
                return if width == 0 {
                    Ok(vec![grid.t_start])
                } else {
                    Err(Error::Grid(
                        "a single equally spaced point cannot include both endpoints".into(),
                    ))
                };
            }
            let step = width as f64 / (n - 1) as f64;
            let mut points: Vec<usize> = (0..n)
                .map(|j| (grid.t_start as f64 + j as f64 * step).round() as usize)
                .collect();
            points.dedup();
            if points.len() < n {
                return Err(Error::Grid(format!(
                    "{n} distinct points do not fit in [{}, {}]",
                    grid.t_start, grid.t_end
                )));
            }
            Ok(points)
        }
    }
}
