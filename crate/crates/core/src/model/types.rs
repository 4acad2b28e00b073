use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 50 expression coefficients followed by 3 jaw-pose coefficients.
pub const EXPRESSION_DIM: usize = 50;
pub const JAW_DIM: usize = 3;
pub const FEATURE_DIM: usize = EXPRESSION_DIM + JAW_DIM;
pub const FRAME_RATE: f64 = 25.0;

fn check_finite(values: &Array2<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(what.into()))
    }
}

/// Per-frame expression and jaw coefficients, `L x 53`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionSequence {
    values: Array2<f64>,
}

impl ExpressionSequence {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() != FEATURE_DIM {
            return Err(Error::Shape(format!(
                "expression width {} != {FEATURE_DIM}",
                values.ncols()
            )));
        }
        check_finite(&values, "expression sequence")?;
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / FRAME_RATE
    }
}

/// Frame-synchronous audio conditioning, `L x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatures {
    values: Array2<f64>,
}

impl AudioFeatures {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_finite(&values, "audio features")?;
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("empty waveform".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }
}
