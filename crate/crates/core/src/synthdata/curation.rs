//! Curation-stage operations on parametric face coefficients: shape
//! singularization, iterative coefficient refinement against a pluggable
//! objective, and the duration/quality clip filter.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExpressionSequence, EXPRESSION_DIM, JAW_DIM};
use crate::optim::{Optimizer, OptimizerConfig};

pub const REFINE_ITERS: usize = 10;
pub const REFINE_LR: f64 = 5e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeCoeffs {
    /// One shape vector per frame, `L x S`.
    PerFrame(Array2<f64>),
    /// A single shape shared by every frame.
    Shared(Array1<f64>),
}

/// Shape, expression (`L x 50`) and pose (`L x P`, jaw in the last three
/// columns) coefficients of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FlameSequence {
    pub shape: ShapeCoeffs,
    pub expression: Array2<f64>,
    pub pose: Array2<f64>,
}

impl FlameSequence {
    pub fn new(shape: ShapeCoeffs, expression: Array2<f64>, pose: Array2<f64>) -> Result<Self> {
        let len = expression.nrows();
        if expression.ncols() != EXPRESSION_DIM || pose.nrows() != len || pose.ncols() < JAW_DIM {
            return Err(Error::Shape(format!(
                "expression {:?} / pose {:?} inconsistent",
                expression.dim(),
                pose.dim()
            )));
        }
        if let ShapeCoeffs::PerFrame(a) = &shape {
            if a.nrows() != len {
                return Err(Error::Shape(format!(
                    "{} shape frames for {len} frames",
                    a.nrows()
                )));
            }
        }
        Ok(Self {
            shape,
            expression,
            pose,
        })
    }

    pub fn len(&self) -> usize {
        self.expression.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.expression.nrows() == 0
    }

    pub fn is_singular(&self) -> bool {
        matches!(self.shape, ShapeCoeffs::Shared(_))
    }

    /// Replace per-frame shapes by their mean.
    pub fn singularize(self) -> Result<Self> {
        let shape = match self.shape {
            ShapeCoeffs::PerFrame(a) => ShapeCoeffs::Shared(singularize_shape(&a)?),
            shared => shared,
        };
        Ok(Self { shape, ..self })
    }

    /// The 53 modeled coefficients: 50 expression plus 3 jaw pose.
    pub fn to_expression_sequence(&self) -> Result<ExpressionSequence> {
        let jaw = self.pose.slice(s![.., self.pose.ncols() - JAW_DIM..]);
        ExpressionSequence::new(concatenate![Axis(1), self.expression.view(), jaw])
    }
}

/// Arithmetic mean over frames of an `frames x S` shape sequence.
pub fn singularize_shape(shapes: &Array2<f64>) -> Result<Array1<f64>> {
    shapes
        .mean_axis(Axis(0))
        .filter(|_| shapes.nrows() > 0)
        .ok_or_else(|| Error::Input("no frames to average".into()))
}

/// Assign one shape, the mean over every frame of every clip, to all
/// clips (per-subject sharing across videos).
pub fn singularize_across(clips: Vec<FlameSequence>) -> Result<Vec<FlameSequence>> {
    let rows: Vec<Array2<f64>> = clips
        .iter()
        .map(|c| match &c.shape {
            ShapeCoeffs::PerFrame(a) => a.clone(),
            ShapeCoeffs::Shared(v) => {
                let width = v.len();
                v.broadcast((c.len(), width))
                    .expect("row broadcast")
                    .to_owned()
            }
        })
        .collect();
    let views: Vec<_> = rows.iter().map(|a| a.view()).collect();
    if views.is_empty() {
        return Err(Error::Input("no clips to singularize".into()));
    }
    let all = concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let mean = singularize_shape(&all)?;
    Ok(clips
        .into_iter()
        .map(|c| FlameSequence {
            shape: ShapeCoeffs::Shared(mean.clone()),
            ..c
        })
        .collect())
}

/// Gradient of a refinement objective with respect to the shared shape,
/// expressions and poses.
#[derive(Debug, Clone, PartialEq)]
pub struct FlameGradient {
    pub shape: Array1<f64>,
    pub expression: Array2<f64>,
    pub pose: Array2<f64>,
}

/// Plug-in seam for the fitting losses.
pub trait RefinementObjective {
    fn describe(&self) -> String;

    fn evaluate(&self, seq: &FlameSequence) -> (f64, FlameGradient);
}

/// Result of refinement: the refined sequence and the objective value
/// before each step and after the last one.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub sequence: FlameSequence,
    pub trace: Vec<f64>,
}

/// `iters` Adam steps on (shared shape, expressions, poses). The shape
/// stays a single shared vector throughout.
pub fn refine_coeffs(
    init: &FlameSequence,
    objective: &dyn RefinementObjective,
    iters: usize,
    lr: f64,
) -> Result<Refinement> {
    let ShapeCoeffs::Shared(shape) = &init.shape else {
        return Err(Error::Input("refinement needs a singularized shape".into()));
    };
    let mut shape = shape.clone().insert_axis(Axis(0));
    let mut expression = init.expression.clone();
    let mut pose = init.pose.clone();
    let mut opt = Optimizer::new(OptimizerConfig::adam());
    let mut trace = Vec::with_capacity(iters + 1);
    let assemble = |shape: &Array2<f64>, e: &Array2<f64>, p: &Array2<f64>| FlameSequence {
        shape: ShapeCoeffs::Shared(shape.row(0).to_owned()),
        expression: e.clone(),
        pose: p.clone(),
    };
    for iter in 0..=iters {
        let current = assemble(&shape, &expression, &pose);
        let (value, grad) = objective.evaluate(&current);
        if !value.is_finite() {
            return Err(Error::Refinement { iter });
        }
        trace.push(value);
        if iter == iters {
            break;
        }
        if grad.shape.len() != shape.ncols()
            || grad.expression.dim() != expression.dim()
            || grad.pose.dim() != pose.dim()
        {
            return Err(Error::Shape(format!(
                "objective {} returned a gradient of the wrong shape",
                objective.describe()
            )));
        }
        let gs = grad.shape.insert_axis(Axis(0));
        opt.step(
            vec![&mut shape, &mut expression, &mut pose],
            &[&gs, &grad.expression, &grad.pose],
            lr,
        );
    }
    Ok(Refinement {
        sequence: assemble(&shape, &expression, &pose),
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipFilter {
    pub min_duration_secs: f64,
    /// Clips must score strictly above this quality.
    pub min_quality: f64,
}

impl Default for ClipFilter {
    fn default() -> Self {
        Self {
            min_duration_secs: 8.0,
            min_quality: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop,
}

impl ClipFilter {
    pub fn decide(&self, duration_secs: f64, quality: f64) -> FilterDecision {
        if duration_secs >= self.min_duration_secs && quality > self.min_quality {
            FilterDecision::Keep
        } else {
            FilterDecision::Drop
        }
    }

    /// Same predicate with the duration given in frames.
    pub fn decide_frames(&self, frames: usize, fps: f64, quality: f64) -> FilterDecision {
        self.decide(frames as f64 / fps, quality)
    }
}

pub fn filter_clip(duration_secs: f64, quality: f64) -> FilterDecision {
    ClipFilter::default().decide(duration_secs, quality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn seq(len: usize, shape_dim: usize) -> FlameSequence {
        let shapes = Array2::from_shape_fn((len, shape_dim), |(l, j)| (l * 3 + j) as f64 * 0.1);
        let expr = Array2::from_shape_fn((len, EXPRESSION_DIM), |(l, j)| ((l + j) as f64).sin());
        let pose = Array2::from_shape_fn((len, 6), |(l, j)| ((l * j) as f64).cos());
        FlameSequence::new(ShapeCoeffs::PerFrame(shapes), expr, pose).unwrap()
    }

    /// `0.5 |x - x*|^2` over every coefficient block.
    struct Quadratic {
        target: FlameSequence,
    }

    impl RefinementObjective for Quadratic {
        fn describe(&self) -> String {
            "quadratic".into()
        }

        fn evaluate(&self, s: &FlameSequence) -> (f64, FlameGradient) {
            let (ShapeCoeffs::Shared(a), ShapeCoeffs::Shared(b)) = (&s.shape, &self.target.shape)
            else {
                unreachable!()
            };
            let gs = a - b;
            let ge = &s.expression - &self.target.expression;
            let gp = &s.pose - &self.target.pose;
            let v = 0.5
                * (gs.mapv(|x| x * x).sum() + ge.mapv(|x| x * x).sum() + gp.mapv(|x| x * x).sum());
            (
                v,
                FlameGradient {
                    shape: gs,
                    expression: ge,
                    pose: gp,
                },
            )
        }
    }

    struct Flat;

    impl RefinementObjective for Flat {
        fn describe(&self) -> String {
            "flat".into()
        }

        fn evaluate(&self, s: &FlameSequence) -> (f64, FlameGradient) {
            let ShapeCoeffs::Shared(a) = &s.shape else {
                unreachable!()
            };
            (
                1.0,
                FlameGradient {
                    shape: Array1::zeros(a.len()),
                    expression: Array2::zeros(s.expression.raw_dim()),
                    pose: Array2::zeros(s.pose.raw_dim()),
                },
            )
        }
    }

    struct Broken;

    impl RefinementObjective for Broken {
        fn describe(&self) -> String {
            "nan".into()
        }

        fn evaluate(&self, s: &FlameSequence) -> (f64, FlameGradient) {
            let (_, g) = Flat.evaluate(s);
            (f64::NAN, g)
        }
    }

    #[test]
    fn mean_shape() {
        let c = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert_eq!(singularize_shape(&c).unwrap(), array![1.0, 2.0]);
        let two = array![[1.0, 4.0], [3.0, -2.0]];
        assert_eq!(singularize_shape(&two).unwrap(), array![2.0, 1.0]);
        let flipped = array![[3.0, -2.0], [1.0, 4.0]];
        assert_eq!(
            singularize_shape(&flipped).unwrap(),
            singularize_shape(&two).unwrap()
        );
        assert!(matches!(
            singularize_shape(&Array2::zeros((0, 2))),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn shared_shape_across_clips() {
        let clips = singularize_across(vec![seq(4, 3), seq(6, 3)]).unwrap();
        assert_eq!(clips[0].shape, clips[1].shape);
        assert!(clips.iter().all(FlameSequence::is_singular));
    }

    #[test]
    fn zero_gradient_leaves_coefficients_unchanged() {
        let s = seq(5, 3).singularize().unwrap();
        let out = refine_coeffs(&s, &Flat, REFINE_ITERS, REFINE_LR).unwrap();
        assert_eq!(out.sequence, s);
    }

    #[test]
    fn quadratic_objective_decreases_every_iteration() {
        let s = seq(5, 3).singularize().unwrap();
        let mut target = s.clone();
        target.expression.mapv_inplace(|v| v + 1.0);
        target.pose.mapv_inplace(|v| v - 0.5);
        target.shape = ShapeCoeffs::Shared(array![2.0, -1.0, 0.0]);
        let out = refine_coeffs(&s, &Quadratic { target }, REFINE_ITERS, REFINE_LR).unwrap();
        assert_eq!(out.trace.len(), REFINE_ITERS + 1);
        assert!(out.trace.windows(2).all(|w| w[1] < w[0]), "{:?}", out.trace);
        assert!(out.sequence.is_singular());
        assert_eq!(out.sequence.expression.dim(), s.expression.dim());
        assert_eq!(out.sequence.pose.dim(), s.pose.dim());
    }

    #[test]
    fn refinement_requires_a_shared_shape_and_finite_objective() {
        assert!(matches!(
            refine_coeffs(&seq(3, 2), &Flat, 10, REFINE_LR),
            Err(Error::Input(_))
        ));
        let s = seq(3, 2).singularize().unwrap();
        assert!(matches!(
            refine_coeffs(&s, &Broken, 10, REFINE_LR),
            Err(Error::Refinement { iter: 0 })
        ));
    }

    #[test]
    fn duration_and_quality_filter() {
        assert_eq!(filter_clip(8.5, 50.0), FilterDecision::Keep);
        assert_eq!(filter_clip(5.0, 90.0), FilterDecision::Drop);
        assert_eq!(filter_clip(10.0, 39.9), FilterDecision::Drop);
        assert_eq!(filter_clip(8.0, 40.0), FilterDecision::Drop);
        assert_eq!(filter_clip(8.0, 40.1), FilterDecision::Keep);
        assert_eq!(
            ClipFilter::default().decide_frames(200, 25.0, 41.0),
            FilterDecision::Keep
        );
    }

    #[test]
    fn modeled_coefficients_take_the_jaw_columns() {
        let s = seq(4, 2);
        let z = s.to_expression_sequence().unwrap();
        assert_eq!(z.values().ncols(), 53);
        assert_eq!(z.values()[[2, 50]], s.pose[[2, 3]]);
        assert_eq!(z.values()[[2, 52]], s.pose[[2, 5]]);
    }
}
