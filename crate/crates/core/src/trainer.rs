//! Pre-training of the base denoiser and per-subject adapter training.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::adapter::{init_adapter, AdapterParams};
use crate::error::{Error, Result};
use crate::model::{
    apply_condition_dropout, backward, forward, AudioCond, AudioFeatures, BaseModelParams,
    ExpressionSequence, IdentityCond, ModelConfig, NoisePredictor,
};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{self, Rng};
use crate::schedule::NoiseSchedule;

/// One expression/audio pair. Carries no identity information.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub expression: ExpressionSequence,
    pub audio: AudioFeatures,
}

impl Clip {
    pub fn new(expression: ExpressionSequence, audio: AudioFeatures) -> Result<Self> {
        if expression.len() != audio.len() {
            return Err(Error::Shape(format!(
                "{} expression frames vs {} audio frames",
                expression.len(),
                audio.len()
            )));
        }
        Ok(Self { expression, audio })
    }

    pub fn len(&self) -> usize {
        self.expression.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expression.is_empty()
    }
}

/// Unlabeled pre-training corpus.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn new(clips: Vec<Clip>) -> Result<Self> {
        if let Some(first) = clips.first() {
            if let Some(bad) = clips.iter().find(|c| c.len() != first.len()) {
                return Err(Error::Shape(format!(
                    "clip of {} frames in a corpus of {}-frame clips",
                    bad.len(),
                    first.len()
                )));
            }
        }
        Ok(Self { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// Trusted clips of one subject.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub subject: String,
    pub clips: Vec<Clip>,
}

impl ReferenceSet {
    pub fn new(subject: impl Into<String>, clips: Vec<Clip>) -> Result<Self> {
        let subject = subject.into();
        if clips.is_empty() {
            return Err(Error::Input(format!(
                "reference set for {subject} is empty"
            )));
        }
        Ok(Self { subject, clips })
    }

    pub fn duration_secs(&self) -> f64 {
        self.clips
            .iter()
            .map(|c| c.expression.duration_secs())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-4,
            epochs: 100,
            optimizer: OptimizerConfig::adan(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate listed in the full hyperparameter table.
    pub const TABLE_LEARNING_RATE: f64 = 4e-4;

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

/// Mean squared error between `eps` and the prediction for `z_t`.
pub fn noise_loss(
    predictor: &impl NoisePredictor,
    z_t: ArrayView2<f64>,
    t: usize,
    eps: ArrayView2<f64>,
    audio: AudioCond,
    identity: IdentityCond,
) -> Result<f64> {
    let pred = predictor.predict_noise(z_t, t, audio, identity)?;
    Ok((&pred - &eps).mapv(|d| d * d).mean().unwrap_or(0.0))
}

/// Which parameters a gradient step updates.
enum Trainable<'a> {
    Base(&'a mut BaseModelParams),
    Adapter {
        base: &'a BaseModelParams,
        adapter: &'a mut AdapterParams,
    },
}

/// Noise draw, timestep and condition coins for one clip in a batch.
fn batch_gradients(
    trainable: &Trainable,
    batch: &[&Clip],
    schedule: &NoiseSchedule,
    cfg_dropout: f64,
    r: &mut Rng,
) -> Result<(f64, Option<BaseModelParams>, Option<AdapterParams>)> {
    let (base, adapter) = match trainable {
        Trainable::Base(p) => (&**p, None),
        Trainable::Adapter { base, adapter } => (*base, Some(&**adapter)),
    };
    let cfg = &base.config;
    let mut base_grads = adapter.is_none().then(|| base.zeros_like());
    let mut adapter_grads = adapter.map(AdapterParams::zeros_like);
    let mut total = 0.0;
    let scale = 2.0 / (batch.len() * cfg.seq_len * cfg.feature_dim) as f64;
    for clip in batch {
        let t = r.gen_range(1..=schedule.steps());
        let eps = rng::standard_normal(cfg.seq_len, cfg.feature_dim, r);
        let z_t = schedule.forward_diffuse(clip.expression.view(), t, eps.view())?;
        let (audio, identity) = match adapter {
            None => (
                apply_condition_dropout(&clip.audio, None, cfg_dropout, r).0,
                IdentityCond::Unconditional,
            ),
            // Subject training keeps the identity and drops audio only.
            Some(a) => (
                apply_condition_dropout(&clip.audio, Some(a), cfg_dropout, r).0,
                IdentityCond::Adapter(a),
            ),
        };
        let (out, cache) = forward(base, z_t.view(), t, audio, identity, Some(r))?;
        let diff = &out - &eps;
        total += diff.iter().map(|d| d * d).sum::<f64>();
        let dout = diff * scale;
        backward(
            base,
            &cache,
            dout.view(),
            base_grads.as_mut(),
            adapter_grads.as_mut(),
        );
    }
    let loss = total / (batch.len() * cfg.seq_len * cfg.feature_dim) as f64;
    Ok((loss, base_grads, adapter_grads))
}

/// Base-model training state.
pub struct Pretrainer {
    pub params: BaseModelParams,
    optimizer: Optimizer,
    config: TrainConfig,
    steps: usize,
}

impl Pretrainer {
    pub fn new(params: BaseModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params,
            optimizer: Optimizer::new(config.optimizer),
            config,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One optimizer update on `batch`; returns the batch loss before the
    /// update.
    pub fn step(&mut self, batch: &[&Clip], schedule: &NoiseSchedule, r: &mut Rng) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let p = self.params.config.cfg_dropout;
        let (loss, grads, _) =
            batch_gradients(&Trainable::Base(&mut self.params), batch, schedule, p, r)?;
        self.steps += 1;
        if !loss.is_finite() {
            return Err(Error::Training {
                step: self.steps,
                detail: format!("loss {loss}"),
            });
        }
        let grads = grads.expect("base gradients");
        let grad_refs: Vec<&Array2<f64>> =
            grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        self.optimizer.step(
            self.params.tensors_mut(),
            &grad_refs,
            self.config.learning_rate,
        );
        if !self.params.is_finite() {
            return Err(Error::Training {
                step: self.steps,
                detail: "parameters became non-finite".into(),
            });
        }
        Ok(loss)
    }
}

/// Train a freshly initialized base model on `dataset` for
/// `config.epochs` passes; `on_epoch` sees each epoch's mean loss.
pub fn run_pretraining(
    dataset: &Dataset,
    model: &ModelConfig,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(BaseModelParams, Vec<EpochRecord>)> {
    if dataset.is_empty() {
        return Err(Error::Input("pre-training corpus is empty".into()));
    }
    if dataset.clips[0].len() != model.seq_len {
        return Err(Error::Shape(format!(
            "corpus clips have {} frames, model expects {}",
            dataset.clips[0].len(),
            model.seq_len
        )));
    }
    if schedule.steps() != model.diffusion_steps {
        return Err(Error::Config(format!(
            "schedule has {} steps, model expects {}",
            schedule.steps(),
            model.diffusion_steps
        )));
    }
    let params = BaseModelParams::init(model, &mut rng::substream(config.seed, &[0]))?;
    let mut trainer = Pretrainer::new(params, *config)?;
    let mut r = rng::substream(config.seed, &[1]);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Clip> = chunk.iter().map(|&i| &dataset.clips[i]).collect();
            sum += trainer.step(&batch, schedule, &mut r)?;
            steps += 1;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: sum / steps as f64,
            steps,
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok((trainer.params, log))
}

/// Outcome of adapter training.
#[derive(Debug, Clone)]
pub struct Personalization {
    pub adapter: AdapterParams,
    pub iterations: usize,
    pub losses: Vec<f64>,
}

/// Train a subject adapter against a frozen base.
///
/// Runs `#clips x epochs` iterations; each batch draws `batch_size` clips
/// from the reference set with replacement.
pub fn personalize(
    base: &BaseModelParams,
    refs: &ReferenceSet,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<Personalization> {
    personalize_with(base, refs, schedule, config, |_, _| {})
}

pub fn personalize_with(
    base: &BaseModelParams,
    refs: &ReferenceSet,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Personalization> {
    config.validate()?;
    if refs.clips.is_empty() {
        return Err(Error::Input(format!(
            "reference set for {} is empty",
            refs.subject
        )));
    }
    if let Some(bad) = refs.clips.iter().find(|c| c.len() != base.config.seq_len) {
        return Err(Error::Shape(format!(
            "reference clip of {} frames, model expects {}",
            bad.len(),
            base.config.seq_len
        )));
    }
    let mut adapter = init_adapter(&base.config, &mut rng::substream(config.seed, &[2]))?;
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut r = rng::substream(config.seed, &[3]);
    let iterations = refs.clips.len() * config.epochs;
    let mut losses = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let batch: Vec<&Clip> = (0..config.batch_size)
            .map(|_| &refs.clips[r.gen_range(0..refs.clips.len())])
            .collect();
        let trainable = Trainable::Adapter {
            base,
            adapter: &mut adapter,
        };
        let (loss, _, grads) = batch_gradients(
            &trainable,
            &batch,
            schedule,
            base.config.cfg_dropout,
            &mut r,
        )?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step: it + 1,
                detail: format!("adapter loss {loss}"),
            });
        }
        let grads = grads.expect("adapter gradients");
        let grad_refs: Vec<&Array2<f64>> =
            grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        optimizer.step(adapter.tensors_mut(), &grad_refs, config.learning_rate);
        on_step(it, loss);
        losses.push(loss);
    }
    Ok(Personalization {
        adapter,
        iterations,
        losses,
    })
}
