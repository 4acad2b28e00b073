//! Experiment configuration files and presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{
    BenchConfig, PerturbKind, PerturbationPlan, ReferenceAmount, ScoringVariant, SplitConfig,
};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng;
use crate::schedule::{ScheduleConfig, TimestepGrid};
use crate::scorer::{DecisionRule, GuidanceConfig, ScoringConfig, DEFAULT_WINDOW};
use crate::synthdata::SynthConfig;
use crate::trainer::TrainConfig;

pub const PRESETS: [&str; 3] = ["paper", "paper-table-lr", "desk"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub pretrain: TrainConfig,
    pub personalize: TrainConfig,
}

/// Benchmark settings; scoring comes from the top-level section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub split: SplitConfig,
    pub variants: Vec<ScoringVariant>,
    pub decision_ks: Vec<f64>,
    pub window: usize,
    pub perturbations: PerturbationPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub training: TrainingSection,
    pub scoring: ScoringConfig,
    pub guidance: GuidanceConfig,
    pub benchmark: BenchmarkSection,
    pub data: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ExperimentConfig {
    /// Full-size hyperparameters.
    pub fn paper() -> Self {
        let model = ModelConfig::default();
        let bench = BenchConfig::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            model,
            schedule: ScheduleConfig::default(),
            training: TrainingSection {
                pretrain: TrainConfig::default(),
                personalize: TrainConfig::default(),
            },
            scoring: ScoringConfig::default(),
            guidance: GuidanceConfig::default(),
            benchmark: BenchmarkSection {
                split: bench.split,
                variants: bench.variants,
                decision_ks: bench.decision_ks,
                window: bench.window,
                perturbations: bench.perturbations,
            },
            data: SynthConfig {
                seq_len: model.seq_len,
                persona: crate::synthdata::PersonaConfig::with_audio_dim(model.audio_dim),
                ..SynthConfig::default()
            },
        }
        .with_seed(0)
    }

    /// The full-size preset with learning rate 4e-4.
    pub fn paper_table_lr() -> Self {
        let mut cfg = Self::paper();
        cfg.training.pretrain.learning_rate = TrainConfig::TABLE_LEARNING_RATE;
        cfg.training.personalize.learning_rate = TrainConfig::TABLE_LEARNING_RATE;
        cfg
    }

    /// Laptop-scale settings used by the acceptance suite.
    pub fn desk() -> Self {
        let model = ModelConfig::desk();
        let grid = |t_start, t_end| TimestepGrid::equally_spaced(t_start, t_end, 4);
        let scoring = ScoringConfig {
            grid: grid(201, 800),
            noise_count: 64,
            seed: 0,
        };
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            model,
            schedule: ScheduleConfig::default(),
            training: TrainingSection {
                pretrain: TrainConfig {
                    batch_size: 64,
                    learning_rate: 1e-3,
                    epochs: 40,
                    ..TrainConfig::default()
                },
                personalize: TrainConfig {
                    batch_size: 16,
                    learning_rate: 1e-3,
                    epochs: 50,
                    ..TrainConfig::default()
                },
            },
            scoring,
            guidance: GuidanceConfig::default(),
            benchmark: BenchmarkSection {
                split: SplitConfig {
                    subjects: 4,
                    references: ReferenceAmount::Clips(8),
                    validation_clips: 8,
                    genuine_test_clips: 8,
                    forged_test_clips: 8,
                },
                variants: vec![
                    ScoringVariant {
                        name: "full-range".into(),
                        scoring: ScoringConfig {
                            grid: grid(1, 1000),
                            ..scoring
                        },
                    },
                    ScoringVariant {
                        name: "single-draw".into(),
                        scoring: ScoringConfig {
                            noise_count: 1,
                            ..scoring
                        },
                    },
                ],
                decision_ks: DecisionRule::PRESET_KS.to_vec(),
                window: DEFAULT_WINDOW,
                perturbations: PerturbationPlan {
                    kinds: vec![PerturbKind::ExpressionNoise],
                    severities: vec![1, 3, 5],
                    seed: 0,
                },
            },
            data: SynthConfig {
                personas: 16,
                clips_per_persona: 32,
                seq_len: model.seq_len,
                persona: crate::synthdata::PersonaConfig::with_audio_dim(model.audio_dim),
            },
        }
        .with_seed(0)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "paper-table-lr" => Ok(Self::paper_table_lr()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {PRESETS:?}"
            ))),
        }
    }

    /// Set the global seed and every per-stage seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.training.pretrain.seed = rng::derive(seed, &[1]);
        self.training.personalize.seed = rng::derive(seed, &[2]);
        self.scoring.seed = rng::derive(seed, &[3]);
        for v in &mut self.benchmark.variants {
            v.scoring.seed = self.scoring.seed;
        }
        self.benchmark.perturbations.seed = rng::derive(seed, &[4]);
        self
    }

    /// Seed of the synthetic corpus and evaluation split.
    pub fn data_seed(&self) -> u64 {
        rng::derive(self.seed, &[0])
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            split: self.benchmark.split,
            scoring: self.scoring,
            variants: self.benchmark.variants.clone(),
            decision_ks: self.benchmark.decision_ks.clone(),
            window: self.benchmark.window,
            perturbations: self.benchmark.perturbations.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let schedule = self.schedule.build()?;
        if self.model.diffusion_steps != schedule.steps() {
            return Err(Error::Config(format!(
                "model expects {} diffusion steps, schedule has {}",
                self.model.diffusion_steps,
                schedule.steps()
            )));
        }
        self.training.pretrain.validate()?;
        self.training.personalize.validate()?;
        self.scoring.validate(schedule.steps())?;
        for v in &self.benchmark.variants {
            v.scoring.validate(schedule.steps())?;
        }
        self.guidance.validate()?;
        if self.benchmark.window == 0 {
            return Err(Error::Config("benchmark window must be at least 1".into()));
        }
        if self.data.seq_len != self.model.seq_len
            || self.data.persona.audio_dim != self.model.audio_dim
        {
            return Err(Error::Config(format!(
                "synthetic clips are {}x{} but the model takes {}x{}",
                self.data.seq_len,
                self.data.persona.audio_dim,
                self.model.seq_len,
                self.model.audio_dim
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
        assert!(ExperimentConfig::preset("huge").is_err());
    }

    #[test]
    fn full_size_preset_matches_module_defaults() {
        let cfg = ExperimentConfig::paper();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.model.model_dim, 512);
        assert_eq!(cfg.model.num_layers, 8);
        assert_eq!(cfg.model.num_heads, 8);
        assert_eq!(cfg.model.mlp_dim, 1024);
        assert_eq!(cfg.model.seq_len, 200);
        assert_eq!(cfg.model.adapter_tokens, 8);
        assert_eq!(cfg.training.pretrain.batch_size, 256);
        assert_eq!(cfg.training.pretrain.epochs, 100);
        assert_eq!(cfg.training.pretrain.learning_rate, 1e-4);
        assert_eq!(
            cfg.guidance,
            GuidanceConfig {
                s_a: 0.5,
                s_c: 0.25
            }
        );
        assert_eq!(cfg.scoring.noise_count, 64);
        assert_eq!(cfg.scoring.grid, TimestepGrid::equally_spaced(201, 800, 60));
        assert_eq!(
            ExperimentConfig::paper_table_lr()
                .training
                .pretrain
                .learning_rate,
            4e-4
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::desk().to_json()).unwrap();
        value["model"]["width"] = serde_json::json!(3);
        assert!(matches!(
            ExperimentConfig::from_json(&value.to_string()),
            Err(Error::Config(_))
        ));
        let mut value: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::desk().to_json()).unwrap();
        value["extra"] = serde_json::json!(true);
        assert!(ExperimentConfig::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn seeds_follow_the_global_seed() {
        let a = ExperimentConfig::desk().with_seed(5);
        let b = ExperimentConfig::desk().with_seed(5);
        let c = ExperimentConfig::desk().with_seed(6);
        assert_eq!(a, b);
        assert_ne!(a.training.pretrain.seed, c.training.pretrain.seed);
        assert_ne!(a.data_seed(), c.data_seed());
    }

    #[test]
    fn mismatched_data_shape_is_rejected() {
        let mut cfg = ExperimentConfig::desk();
        cfg.data.seq_len = 40;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
