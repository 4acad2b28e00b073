//! Benchmark driver and report.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, auc, average_auc};
use super::perturb::{perturb, PerturbKind};
use super::split::{EvaluationSplit, SplitConfig, SubjectSplit};
use crate::adapter::AdapterParams;
use crate::error::{Error, Result};
use crate::model::BaseModelParams;
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::scorer::{
    authenticate, fit_decision_rule, temporal_from_score, AuthScore, DecisionRule, GuidanceConfig,
    ScoringConfig, Verdict, DEFAULT_WINDOW,
};
use crate::synthdata::ClipMeta;
use crate::trainer::{personalize, Clip, TrainConfig};

/// Enrolls subjects and scores clips against an enrollment.
pub trait Authenticator {
    type Enrolled;

    fn enroll(&self, subject: &SubjectSplit) -> Result<Self::Enrolled>;

    fn score(
        &self,
        enrolled: &Self::Enrolled,
        clip: &Clip,
        meta: &ClipMeta,
        scoring: &ScoringConfig,
    ) -> Result<AuthScore>;

    /// Configuration recorded in the report metadata.
    fn describe(&self) -> serde_json::Value;
}

/// The diffusion scorer: one adapter per subject over a frozen base.
pub struct DiffusionAuthenticator<'a> {
    pub base: &'a BaseModelParams,
    pub schedule: &'a NoiseSchedule,
    pub personalization: TrainConfig,
    pub guidance: GuidanceConfig,
}

impl Authenticator for DiffusionAuthenticator<'_> {
    type Enrolled = AdapterParams;

    fn enroll(&self, subject: &SubjectSplit) -> Result<AdapterParams> {
        Ok(personalize(
            self.base,
            &subject.reference_set()?,
            self.schedule,
            &self.personalization,
        )?
        .adapter)
    }

    fn score(
        &self,
        enrolled: &AdapterParams,
        clip: &Clip,
        _meta: &ClipMeta,
        scoring: &ScoringConfig,
    ) -> Result<AuthScore> {
        authenticate(
            self.base,
            &clip.expression,
            &clip.audio,
            enrolled,
            scoring,
            &self.guidance,
            self.schedule,
        )
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "diffusion",
            "model": self.base.config,
            "personalization": self.personalization,
            "guidance": self.guidance,
        })
    }
}

/// Reads the label: forged clips score 2, genuine ones 1.
pub struct OracleAuthenticator;

impl Authenticator for OracleAuthenticator {
    type Enrolled = ();

    fn enroll(&self, _subject: &SubjectSplit) -> Result<()> {
        Ok(())
    }

    fn score(
        &self,
        _enrolled: &(),
        clip: &Clip,
        meta: &ClipMeta,
        _scoring: &ScoringConfig,
    ) -> Result<AuthScore> {
        let value = if meta.genuine { 1.0 } else { 2.0 };
        let frames = clip.len();
        Ok(AuthScore {
            value,
            d1: 1.0,
            d2: value,
            samples: Vec::new(),
            frame_unadapted: vec![1.0; frames],
            frame_adapted: vec![value; frames],
        })
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "oracle" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringVariant {
    pub name: String,
    pub scoring: ScoringConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationPlan {
    pub kinds: Vec<PerturbKind>,
    pub severities: Vec<u8>,
    pub seed: u64,
}

impl Default for PerturbationPlan {
    fn default() -> Self {
        Self {
            kinds: PerturbKind::ALL.to_vec(),
            severities: vec![1, 2, 3, 4, 5],
            seed: 0,
        }
    }
}

impl PerturbationPlan {
    pub fn none() -> Self {
        Self {
            kinds: Vec::new(),
            severities: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub split: SplitConfig,
    pub scoring: ScoringConfig,
    /// Alternative scoring configs applied to the test clips.
    pub variants: Vec<ScoringVariant>,
    pub decision_ks: Vec<f64>,
    pub window: usize,
    pub perturbations: PerturbationPlan,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            split: SplitConfig::default(),
            scoring: ScoringConfig::default(),
            variants: Vec::new(),
            decision_ks: DecisionRule::PRESET_KS.to_vec(),
            window: DEFAULT_WINDOW,
            perturbations: PerturbationPlan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub subject: String,
    pub clip_id: String,
    pub genuine: bool,
    pub actor_id: Option<u64>,
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    /// Smoothed per-frame score series.
    pub frames: Vec<f64>,
    pub frame_mean: f64,
}

impl ScoreRecord {
    pub fn new(subject: &str, meta: &ClipMeta, score: &AuthScore, window: usize) -> Result<Self> {
        let temporal = temporal_from_score(score, window)?;
        Ok(Self {
            subject: subject.into(),
            clip_id: meta.clip_id.clone(),
            genuine: meta.genuine,
            actor_id: meta.actor_id,
            value: score.value,
            d1: score.d1,
            d2: score.d2,
            frames: temporal.smoothed,
            frame_mean: temporal.mean,
        })
    }
}

/// AUCs of the ratio and of its two raw terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub ratio: f64,
    pub d1: f64,
    pub d2: f64,
}

impl AucSummary {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ScoreRecord>) -> Result<Self> {
        let (real, fake): (Vec<&ScoreRecord>, Vec<&ScoreRecord>) =
            records.into_iter().partition(|r| r.genuine);
        let col = |rs: &[&ScoreRecord], f: fn(&ScoreRecord) -> f64| -> Vec<f64> {
            rs.iter().map(|r| f(r)).collect()
        };
        Ok(Self {
            ratio: auc(&col(&real, |r| r.value), &col(&fake, |r| r.value))?,
            d1: auc(&col(&real, |r| r.d1), &col(&fake, |r| r.d1))?,
            d2: auc(&col(&real, |r| r.d2), &col(&fake, |r| r.d2))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleResult {
    pub rule: DecisionRule,
    pub threshold: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: String,
    pub persona_id: u64,
    pub auc: AucSummary,
    pub validation_scores: Vec<f64>,
    pub rules: Vec<RuleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub scoring: ScoringConfig,
    pub auc: AucSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: PerturbKind,
    pub severity: u8,
    pub magnitude: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTrend {
    pub kind: PerturbKind,
    /// AUC never rises from one severity to the next.
    pub non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub bench: BenchConfig,
    pub scorer: serde_json::Value,
    /// Free-form configuration of the producing command.
    pub extra: serde_json::Value,
    pub created_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub metadata: RunMetadata,
    pub datasets: BTreeMap<String, f64>,
    pub average_auc: f64,
    pub pooled: AucSummary,
    pub subjects: Vec<SubjectResult>,
    /// Subject-averaged accuracy per threshold multiplier.
    pub mean_accuracy: Vec<(f64, f64)>,
    pub variants: Vec<VariantResult>,
    pub sweep: Vec<SweepRow>,
    pub trends: Vec<SweepTrend>,
    pub clips: Vec<ScoreRecord>,
}

impl BenchReport {
    /// The report with run-time stamps removed, for reproducibility checks.
    pub fn without_timestamps(&self) -> Self {
        let mut r = self.clone();
        r.metadata.created_unix = None;
        r
    }

    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// Writes `report.json` and `scores.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let mut w = csv::Writer::from_path(dir.join("scores.csv"))?;
        w.write_record([
            "subject",
            "clip_id",
            "label",
            "actor_id",
            "A",
            "d1",
            "d2",
            "frame_mean",
        ])?;
        for c in &self.clips {
            w.write_record([
                c.subject.clone(),
                c.clip_id.clone(),
                if c.genuine { "real" } else { "fake" }.to_string(),
                c.actor_id.map(|a| a.to_string()).unwrap_or_default(),
                c.value.to_string(),
                c.d1.to_string(),
                c.d2.to_string(),
                c.frame_mean.to_string(),
            ])?;
        }
        w.flush()
            .map_err(|e| Error::io(dir.join("scores.csv"), e))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

/// Enroll every subject, fit thresholds on validation clips, score test
/// clips under the main config, its variants and the perturbation plan.
///
/// Subjects are processed in split order and clips in split order, so the
/// report is a deterministic function of its inputs.
pub fn run_benchmark<A: Authenticator>(
    split: &EvaluationSplit,
    scorer: &A,
    cfg: &BenchConfig,
    mut progress: impl FnMut(&str),
) -> Result<(BenchReport, Vec<A::Enrolled>)> {
    split.validate()?;
    if cfg.decision_ks.is_empty() {
        return Err(Error::Config(
            "at least one threshold multiplier is needed".into(),
        ));
    }
    let mut clips = Vec::new();
    let mut subjects = Vec::new();
    let mut enrolled_all = Vec::new();
    let mut variant_records: Vec<Vec<ScoreRecord>> = vec![Vec::new(); cfg.variants.len()];
    let mut sweep_scores: BTreeMap<(PerturbKind, u8), Vec<ScoreRecord>> = BTreeMap::new();

    for s in &split.subjects {
        progress(&format!("enrolling {}", s.subject));
        let enrolled = scorer.enroll(s)?;
        let score =
            |c: &Clip, meta: &ClipMeta, sc: &ScoringConfig| scorer.score(&enrolled, c, meta, sc);

        let validation_scores = s
            .validation
            .iter()
            .map(|c| score(&c.clip, &c.meta, &cfg.scoring).map(|a| a.value))
            .collect::<Result<Vec<_>>>()?;
        let records = s
            .test
            .iter()
            .map(|c| {
                ScoreRecord::new(
                    &s.subject,
                    &c.meta,
                    &score(&c.clip, &c.meta, &cfg.scoring)?,
                    cfg.window,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let rules = cfg
            .decision_ks
            .iter()
            .map(|&k| {
                let rule = fit_decision_rule(&validation_scores, k)?;
                let (real, fake): (Vec<&ScoreRecord>, Vec<&ScoreRecord>) =
                    records.iter().partition(|r| r.genuine);
                let call = |rs: &[&ScoreRecord]| -> Vec<bool> {
                    rs.iter()
                        .map(|r| rule.decide(r.value) == Verdict::Fake)
                        .collect()
                };
                Ok(RuleResult {
                    rule,
                    threshold: rule.threshold(),
                    accuracy: accuracy(&call(&real), &call(&fake))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let subject_auc = AucSummary::from_records(&records)?;
        progress(&format!(
            "{}: AUC {:.4} (d1 {:.4}, d2 {:.4})",
            s.subject, subject_auc.ratio, subject_auc.d1, subject_auc.d2
        ));

        for (vi, v) in cfg.variants.iter().enumerate() {
            for c in &s.test {
                let a = score(&c.clip, &c.meta, &v.scoring)?;
                variant_records[vi].push(ScoreRecord::new(&s.subject, &c.meta, &a, cfg.window)?);
            }
        }
        for (ki, &kind) in cfg.perturbations.kinds.iter().enumerate() {
            for &severity in &cfg.perturbations.severities {
                kind.magnitude(severity)?;
                if severity == 0 {
                    continue;
                }
                for (ci, c) in s.test.iter().enumerate() {
                    let mut r = rng::substream(
                        cfg.perturbations.seed,
                        &[ki as u64, severity as u64, c.meta.persona_id, ci as u64],
                    );
                    let corrupted = perturb(&c.clip, kind, severity, &mut r)?;
                    let a = score(&corrupted, &c.meta, &cfg.scoring)?;
                    sweep_scores
                        .entry((kind, severity))
                        .or_default()
                        .push(ScoreRecord::new(&s.subject, &c.meta, &a, cfg.window)?);
                }
            }
        }

        subjects.push(SubjectResult {
            subject: s.subject.clone(),
            persona_id: s.persona_id,
            auc: subject_auc,
            validation_scores,
            rules,
        });
        clips.extend(records);
        enrolled_all.push(enrolled);
    }

    let pooled = AucSummary::from_records(&clips)?;
    let datasets = BTreeMap::from([(split.name.clone(), pooled.ratio)]);
    let mean_accuracy = cfg
        .decision_ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let total: f64 = subjects.iter().map(|s| s.rules[i].accuracy).sum();
            (k, total / subjects.len() as f64)
        })
        .collect();
    let variants = cfg
        .variants
        .iter()
        .zip(&variant_records)
        .map(|(v, recs)| {
            Ok(VariantResult {
                name: v.name.clone(),
                scoring: v.scoring,
                auc: AucSummary::from_records(recs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sweep = Vec::new();
    let mut trends = Vec::new();
    for &kind in &cfg.perturbations.kinds {
        let mut series = Vec::new();
        for &severity in &cfg.perturbations.severities {
            let value = if severity == 0 {
                pooled.ratio
            } else {
                AucSummary::from_records(&sweep_scores[&(kind, severity)])?.ratio
            };
            series.push(value);
            sweep.push(SweepRow {
                kind,
                severity,
                magnitude: kind.magnitude(severity)?,
                auc: value,
            });
        }
        progress(&format!("sweep {kind}: {series:?}"));
        trends.push(SweepTrend {
            kind,
            non_increasing: non_increasing(&series),
        });
    }

    let report = BenchReport {
        metadata: RunMetadata {
            bench: cfg.clone(),
            scorer: scorer.describe(),
            extra: serde_json::Value::Null,
            created_unix: None,
        },
        average_auc: average_auc(&datasets)?,
        datasets,
        pooled,
        subjects,
        mean_accuracy,
        variants,
        sweep,
        trends,
        clips,
    };
    Ok((report, enrolled_all))
}

/// Test-clip records of one class.
pub fn test_records(report: &BenchReport, genuine: bool) -> Vec<&ScoreRecord> {
    report
        .clips
        .iter()
        .filter(|c| c.genuine == genuine)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::split::build_evaluation_split;
    use crate::synthdata::SynthConfig;

    fn synth() -> SynthConfig {
        SynthConfig {
            personas: 4,
            clips_per_persona: 1,
            seq_len: 10,
            ..SynthConfig::default()
        }
    }

    fn cfg() -> BenchConfig {
        BenchConfig {
            split: SplitConfig {
                subjects: 2,
                validation_clips: 3,
                genuine_test_clips: 3,
                forged_test_clips: 3,
                ..SplitConfig::default()
            },
            variants: vec![ScoringVariant {
                name: "single-draw".into(),
                scoring: ScoringConfig {
                    noise_count: 1,
                    ..ScoringConfig::default()
                },
            }],
            perturbations: PerturbationPlan {
                kinds: vec![PerturbKind::ExpressionNoise, PerturbKind::FrameDropHold],
                severities: vec![0, 1, 5],
                seed: 3,
            },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn oracle_scorer_is_perfect_everywhere() {
        let cfg = cfg();
        let split = build_evaluation_split(&synth(), &cfg.split, 1).unwrap();
        let (report, enrolled) = run_benchmark(&split, &OracleAuthenticator, &cfg, |_| {}).unwrap();
        assert_eq!(enrolled.len(), 2);
        assert_eq!(report.pooled.ratio, 1.0);
        assert_eq!(report.average_auc, 1.0);
        assert!(report.subjects.iter().all(|s| s.auc.ratio == 1.0));
        assert!(report.sweep.iter().all(|r| r.auc == 1.0));
        assert_eq!(report.sweep.len(), 6);
        assert_eq!(report.variant("single-draw").unwrap().auc.ratio, 1.0);
        // Zero-variance validation puts the threshold at 1; ties are real.
        for s in &report.subjects {
            assert_eq!(s.rules.len(), 3);
            assert!(s.rules.iter().all(|r| r.accuracy == 1.0));
        }
        assert_eq!(report.clips.len(), 12);
        assert_eq!(report.clips[0].frames.len(), 10);
    }

    #[test]
    fn report_roundtrips_through_disk() {
        let cfg = BenchConfig {
            perturbations: PerturbationPlan::none(),
            ..cfg()
        };
        let split = build_evaluation_split(&synth(), &cfg.split, 2).unwrap();
        let (report, _) = run_benchmark(&split, &OracleAuthenticator, &cfg, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        assert_eq!(
            BenchReport::read(&dir.path().join("report.json")).unwrap(),
            report
        );
        let csv = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + report.clips.len());
    }

    #[test]
    fn missing_components_are_input_errors() {
        let cfg = cfg();
        let mut split = build_evaluation_split(&synth(), &cfg.split, 1).unwrap();
        split.subjects[0].references.clear();
        assert!(matches!(
            run_benchmark(&split, &OracleAuthenticator, &cfg, |_| {}),
            Err(Error::Input(_))
        ));
    }
}
