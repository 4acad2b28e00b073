//! Per-subject evaluation splits built from synthetic personas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FRAME_RATE;
use crate::synthdata::{
    audio_seed, forged_clip, genuine_clip, persona_for, CorpusClip, PersonaSpec, SynthConfig,
};
use crate::trainer::ReferenceSet;

const REFERENCE_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;
const GENUINE_STREAM: u64 = 3;
const FORGED_STREAM: u64 = 4;

/// How much reference material each subject gets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceAmount {
    Clips(usize),
    /// Equivalent seconds of footage, rounded up to whole clips.
    Seconds(f64),
}

impl ReferenceAmount {
    /// Durations swept when studying reference length.
    pub const SWEEP_SECONDS: [f64; 4] = [15.0, 30.0, 60.0, 120.0];

    pub fn clips(&self, seq_len: usize) -> Result<usize> {
        let n = match *self {
            Self::Clips(n) => n,
            Self::Seconds(s) if s.is_finite() && s > 0.0 => {
                (s * FRAME_RATE / seq_len as f64).ceil() as usize
            }
            Self::Seconds(s) => {
                return Err(Error::Config(format!(
                    "reference duration {s} s is invalid"
                )))
            }
        };
        if n == 0 {
            return Err(Error::Config(
                "subjects need at least one reference clip".into(),
            ));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub subjects: usize,
    pub references: ReferenceAmount,
    pub validation_clips: usize,
    pub genuine_test_clips: usize,
    pub forged_test_clips: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            subjects: 4,
            references: ReferenceAmount::Clips(8),
            validation_clips: 8,
            genuine_test_clips: 8,
            forged_test_clips: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSplit {
    pub subject: String,
    pub persona_id: u64,
    pub references: Vec<CorpusClip>,
    /// Real clips for fitting the decision threshold.
    pub validation: Vec<CorpusClip>,
    /// Labelled by `meta.genuine`.
    pub test: Vec<CorpusClip>,
}

impl SubjectSplit {
    pub fn reference_set(&self) -> Result<ReferenceSet> {
        ReferenceSet::new(
            self.subject.clone(),
            self.references.iter().map(|c| c.clip.clone()).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::Input(format!(
                "{} has no reference clips",
                self.subject
            )));
        }
        if self.test.iter().all(|c| c.meta.genuine) || self.test.iter().all(|c| !c.meta.genuine) {
            return Err(Error::Input(format!(
                "{} needs genuine and forged test clips",
                self.subject
            )));
        }
        let mut ids: Vec<&str> = self
            .references
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .map(|c| c.meta.clip_id.as_str())
            .collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            return Err(Error::Input(format!(
                "{} reuses a clip across roles",
                self.subject
            )));
        }
        Ok(())
    }
}

/// Split role names used in clip metadata.
pub const REFERENCE_ROLE: &str = "ref";
pub const VALIDATION_ROLE: &str = "val";
pub const TEST_ROLE: &str = "test";

pub fn subject_name(persona_id: u64) -> String {
    format!("subject{persona_id:02}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSplit {
    pub name: String,
    pub subjects: Vec<SubjectSplit>,
}

impl EvaluationSplit {
    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() {
            return Err(Error::Input("evaluation split has no subjects".into()));
        }
        self.subjects.iter().try_for_each(SubjectSplit::validate)
    }

    /// Regroup corpus clips by subject; clips of other roles are ignored.
    pub fn from_clips(name: &str, clips: Vec<CorpusClip>) -> Result<Self> {
        let mut subjects: Vec<SubjectSplit> = Vec::new();
        for c in clips {
            let role = c.meta.split.as_str();
            if ![REFERENCE_ROLE, VALIDATION_ROLE, TEST_ROLE].contains(&role) {
                continue;
            }
            let idx = match subjects
                .iter()
                .position(|s| s.persona_id == c.meta.persona_id)
            {
                Some(i) => i,
                None => {
                    subjects.push(SubjectSplit {
                        subject: subject_name(c.meta.persona_id),
                        persona_id: c.meta.persona_id,
                        references: Vec::new(),
                        validation: Vec::new(),
                        test: Vec::new(),
                    });
                    subjects.len() - 1
                }
            };
            let s = &mut subjects[idx];
            match role {
                REFERENCE_ROLE => s.references.push(c),
                VALIDATION_ROLE => s.validation.push(c),
                _ => s.test.push(c),
            }
        }
        subjects.sort_by_key(|s| s.persona_id);
        let split = Self {
            name: name.into(),
            subjects,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn subject(&self, name: &str) -> Result<&SubjectSplit> {
        self.subjects
            .iter()
            .find(|s| s.subject == name)
            .ok_or_else(|| Error::Input(format!("no subject named {name}")))
    }

    pub fn all_clips(&self) -> impl Iterator<Item = &CorpusClip> {
        self.subjects
            .iter()
            .flat_map(|s| s.references.iter().chain(&s.validation).chain(&s.test))
    }
}

/// Subjects are the first `subjects` personas of the corpus seeded by
/// `seed`; forgeries re-enact a subject's audio with another persona of
/// the same corpus. Audio streams are disjoint from the pre-training
/// stream and from each other.
pub fn build_evaluation_split(
    synth: &SynthConfig,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<EvaluationSplit> {
    if cfg.subjects == 0 || cfg.subjects > synth.personas {
        return Err(Error::Config(format!(
            "{} subjects requested from {} personas",
            cfg.subjects, synth.personas
        )));
    }
    if synth.personas < 2 && cfg.forged_test_clips > 0 {
        return Err(Error::Config("forgeries need at least two personas".into()));
    }
    let refs = cfg.references.clips(synth.seq_len)?;
    let personas: Vec<PersonaSpec> = (0..synth.personas)
        .map(|p| persona_for(seed, p, &synth.persona))
        .collect();
    let subjects = (0..cfg.subjects)
        .map(|s| {
            let me = &personas[s];
            let name = subject_name(me.id);
            let genuine = |stream: u64, role: &str, i: usize| {
                genuine_clip(
                    me,
                    role,
                    audio_seed(seed, stream, s, i),
                    format!("{name}_{role}{i:03}"),
                    synth,
                )
            };
            let references = (0..refs)
                .map(|i| genuine(REFERENCE_STREAM, REFERENCE_ROLE, i))
                .collect();
            let validation = (0..cfg.validation_clips)
                .map(|i| genuine(VALIDATION_STREAM, VALIDATION_ROLE, i))
                .collect();
            let mut test: Vec<CorpusClip> = (0..cfg.genuine_test_clips)
                .map(|i| genuine(GENUINE_STREAM, "real", i))
                .collect();
            test.extend((0..cfg.forged_test_clips).map(|i| {
                let actor = &personas[(s + 1 + i % (synth.personas - 1)) % synth.personas];
                forged_clip(
                    me,
                    actor,
                    "fake",
                    audio_seed(seed, FORGED_STREAM, s, i),
                    format!("{name}_fake{i:03}"),
                    synth,
                )
            }));
            for c in &mut test {
                c.meta.split = TEST_ROLE.into();
            }
            SubjectSplit {
                subject: name,
                persona_id: me.id,
                references,
                validation,
                test,
            }
        })
        .collect();
    let split = EvaluationSplit {
        name: "synthetic".into(),
        subjects,
    };
    split.validate()?;
    Ok(split)
}
