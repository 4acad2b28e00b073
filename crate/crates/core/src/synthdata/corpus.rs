//! Synthetic corpora in memory and on disk.
//!
//! On disk a corpus is one directory per split holding, per clip,
//! `<clip_id>.audio.f32` and `<clip_id>.expr.f32` (little-endian 32-bit
//! floats, row-major) plus a root `manifest.jsonl` with one JSON object
//! per clip.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::persona::{forge_clip, generate_persona, synthesize_clip, PersonaConfig, PersonaSpec};
use crate::error::{Error, Result};
use crate::model::{AudioFeatures, ExpressionSequence, FEATURE_DIM};
use crate::rng;
use crate::trainer::{Clip, Dataset};

pub const MANIFEST: &str = "manifest.jsonl";

const PERSONA_TAG: u64 = 0x9e50;
const AUDIO_TAG: u64 = 0xa0d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub personas: usize,
    pub clips_per_persona: usize,
    pub seq_len: usize,
    pub persona: PersonaConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            personas: 16,
            clips_per_persona: 32,
            seq_len: 50,
            persona: PersonaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    pub split: String,
    pub persona_id: u64,
    pub genuine: bool,
    /// Persona whose talking identity drives a forged clip.
    pub actor_id: Option<u64>,
    pub frames: usize,
    pub audio_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusClip {
    pub meta: ClipMeta,
    pub clip: Clip,
}

/// Persona `index` of a corpus generated from `seed`.
pub fn persona_for(seed: u64, index: usize, cfg: &PersonaConfig) -> PersonaSpec {
    let mut p = generate_persona(rng::derive(seed, &[PERSONA_TAG, index as u64]), cfg);
    p.id = index as u64;
    p
}

/// Audio seed for clip `index` of `persona` within a named stream.
pub fn audio_seed(seed: u64, stream: u64, persona: usize, index: usize) -> u64 {
    rng::derive(seed, &[AUDIO_TAG, stream, persona as u64, index as u64])
}

pub fn genuine_clip(
    persona: &PersonaSpec,
    split: &str,
    audio_seed: u64,
    clip_id: String,
    cfg: &SynthConfig,
) -> CorpusClip {
    let (audio, expr) = synthesize_clip(persona, audio_seed, cfg.seq_len, &cfg.persona);
    CorpusClip {
        meta: ClipMeta {
            clip_id,
            split: split.into(),
            persona_id: persona.id,
            genuine: true,
            actor_id: None,
            frames: cfg.seq_len,
            audio_dim: cfg.persona.audio_dim,
        },
        clip: Clip::new(expr, audio).expect("generated clip is consistent"),
    }
}

pub fn forged_clip(
    target: &PersonaSpec,
    actor: &PersonaSpec,
    split: &str,
    audio_seed: u64,
    clip_id: String,
    cfg: &SynthConfig,
) -> CorpusClip {
    let (audio, expr) = forge_clip(target, actor, audio_seed, cfg.seq_len, &cfg.persona);
    CorpusClip {
        meta: ClipMeta {
            clip_id,
            split: split.into(),
            persona_id: target.id,
            genuine: false,
            actor_id: Some(actor.id),
            frames: cfg.seq_len,
            audio_dim: cfg.persona.audio_dim,
        },
        clip: Clip::new(expr, audio).expect("generated clip is consistent"),
    }
}

/// `personas x clips_per_persona` genuine clips for pre-training.
pub fn build_pretraining_corpus(cfg: &SynthConfig, seed: u64) -> Vec<CorpusClip> {
    (0..cfg.personas)
        .flat_map(|p| {
            let persona = persona_for(seed, p, &cfg.persona);
            (0..cfg.clips_per_persona)
                .map(|i| {
                    genuine_clip(
                        &persona,
                        "pretrain",
                        audio_seed(seed, 0, p, i),
                        format!("p{p:03}_c{i:04}"),
                        cfg,
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Strip metadata: training never sees identities.
pub fn to_dataset(clips: &[CorpusClip]) -> Result<Dataset> {
    Dataset::new(clips.iter().map(|c| c.clip.clone()).collect())
}

fn write_f32(path: &Path, values: &Array2<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Corruption(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            rows * cols * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Shape(e.to_string()))
}

pub fn write_corpus(dir: &Path, clips: &[CorpusClip]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST);
    let mut manifest =
        fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    for c in clips {
        let split_dir = dir.join(&c.meta.split);
        fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
        write_f32(
            &split_dir.join(format!("{}.audio.f32", c.meta.clip_id)),
            c.clip.audio.values(),
        )?;
        write_f32(
            &split_dir.join(format!("{}.expr.f32", c.meta.clip_id)),
            c.clip.expression.values(),
        )?;
        let line = serde_json::to_string(&c.meta)?;
        writeln!(manifest, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ClipMeta>> {
    let path = dir.join(MANIFEST);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|line| {
            let line = line.map_err(|e| Error::io(&path, e))?;
            Ok(serde_json::from_str(&line)?)
        })
        .collect()
}

pub fn read_corpus(dir: &Path) -> Result<Vec<CorpusClip>> {
    read_manifest(dir)?
        .into_iter()
        .map(|meta| {
            let split_dir = dir.join(&meta.split);
            let audio = read_f32(
                &split_dir.join(format!("{}.audio.f32", meta.clip_id)),
                meta.frames,
                meta.audio_dim,
            )?;
            let expr = read_f32(
                &split_dir.join(format!("{}.expr.f32", meta.clip_id)),
                meta.frames,
                FEATURE_DIM,
            )?;
            let clip = Clip::new(ExpressionSequence::new(expr)?, AudioFeatures::new(audio)?)?;
            Ok(CorpusClip { meta, clip })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            personas: 3,
            clips_per_persona: 2,
            seq_len: 12,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn corpus_counts_and_label_free_dataset() {
        let clips = build_pretraining_corpus(&small(), 1);
        assert_eq!(clips.len(), 6);
        let ds = to_dataset(&clips).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.clips[3], clips[3].clip);
        assert_eq!(clips, build_pretraining_corpus(&small(), 1));
    }

    #[test]
    fn disk_roundtrip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let clips = build_pretraining_corpus(&small(), 2);
        write_corpus(dir.path(), &clips).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), clips.len());
        for (a, b) in clips.iter().zip(&back) {
            assert_eq!(a.meta, b.meta);
            let rounded = a.clip.expression.values().mapv(|v| v as f32 as f64);
            assert_eq!(&rounded, b.clip.expression.values());
        }
        assert!(dir.path().join("pretrain").is_dir());
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let clips = build_pretraining_corpus(&small(), 3);
        write_corpus(dir.path(), &clips).unwrap();
        let victim = dir.path().join("pretrain").join("p000_c0000.expr.f32");
        let bytes = std::fs::read(&victim).unwrap();
        std::fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_corpus(dir.path()), Err(Error::Corruption(_))));
    }
}
