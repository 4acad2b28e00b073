//! Pipeline commands behind the `expose` binary.
//!
//! Every command takes a resolved [`ExperimentConfig`], writes its
//! artifacts under an output directory and appends JSON lines to
//! `run.log` there.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use expose_core::bench::{
    build_evaluation_split, plot_report, plot_traces, run_benchmark, BenchReport,
    DiffusionAuthenticator, EvaluationSplit, ScoreRecord,
};
use expose_core::checkpoint::{self, Manifest};
use expose_core::config::ExperimentConfig;
use expose_core::scorer::authenticate;
use expose_core::synthdata::{
    build_pretraining_corpus, read_corpus, to_dataset, write_corpus, CorpusClip,
};
use expose_core::trainer::{personalize_with, run_pretraining};
use expose_core::{Error, Result};

pub const RUN_LOG: &str = "run.log";
pub const PRETRAIN_SPLIT: &str = "pretrain";
pub const TRAINING_LOG: &str = "training.jsonl";
/// Subdirectory of a corpus holding the evaluation split.
pub const EVAL_DIR: &str = "eval";

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Structured run log: one JSON object per line, mirrored to stderr.
pub struct RunLog {
    file: Option<File>,
    command: String,
    quiet: bool,
}

impl RunLog {
    pub fn open(dir: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUN_LOG);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            file: Some(file),
            command: command.into(),
            quiet: false,
        })
    }

    /// A log that records nothing.
    pub fn discard() -> Self {
        Self {
            file: None,
            command: String::new(),
            quiet: true,
        }
    }

    pub fn quiet(mut self) -> Self {
        self.quiet = true;
        self
    }

    pub fn event(&mut self, event: &str, fields: serde_json::Value) {
        let line = serde_json::json!({
            "ts": now_unix(),
            "command": self.command,
            "event": event,
            "fields": fields,
        });
        if let Some(f) = &mut self.file {
            // Logging must never abort a run.
            let _ = writeln!(f, "{line}");
        }
        if !self.quiet {
            eprintln!("[{}] {event} {fields}", self.command);
        }
    }
}

fn snapshot(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Fail with both digests when a checkpoint was made under another model
/// config.
fn check_model(cfg: &ExperimentConfig, manifest: &Manifest) -> Result<()> {
    let expected = checkpoint::config_digest(&cfg.model);
    if expected != manifest.config_digest {
        return Err(Error::Compatibility {
            detail: "checkpoint model config differs from the experiment config".into(),
            expected,
            found: manifest.config_digest.clone(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub pretrain_clips: usize,
    pub evaluation_clips: usize,
}

/// Write the pre-training corpus to `out` and the evaluation split to
/// `out/eval`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path, log: &mut RunLog) -> Result<SynthSummary> {
    cfg.validate()?;
    let seed = cfg.data_seed();
    let clips = build_pretraining_corpus(&cfg.data, seed);
    let split = build_evaluation_split(&cfg.data, &cfg.benchmark.split, seed)?;
    let eval: Vec<CorpusClip> = split.all_clips().cloned().collect();
    write_corpus(out, &clips)?;
    write_corpus(&out.join(EVAL_DIR), &eval)?;
    cfg.save(&out.join("config.json"))?;
    let summary = SynthSummary {
        pretrain_clips: clips.len(),
        evaluation_clips: eval.len(),
    };
    log.event(
        "corpus",
        serde_json::json!({
            "dir": out,
            "pretrain_clips": summary.pretrain_clips,
            "evaluation_clips": summary.evaluation_clips,
        }),
    );
    Ok(summary)
}

fn pretraining_clips(corpus: &Path) -> Result<Vec<CorpusClip>> {
    let clips: Vec<CorpusClip> = read_corpus(corpus)?
        .into_iter()
        .filter(|c| c.meta.split == PRETRAIN_SPLIT)
        .collect();
    if clips.is_empty() {
        return Err(Error::Input(format!(
            "{} has no {PRETRAIN_SPLIT} clips",
            corpus.display()
        )));
    }
    Ok(clips)
}

/// The evaluation split of a corpus written by `cmd_synth`, or of a
/// directory holding only a split.
pub fn evaluation_split(corpus: &Path) -> Result<EvaluationSplit> {
    let nested = corpus.join(EVAL_DIR);
    let dir = if nested.is_dir() {
        nested
    } else {
        corpus.to_path_buf()
    };
    EvaluationSplit::from_clips("synthetic", read_corpus(&dir)?)
}

/// Pre-train the base model on the corpus' pre-training split and save it
/// to `out` with a per-epoch training log.
pub fn cmd_pretrain(
    cfg: &ExperimentConfig,
    corpus: &Path,
    out: &Path,
    log: &mut RunLog,
) -> Result<Manifest> {
    cfg.validate()?;
    let dataset = to_dataset(&pretraining_clips(corpus)?)?;
    let schedule = cfg.schedule.build()?;
    log.event(
        "pretrain-start",
        serde_json::json!({ "clips": dataset.len(), "epochs": cfg.training.pretrain.epochs }),
    );
    let mut curve = Vec::new();
    let (params, _) = run_pretraining(
        &dataset,
        &cfg.model,
        &schedule,
        &cfg.training.pretrain,
        |r| {
            log.event(
                "epoch",
                serde_json::json!({ "epoch": r.epoch, "mean_loss": r.mean_loss }),
            );
            curve.push(serde_json::to_string(r).expect("record serializes"));
        },
    )?;
    let manifest = checkpoint::save_base(&params, out, snapshot(cfg))?;
    let curve_path = out.join(TRAINING_LOG);
    fs::write(&curve_path, curve.join("\n") + "\n").map_err(|e| Error::io(&curve_path, e))?;
    log.event(
        "checkpoint",
        serde_json::json!({ "dir": out, "payload_sha256": manifest.payload_sha256 }),
    );
    Ok(manifest)
}

/// Train one subject's adapter against a frozen base checkpoint.
pub fn cmd_personalize(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    corpus: &Path,
    subject: &str,
    out: &Path,
    log: &mut RunLog,
) -> Result<Manifest> {
    cfg.validate()?;
    let (base, base_manifest) = checkpoint::load_base(base_dir)?;
    check_model(cfg, &base_manifest)?;
    let split = evaluation_split(corpus)?;
    let refs = split.subject(subject)?.reference_set()?;
    let schedule = cfg.schedule.build()?;
    log.event(
        "personalize-start",
        serde_json::json!({ "subject": subject, "references": refs.clips.len() }),
    );
    let every = (refs.clips.len() * cfg.training.personalize.epochs / 10).max(1);
    let result = personalize_with(
        &base,
        &refs,
        &schedule,
        &cfg.training.personalize,
        |it, loss| {
            if (it + 1) % every == 0 {
                log.event(
                    "iteration",
                    serde_json::json!({ "iteration": it + 1, "loss": loss }),
                );
            }
        },
    )?;
    let mut snap = snapshot(cfg);
    snap["subject"] = serde_json::json!(subject);
    let manifest = checkpoint::save_adapter(&result.adapter, &base_manifest, out, snap)?;
    log.event(
        "checkpoint",
        serde_json::json!({
            "dir": out,
            "parameters": result.adapter.param_count(),
            "iterations": result.iterations,
        }),
    );
    Ok(manifest)
}

/// Score one clip of the corpus against a subject adapter.
pub fn cmd_score(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    adapter_dir: &Path,
    corpus: &Path,
    clip_id: &str,
    log: &mut RunLog,
) -> Result<ScoreRecord> {
    cfg.validate()?;
    let (base, base_manifest) = checkpoint::load_base(base_dir)?;
    check_model(cfg, &base_manifest)?;
    let (adapter, adapter_manifest) = checkpoint::load_adapter(adapter_dir, Some(&base_manifest))?;
    let clip = evaluation_split(corpus)?
        .all_clips()
        .find(|c| c.meta.clip_id == clip_id)
        .cloned()
        .ok_or_else(|| Error::Input(format!("no clip {clip_id} in {}", corpus.display())))?;
    let schedule = cfg.schedule.build()?;
    let score = authenticate(
        &base,
        &clip.clip.expression,
        &clip.clip.audio,
        &adapter,
        &cfg.scoring,
        &cfg.guidance,
        &schedule,
    )?;
    let subject = adapter_manifest.snapshot["subject"]
        .as_str()
        .unwrap_or("unknown")
        .to_string();
    let record = ScoreRecord::new(&subject, &clip.meta, &score, cfg.benchmark.window)?;
    log.event(
        "score",
        serde_json::json!({
            "subject": record.subject,
            "clip_id": record.clip_id,
            "A": record.value,
            "d1": record.d1,
            "d2": record.d2,
        }),
    );
    Ok(record)
}

/// Full benchmark: enroll every subject, score, write report, per-clip
/// CSV, figures and the subject adapters under `out`.
pub fn cmd_bench(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    corpus: &Path,
    out: &Path,
    log: &mut RunLog,
) -> Result<BenchReport> {
    cfg.validate()?;
    let (base, base_manifest) = checkpoint::load_base(base_dir)?;
    check_model(cfg, &base_manifest)?;
    let split = evaluation_split(corpus)?;
    let schedule = cfg.schedule.build()?;
    let scorer = DiffusionAuthenticator {
        base: &base,
        schedule: &schedule,
        personalization: cfg.training.personalize,
        guidance: cfg.guidance,
    };
    let (mut report, adapters) = run_benchmark(&split, &scorer, &cfg.bench_config(), |msg| {
        log.event("progress", serde_json::json!(msg))
    })?;
    report.metadata.extra = serde_json::json!({
        "experiment": snapshot(cfg),
        "base_payload_sha256": base_manifest.payload_sha256,
    });
    report.metadata.created_unix = Some(now_unix());
    report.write(out)?;
    for (s, adapter) in split.subjects.iter().zip(&adapters) {
        let mut snap = snapshot(cfg);
        snap["subject"] = serde_json::json!(s.subject);
        checkpoint::save_adapter(
            adapter,
            &base_manifest,
            &out.join("adapters").join(&s.subject),
            snap,
        )?;
    }
    let figures = plot_report(&report, &out.join("figures"))?;
    log.event(
        "report",
        serde_json::json!({
            "dir": out,
            "pooled_auc": report.pooled,
            "variants": report.variants.iter().map(|v| (&v.name, v.auc.ratio)).collect::<Vec<_>>(),
            "mean_accuracy": report.mean_accuracy,
            "figures": figures,
        }),
    );
    Ok(report)
}

/// Render figures from a benchmark report or from score records (one
/// record, or a JSON array of them).
pub fn cmd_plot(input: &Path, out: &Path, log: &mut RunLog) -> Result<Vec<PathBuf>> {
    let bytes = fs::read(input).map_err(|e| Error::io(input, e))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let figures = if value.get("clips").is_some() {
        plot_report(&serde_json::from_value::<BenchReport>(value)?, out)?
    } else {
        let records: Vec<ScoreRecord> = if value.is_array() {
            serde_json::from_value(value)?
        } else {
            vec![serde_json::from_value(value)?]
        };
        if records.is_empty() {
            return Err(Error::Input("no score records to plot".into()));
        }
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("temporal.png");
        plot_traces(&records.iter().collect::<Vec<_>>(), &path)?;
        vec![path]
    };
    log.event("figures", serde_json::json!({ "files": figures }));
    Ok(figures)
}
