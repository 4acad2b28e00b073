//! The `expose` binary end to end on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use expose_core::adapter::count_adapter_params;
use expose_core::bench::{PerturbKind, PerturbationPlan, ReferenceAmount, SplitConfig};
use expose_core::checkpoint;
use expose_core::config::ExperimentConfig;
use expose_core::model::ModelConfig;
use expose_core::schedule::TimestepGrid;
use expose_core::synthdata::PersonaConfig;
use tempfile::TempDir;

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.model = ModelConfig {
        seq_len: 8,
        model_dim: 8,
        mlp_dim: 16,
        num_heads: 2,
        num_layers: 1,
        audio_dim: 4,
        adapter_tokens: 2,
        ..ModelConfig::desk()
    };
    cfg.data.personas = 4;
    cfg.data.clips_per_persona = 8;
    cfg.data.seq_len = 8;
    cfg.data.persona = PersonaConfig::with_audio_dim(4);
    cfg.training.pretrain.epochs = 1;
    cfg.training.pretrain.batch_size = 8;
    cfg.training.personalize.epochs = 2;
    cfg.training.personalize.batch_size = 2;
    cfg.scoring.grid = TimestepGrid::equally_spaced(201, 800, 2);
    cfg.scoring.noise_count = 2;
    cfg.benchmark.split = SplitConfig {
        subjects: 2,
        references: ReferenceAmount::Clips(2),
        validation_clips: 2,
        genuine_test_clips: 2,
        forged_test_clips: 2,
    };
    cfg.benchmark.variants.clear();
    cfg.benchmark.perturbations = PerturbationPlan {
        kinds: vec![PerturbKind::ExpressionNoise],
        severities: vec![2],
        seed: 0,
    };
    cfg.with_seed(3)
}

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new(cfg: &ExperimentConfig) -> Self {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("experiment.json");
        cfg.save(&config).unwrap();
        Self { dir, config }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_expose"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.log" {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_one_manifest_line_per_clip_and_is_reproducible() {
    let ws = Workspace::new(&tiny_config());
    let a = ws.path("a");
    let b = ws.path("b");
    ws.ok(&["--out", s(&a), "synth"]);
    ws.ok(&["--out", s(&b), "synth"]);
    let manifest = fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 32);
    assert!(a.join("pretrain").is_dir());
    assert!(a.join("eval").join("manifest.jsonl").is_file());
    assert!(a.join("run.log").is_file());
    assert_eq!(files(&a), files(&b));
}

#[test]
fn unwritable_output_fails_with_a_clear_message() {
    let ws = Workspace::new(&tiny_config());
    let blocker = ws.path("blocker");
    fs::write(&blocker, b"not a directory").unwrap();
    let out = ws.run(&["--out", s(&blocker.join("corpus")), "synth"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("blocker"), "{stderr}");
}

#[test]
fn usage_errors_exit_with_one() {
    let ws = Workspace::new(&tiny_config());
    assert_eq!(ws.run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ws.run(&["score", "x"]).status.code(), Some(1));
    assert_eq!(ws.run(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_is_a_usage_error() {
    let ws = Workspace::new(&tiny_config());
    fs::write(&ws.config, "{\"seed\": 1}").unwrap();
    let out = ws.run(&["--out", s(&ws.path("c")), "synth"]);
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_expose"))
        .args(["--preset", "enormous", "synth"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline() {
    let cfg = tiny_config();
    let ws = Workspace::new(&cfg);
    let corpus = ws.path("corpus");
    let base = ws.path("base");
    ws.ok(&["--out", s(&corpus), "synth"]);
    ws.ok(&["--out", s(&base), "pretrain", s(&corpus)]);
    let training = fs::read_to_string(base.join("training.jsonl")).unwrap();
    assert_eq!(training.lines().count(), cfg.training.pretrain.epochs);

    let digest = checkpoint::payload_digest(&base).unwrap();
    let adapter = ws.path("adapter");
    ws.ok(&[
        "--out",
        s(&adapter),
        "personalize",
        s(&corpus),
        "--base",
        s(&base),
        "--subject",
        "subject00",
    ]);
    assert_eq!(checkpoint::payload_digest(&base).unwrap(), digest);
    let (params, manifest) = checkpoint::load_adapter(&adapter, None).unwrap();
    let expected = count_adapter_params(cfg.model.model_dim, cfg.model.adapter_tokens);
    assert_eq!(params.param_count(), expected);
    let stored: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    assert_eq!(stored, expected);
    assert_eq!(manifest.snapshot["subject"], "subject00");

    let split = expose_cli::evaluation_split(&corpus).unwrap();
    let clip_id = split.subject("subject00").unwrap().test[0]
        .meta
        .clip_id
        .clone();
    let score_path = ws.path("score.json");
    let out = ws.ok(&[
        "--out",
        s(&score_path),
        "score",
        s(&corpus),
        "--base",
        s(&base),
        "--adapter",
        s(&adapter),
        "--clip",
        &clip_id,
    ]);
    let record: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(record["clip_id"], clip_id.as_str());
    assert!(record["value"].as_f64().unwrap() > 0.0);

    let bench = ws.path("bench");
    ws.ok(&["--out", s(&bench), "bench", s(&corpus), "--base", s(&base)]);
    for f in ["report.json", "scores.csv", "run.log"] {
        assert!(bench.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(bench.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["clips"].as_array().unwrap().len(), 2 * 4);
    assert!(bench.join("figures").join("roc.png").is_file());
    assert!(bench
        .join("adapters")
        .join("subject01")
        .join("manifest.json")
        .is_file());

    let figures = ws.path("figures");
    ws.ok(&["--out", s(&figures), "plot", s(&bench.join("report.json"))]);
    assert!(figures.join("roc.png").is_file());
    let traces = ws.path("traces");
    ws.ok(&["--out", s(&traces), "plot", s(&score_path)]);
    assert!(fs::read_dir(&traces).unwrap().any(|e| e
        .unwrap()
        .path()
        .extension()
        .is_some_and(|x| x == "png")));

    // A config with another model shape must not load this checkpoint.
    let mut other = cfg.clone();
    other.model.model_dim = 16;
    fs::write(&ws.config, other.to_json()).unwrap();
    let out = ws.run(&[
        "--out",
        s(&ws.path("adapter2")),
        "personalize",
        s(&corpus),
        "--base",
        s(&base),
        "--subject",
        "subject00",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains(&checkpoint::config_digest(&cfg.model)),
        "{stderr}"
    );
    assert!(
        stderr.contains(&checkpoint::config_digest(&other.model)),
        "{stderr}"
    );
}
