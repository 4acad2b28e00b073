use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};
use expose_cli::{
    cmd_bench, cmd_personalize, cmd_plot, cmd_pretrain, cmd_score, cmd_synth, RunLog,
};
use expose_core::config::ExperimentConfig;
use expose_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "expose",
    version,
    about = "Talking-identity forgery detection pipeline"
)]
struct Cli {
    /// Experiment config file (JSON); overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in config: paper, paper-table-lr or desk.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Global seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location (directory, or file for `score`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and evaluation split.
    Synth,
    /// Pre-train the base model on a corpus.
    Pretrain { corpus: PathBuf },
    /// Train a subject adapter against a base checkpoint.
    Personalize {
        corpus: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        subject: String,
    },
    /// Score one clip against a subject adapter.
    Score {
        corpus: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        clip: String,
    },
    /// Run the benchmark on the corpus' evaluation split.
    Bench {
        corpus: PathBuf,
        #[arg(long)]
        base: PathBuf,
    },
    /// Render figures from a report or score records.
    Plot { input: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Pretrain { .. } => "pretrain",
            Command::Personalize { .. } => "personalize",
            Command::Score { .. } => "score",
            Command::Bench { .. } => "bench",
            Command::Plot { .. } => "plot",
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(&cli.preset)?,
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let name = cli.command.name();
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.join(name));
    let log_dir = match &cli.command {
        Command::Score { .. } => out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
        _ => out.clone(),
    };
    let mut log = RunLog::open(&log_dir, name)?;
    log.event("start", serde_json::json!({ "seed": cfg.seed, "out": out }));
    match &cli.command {
        Command::Synth => {
            cmd_synth(&cfg, &out, &mut log)?;
        }
        Command::Pretrain { corpus } => {
            cmd_pretrain(&cfg, corpus, &out, &mut log)?;
        }
        Command::Personalize {
            corpus,
            base,
            subject,
        } => {
            cmd_personalize(&cfg, base, corpus, subject, &out, &mut log)?;
        }
        Command::Score {
            corpus,
            base,
            adapter,
            clip,
        } => {
            let record = cmd_score(&cfg, base, adapter, corpus, clip, &mut log)?;
            let json = serde_json::to_string_pretty(&record)?;
            if cli.out.is_some() {
                std::fs::write(&out, &json).map_err(|e| Error::io(&out, e))?;
            }
            println!("{json}");
        }
        Command::Bench { corpus, base } => {
            let report = cmd_bench(&cfg, base, corpus, &out, &mut log)?;
            println!(
                "pooled AUC {:.4} (d1 {:.4}, d2 {:.4})",
                report.pooled.ratio, report.pooled.d1, report.pooled.d2
            );
        }
        Command::Plot { input } => {
            for f in cmd_plot(input, &out, &mut log)? {
                println!("{}", f.display());
            }
        }
    }
    log.event("done", serde_json::Value::Null);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
