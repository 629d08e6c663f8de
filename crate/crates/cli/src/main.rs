use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use earsense::error::Error;
use earsense::pipeline::{self, RunConfig};

/// Earbud IMU to facial landmark pipeline.
///
/// Any config key can be overridden with `--section.key VALUE`
/// (for example `--train.epochs 5`).
#[derive(Parser, Debug)]
#[command(name = "earsense", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accepted for scripts; every command already runs single-threaded.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory (`paths.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate synthetic sessions, a manifest and a face rig.
    Synth,
    /// Calibrate, filter and featurize every session.
    Preprocess,
    /// Train the landmark regressor.
    Train,
    /// Adapt the linear layers to a new wearer.
    Finetune,
    /// Score a predictor on held-out sessions.
    Eval,
    /// Stream per-frame predictions and report latency.
    Infer,
    /// Fit the face rig to a landmark sequence and export meshes.
    Fit,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Missing(_) => 4,
        Error::NonFinite(_) | Error::Divergence { .. } => 5,
        Error::Shape { .. }
        | Error::Degenerate(_)
        | Error::Insufficient(_)
        | Error::Parse { .. }
        | Error::Container { .. }
        | Error::Io(_) => 3,
    }
}

/// Pulls `--a.b VALUE` / `--a.b=VALUE` pairs out of the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--") {
            Some(flag) if flag.contains('.') => match flag.split_once('=') {
                Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
                None => {
                    let v = it.next().ok_or_else(|| format!("--{flag} needs a value"))?;
                    overrides.push((flag.to_string(), v));
                }
            },
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn run(cli: &Cli, mut overrides: Vec<(String, String)>) -> earsense::error::Result<serde_json::Value> {
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &cli.out {
        overrides.push(("paths.out_dir".into(), out.display().to_string()));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth => pipeline::cmd_synth(&cfg),
        Command::Preprocess => pipeline::cmd_preprocess(&cfg),
        Command::Train => pipeline::cmd_train(&cfg),
        Command::Finetune => pipeline::cmd_finetune(&cfg),
        Command::Eval => pipeline::cmd_eval(&cfg),
        Command::Infer => pipeline::cmd_infer(&cfg),
        Command::Fit => pipeline::cmd_fit(&cfg),
    }
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(&cli, overrides) {
        Ok(summary) => {
            // a closed pipe (`| head`) is not a failure of the command
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
