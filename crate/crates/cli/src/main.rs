use std::path::PathBuf;
use std::process::ExitCode;

use avcap_core::app::{self, CaptionOptions, TrainOptions};
use avcap_core::encoder::Modality;
use avcap_core::error::{Error, Result};
use clap::{Parser, Subcommand};

const SEED_ENV: &str = "AVCAP_SEED";

#[derive(Parser)]
#[command(name = "avcap", version, about = "Audio-visual captioning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic tone + colour corpus.
    MakeSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_modality)]
        modality: Option<Modality>,
        #[arg(long)]
        steps: Option<usize>,
        /// Log every N steps to stderr (0 disables).
        #[arg(long, default_value_t = 10)]
        log_every: usize,
    },
    /// Caption every manifest entry with beam search.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output JSON lines file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Score candidate captions against references.
    Eval {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Externally computed SPICE, enables SPIDEr.
        #[arg(long)]
        spice: Option<f64>,
    },
    /// Finite-difference gradient check at tiny dimensions.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_modality(s: &str) -> std::result::Result<Modality, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("expected A, V or A+V, got `{s}`"))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::MakeSynth { out, n, seed } => {
            let manifest = app::cmd_make_synth(&out, n, env_seed()?.unwrap_or(seed))?;
            println!("{}", manifest.display());
        }
        Command::Train {
            config,
            manifest,
            out,
            modality,
            steps,
            log_every,
        } => {
            let opts = TrainOptions {
                config,
                manifest,
                out_dir: out,
                modality,
                steps,
                seed: env_seed()?,
            };
            let outcome = app::cmd_train(&opts, |s| {
                if log_every > 0 && s.step % log_every == 0 {
                    eprintln!("step {:>5}  lr {:.3e}  loss {:.5}", s.step, s.lr, s.loss);
                }
            })?;
            println!(
                "trained {} steps, final loss {}, vocab {}, audio frontend calls {}, video frontend calls {}, output {}",
                outcome.report.final_step,
                outcome.report.final_loss().map_or("n/a".into(), |l| format!("{l:.5}")),
                outcome.vocab_size,
                outcome.audio_frontend_calls,
                outcome.video_frontend_calls,
                outcome.out_dir.display()
            );
        }
        Command::Caption {
            checkpoint,
            manifest,
            out,
            config,
            vocab,
            beam,
            alpha,
            max_len,
        } => {
            let to_stdout = out.is_none();
            let lines = app::cmd_caption(&CaptionOptions {
                checkpoint,
                manifest,
                config,
                vocab,
                out,
                beam,
                alpha,
                max_len,
            })?;
            if to_stdout {
                print!("{}", app::captions_jsonl(&lines)?);
            }
        }
        Command::Eval {
            candidates,
            references,
            spice,
        } => {
            let report = app::cmd_eval(&candidates, &references, spice)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Gradcheck { config } => {
            let report = app::cmd_gradcheck(config.as_deref(), env_seed()?)?;
            for line in report.lines() {
                println!("{line}");
            }
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
