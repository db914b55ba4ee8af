use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsad_cli::commands::{self, Context};
use nsad_cli::infer::{run_infer, InferOptions};
use nsad_cli::{CliError, PipelineConfig, Result};

/// Sensor anomaly detection: diffusion teacher, knowledge-base
/// constraints and a random-feature student for fast inference.
#[derive(Debug, Parser)]
#[command(name = "nsad", version)]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write x/y series CSVs under <out>/plot.
    #[arg(long, global = true)]
    plot_data: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic sensor stream and its anomaly tags.
    Generate,
    /// Train the diffusion denoiser.
    Train,
    /// Score training windows, pseudo-label them and explain violations.
    Score,
    /// Distill the teacher into a random-feature classifier.
    Distill,
    /// Score a CSV stream with a classifier, one line per window.
    Infer {
        /// Classifier file (default: <out>/student.nsrf).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Input CSV (default: standard input).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Rows between decisions (default: data.stride).
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Compare per-window latency of the classifier and the teacher.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Report knowledge-base violations of the configured stream.
    Explain {
        /// Explain only the window starting at this sample.
        #[arg(long)]
        origin: Option<usize>,
    },
}

fn context(cli: &Cli) -> Result<Context> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = &cli.out {
        config.paths.out = o.clone();
    }
    config.validate()?;
    Ok(Context {
        config,
        plot_data: cli.plot_data,
    })
}

fn run(cli: Cli) -> Result<()> {
    let ctx = context(&cli)?;
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Score => commands::score(&ctx),
        Command::Distill => commands::distill(&ctx),
        Command::Infer {
            model,
            input,
            stride,
            threshold,
        } => {
            let path = model.unwrap_or_else(|| ctx.out().join(commands::STUDENT_FILE));
            let clf = commands::load_classifier(&path)?;
            let reader: Box<dyn Read + Send> = match input {
                Some(p) => Box::new(BufReader::new(
                    File::open(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
                )),
                None => Box::new(io::stdin()),
            };
            let opts = InferOptions {
                stride: stride.unwrap_or(ctx.config.data.stride),
                threshold,
                ..Default::default()
            };
            let stdout = io::stdout().lock();
            let s = run_infer(&clf, reader, stdout, &opts, &mut |w| eprintln!("warning: {w}"))?;
            eprintln!("{} rows, {} windows, {} malformed rows", s.rows, s.windows, s.malformed);
            Ok(())
        }
        Command::Bench { model, checkpoint } => commands::bench(&ctx, model.as_deref(), checkpoint.as_deref()),
        Command::Explain { origin } => commands::explain_cmd(&ctx, origin),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
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
