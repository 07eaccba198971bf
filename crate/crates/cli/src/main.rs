use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use iotguard_cli::config::PipelineChoice;
use iotguard_cli::{run, write_synthetic, Command, Invocation};
use iotguard_core::pipeline::AdvisorMode;

#[derive(Parser)]
#[command(name = "iotguard", version, about = "Autoencoder intrusion detection with PCA or advisor preprocessing")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed (subsample, split and training).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output_dir` from the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pipeline to run, overriding the config.
    #[arg(long, value_enum)]
    pipeline: Option<PipelineArg>,
    /// Use the advisor pipeline in this mode.
    #[arg(long, value_enum)]
    advisor: Option<AdvisorArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Pca,
    Advisor,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdvisorArg {
    Heuristic,
    Llm,
}

#[derive(Subcommand)]
enum Cmd {
    /// Feature statistics of the training split.
    Stats(Common),
    /// Preprocessing plan for the selected pipeline.
    Plan(Common),
    /// Fit preprocessing and the autoencoder; save model and loss trace.
    Train(Common),
    /// Score the test split; write report and error histogram.
    Evaluate(Common),
    /// Run both pipelines on the same splits and compare macro metrics.
    Compare(Common),
    /// Explain the rows flagged as attacks.
    Explain(Common),
    /// Write synthetic KDD-format records (for trying the tool without the real file).
    Synth {
        #[arg(long)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn invocation(command: Command, c: Common) -> Invocation {
    Invocation {
        command,
        config: c.config,
        seed: c.seed,
        out: c.out,
        pipeline: c.pipeline.map(|p| match p {
            PipelineArg::Pca => PipelineChoice::Pca,
            PipelineArg::Advisor => PipelineChoice::Advisor,
        }),
        advisor: c.advisor.map(|a| match a {
            AdvisorArg::Heuristic => AdvisorMode::Heuristic,
            AdvisorArg::Llm => AdvisorMode::Llm,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let inv = match cli.command {
        Cmd::Stats(c) => invocation(Command::Stats, c),
        Cmd::Plan(c) => invocation(Command::Plan, c),
        Cmd::Train(c) => invocation(Command::Train, c),
        Cmd::Evaluate(c) => invocation(Command::Evaluate, c),
        Cmd::Compare(c) => invocation(Command::Compare, c),
        Cmd::Explain(c) => invocation(Command::Explain, c),
        Cmd::Synth { rows, seed, out } => {
            return match write_synthetic(&out, rows, seed) {
                Ok(()) => {
                    println!("wrote {rows} rows to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("iotguard: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
    };
    match run(&inv) {
        Ok(outcome) => {
            println!("{}: {}", inv.command.name(), outcome.summary);
            println!("artifacts in {}", outcome.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("iotguard: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
