use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ratgen_cli::config::RunConfig;
use ratgen_cli::error::CliResult;
use ratgen_cli::manifest::RunDir;
use ratgen_cli::pipeline;

#[derive(Parser)]
#[command(
    name = "ratgen",
    version,
    about = "Rationale-based multi-property molecule generation"
)]
struct Cli {
    /// Run configuration (TOML); defaults to the desk preset in ./run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Accept upstream artifacts produced under a different configuration.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled corpus with planted motifs.
    GenSynthetic,
    /// Fit one random forest per property and report held-out AUROC.
    TrainPredictor,
    /// Extract single-property rationale vocabularies by tree search.
    Extract,
    /// Merge single-property vocabularies into multi-property rationales.
    Merge,
    /// Pre-train the completion model on subgraph/molecule pairs.
    Pretrain,
    /// Fine-tune on rationale completions that satisfy every property.
    Finetune,
    /// Sample molecules from the fine-tuned model.
    Sample {
        /// Number of molecules (overrides the config).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score samples for success, diversity and novelty.
    Evaluate,
    /// Compare extracted rationales with the planted motif.
    Faithfulness,
    /// Run every stage from data to evaluation.
    All,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Command::Sample { n: Some(n) } = cli.command {
        cfg.sample.n = n;
    }
    let run = RunDir::new(&cfg.run_dir, cli.force)?;
    match cli.command {
        Command::GenSynthetic => {
            for (name, rate) in pipeline::gen_synthetic(&cfg, &run)? {
                println!("{name}: {:.1}% positive", 100.0 * rate);
            }
        }
        Command::TrainPredictor => {
            for (name, auc) in pipeline::train_predictor(&cfg, &run)? {
                match auc {
                    Some(a) => println!("{name}: held-out AUROC {a:.4}"),
                    None => println!("{name}: held-out AUROC undefined (one class)"),
                }
            }
        }
        Command::Extract => {
            for (name, n) in pipeline::extract(&cfg, &run)? {
                println!("{name}: {n} rationales");
            }
        }
        Command::Merge => println!("{} multi-property rationales", pipeline::merge(&cfg, &run)?),
        Command::Pretrain => {
            if let Some(s) = pipeline::pretrain(&cfg, &run)?.last() {
                println!("epoch {}: loss {:.4}", s.epoch, s.loss);
            }
        }
        Command::Finetune => {
            if let Some(s) = pipeline::finetune(&cfg, &run)?.last() {
                println!("iteration {}: success {:.3}", s.iteration, s.success);
            }
        }
        Command::Sample { .. } => println!("{} molecules", pipeline::sample(&cfg, &run)?),
        Command::Evaluate => print!("{}", pipeline::evaluate(&cfg, &run)?.table()),
        Command::Faithfulness => {
            let r = pipeline::faithfulness(&cfg, &run)?;
            println!(
                "{} ({}): exact {:.3}, coverage {:.3} over {} molecules",
                r.property, r.motif, r.exact_match, r.coverage, r.molecules
            );
        }
        Command::All => print!("{}", pipeline::run_all(&cfg, &run)?.table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
