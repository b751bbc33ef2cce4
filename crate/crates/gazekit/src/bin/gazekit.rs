//! Thin CLI over the library: synthesize, annotate, split, train, evaluate
//! and run inference.
//!
//! Exit codes: 0 completed, 1 usage/config error, 2 data error,
//! 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gazekit::cli;
use gazekit::config::{load_config, RunConfig};

#[derive(Parser)]
#[command(name = "gazekit", version, about = "Table-top gaze estimation pipeline")]
struct Args {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Reject unknown config keys and dataset fields.
    #[arg(long, global = true)]
    strict: bool,
    /// Override the seed shared by splitting, augmentation, training and
    /// synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled dataset.
    Synth {
        /// Output JSONL path; defaults to the configured dataset path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute ground-truth gaze annotations for frames with targets.
    Annotate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw the subject-wise train/test split plan.
    Split {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one classifier/regressor pair per split.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Evaluate trained models on their test splits.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Stream frames through the pipeline, JSONL in, JSONL out.
    Infer {
        #[arg(long)]
        svc: PathBuf,
        #[arg(long)]
        regressor: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(args: &Args) -> gazekit::Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => load_config(path, args.strict)?,
        None => RunConfig::default(),
    };
    if args.strict {
        config.strict_ingestion = true;
    }
    if let Some(seed) = args.seed {
        config.scene.seed = seed;
        config.split.seed = seed;
        config.train.seed = seed;
        config.augment.seed = seed;
    }
    Ok(config)
}

fn run(args: Args) -> gazekit::Result<()> {
    let config = load(&args)?;
    match args.command {
        Command::Synth { out } => {
            let out = out.unwrap_or_else(|| config.paths.dataset.clone());
            let summary = cli::cmd_synth(&config, &out)?;
            println!("wrote {} frames to {}", summary.total, summary.path.display());
            for (class, count) in summary.per_class {
                println!("  {:<12} {count}", class.name());
            }
        }
        Command::Annotate { input, out } => {
            let input = input.unwrap_or_else(|| config.paths.dataset.clone());
            let summary = cli::cmd_annotate(&config, &input, &out)?;
            println!(
                "annotated {} frames ({} without target skipped)",
                summary.annotated, summary.skipped_no_target
            );
        }
        Command::Split { input, out } => {
            let input = input.unwrap_or_else(|| config.paths.dataset.clone());
            let plan = cli::cmd_split(&config, &input, &out)?;
            println!(
                "wrote {} splits ({} train / {} test subjects) to {}",
                plan.splits.len(),
                plan.splits[0].train_subjects.len(),
                plan.splits[0].test_subjects.len(),
                out.display()
            );
        }
        Command::Train { dataset, model_dir } => {
            let dataset = dataset.unwrap_or_else(|| config.paths.dataset.clone());
            let model_dir = model_dir.unwrap_or_else(|| config.paths.model_dir.clone());
            let summary = cli::cmd_train(&config, &dataset, &model_dir)?;
            for info in &summary.splits {
                println!(
                    "split {}: C={} gamma={:.6} ({} classifier / {} regressor samples)",
                    info.split, info.c, info.gamma, info.classifier_samples, info.regressor_samples
                );
            }
            println!("models written to {}", model_dir.display());
        }
        Command::Eval {
            dataset,
            model_dir,
            report_dir,
        } => {
            let dataset = dataset.unwrap_or_else(|| config.paths.dataset.clone());
            let model_dir = model_dir.unwrap_or_else(|| config.paths.model_dir.clone());
            let report_dir = report_dir.unwrap_or_else(|| config.paths.report_dir.clone());
            let report = cli::cmd_eval(&config, &dataset, &model_dir, &report_dir)?;
            print!("{}", report.render_table());
            println!("reports written to {}", report_dir.display());
        }
        Command::Infer {
            svc,
            regressor,
            input,
            out,
        } => {
            let summary =
                cli::cmd_infer(&svc, &regressor, &input, &out, config.depth.0, args.strict)?;
            println!(
                "processed {} frames ({} failures) into {}",
                summary.frames,
                summary.failures,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
