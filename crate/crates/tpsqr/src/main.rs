use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tpsqr::cli::{
    cmd_aggregate, cmd_evaluate, cmd_fit, cmd_path, cmd_select, cmd_simulate, EvaluateReport,
    RunConfig,
};

#[derive(Parser)]
#[command(name = "tpsqr", version, about = "Temporal Poisson square root graphical models")]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; flags override its keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed override
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-count cap (default 1, deterministic)
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory override
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate raw events into timespans
    Aggregate,
    /// Fit at a single regularization parameter
    Fit,
    /// Fit a warm-started regularization path
    Path,
    /// Fit a path and select by AIC
    Select,
    /// Draw Gibbs samples from a generated ground-truth model
    Simulate,
    /// Score a template against labels, or run the recovery experiment
    Evaluate,
}

fn resolve_config(args: &Args) -> tpsqr::Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(workers) = args.workers {
        if workers < 1 {
            return Err(tpsqr::TpsqrError::Validation("workers must be >= 1".into()));
        }
        config.workers = Some(workers);
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    Ok(config)
}

fn run(args: &Args) -> tpsqr::Result<()> {
    let config = resolve_config(args)?;
    match args.command {
        Command::Aggregate => {
            let summary = cmd_aggregate(&config)?;
            eprintln!(
                "aggregated {} subjects ({} excluded), {} spans, p = {}",
                summary.n_subjects, summary.n_subjects_excluded, summary.total_spans, summary.p
            );
        }
        Command::Fit => {
            let report = cmd_fit(&config)?;
            eprintln!(
                "fit: lambda = {:.6e}, active = {}, aic = {:.4}",
                report.lambda, report.active_set_size, report.aic
            );
        }
        Command::Path => {
            let report = cmd_path(&config)?;
            eprintln!("path: {} points", report.lambdas.len());
        }
        Command::Select => {
            let report = cmd_select(&config)?;
            eprintln!(
                "selected: lambda = {:.6e}, active = {}, aic = {:.4}",
                report.lambda, report.active_set_size, report.aic
            );
        }
        Command::Simulate => {
            let summary = cmd_simulate(&config)?;
            eprintln!(
                "simulated {} samples at p = {}, {} true edges",
                summary.n_samples,
                summary.p,
                summary.edges.len()
            );
        }
        Command::Evaluate => match cmd_evaluate(&config)? {
            EvaluateReport::Auc(report) => {
                eprintln!("auc = {:.4} over {} pairs", report.auc, report.n_pairs);
            }
            EvaluateReport::Sparsistency(report) => {
                for summary in &report.summaries {
                    eprintln!(
                        "n = {}: median f1 = {:.3}, exact match rate = {:.2}",
                        summary.n, summary.f1_median, summary.exact_match_rate
                    );
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
