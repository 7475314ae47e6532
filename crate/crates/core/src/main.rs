use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use coordfit::harness::{self, spec_from_overrides, Experiment, ExperimentSpec, Outcome, Overrides};

/// Fit 1D/2D signals with coordinate MLPs and compare positional embeddings.
#[derive(Parser, Debug)]
#[command(name = "coordfit", version)]
struct Cli {
    /// encode1d, encode2d, expressiveness, sigma_dev_fit, recover or sweep_rff
    experiment: Experiment,
    /// key=value spec file; defaults are used when omitted
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Signal file(s), comma-separated
    #[arg(long)]
    signal: Option<String>,
    /// Variant(s), comma-separated
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    fraction: Option<String>,
    /// regular or random
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ov = Overrides {
        signal: cli.signal,
        variant: cli.variant,
        depth: cli.depth,
        fraction: cli.fraction,
        scheme: cli.scheme,
        seed: cli.seed,
        epochs: cli.epochs,
        out: cli.out,
    };
    let spec = match &cli.spec {
        Some(path) => ExperimentSpec::from_file(path, Some(cli.experiment), &ov),
        None => spec_from_overrides(cli.experiment, &ov),
    };
    let spec = match spec {
        Ok(s) => s,
        Err(e) => {
            eprintln!("coordfit: {e}");
            return ExitCode::from(2);
        }
    };
    match harness::run(&spec) {
        Ok((Outcome::Report(report), path)) => {
            let failed = report.errors().count();
            println!("wrote {} rows to {}", report.rows.len(), path.display());
            if failed > 0 {
                eprintln!("coordfit: {failed} run(s) failed, see the error column");
            }
            ExitCode::SUCCESS
        }
        Ok((Outcome::SigmaFit(fit), path)) => {
            println!(
                "fitted {} pairs from {} signals: spearman {:.3} (binned {:.3}), residual {:.3e} vs σ std {:.3e}; wrote {}",
                fit.pairs.len(),
                fit.signals,
                fit.spearman_raw,
                fit.spearman_binned,
                fit.residual_rms,
                fit.sigma_std,
                path.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("coordfit: {e}");
            ExitCode::FAILURE
        }
    }
}
