//! Command-line front end for the experiment harnesses.
//!
//! Exit codes: 0 success, 1 experiment failure, 2 bad configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hesscale::bench::{
    run_quality, run_timing, run_training, write_metadata, write_quality_csv, write_timing_csv,
    write_training_csv, QualityConfig, TimingConfig, TrainConfig,
};
use hesscale::curvature::{hesscale_full, Method};
use hesscale::error::{Error, Result};
use hesscale::model::{Activation, Network};
use hesscale::oracle;
use hesscale::tensor::Tensor;

#[derive(Parser)]
#[command(name = "hesscale", version, about = "diagonal-curvature experiments")]
struct Cli {
    /// Directory all output files are written under.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// JSON config file for the chosen subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run fast internal consistency checks against the slow oracles.
    Verify,
    /// Approximation-quality comparison against the exact diagonal.
    ApproxQuality,
    /// Per-update wall-clock timing across network sizes.
    Timing,
    /// Training runs over a hyperparameter grid.
    Train {
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn load_config<C: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {}", p.display(), e)))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HESSCALE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("HESSCALE_THREADS={:?} is not a number", v)))?;
        if n == 0 {
            return Err(Error::Config("HESSCALE_THREADS must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    }
    Ok(())
}

/// Quick end-to-end sanity pass: analytic gradients against finite
/// differences and the layerwise diagonal against the exact one on a
/// single-layer model, where the two must agree.
fn verify() -> Result<()> {
    let net = Network::mlp(&[5, 8, 4], Activation::Tanh, 1)?;
    let x = Tensor::vector(vec![0.4, -0.3, 0.9, 0.1, -0.8]);
    let g = oracle::grad(&net, &x, 2)?;
    let g_fd = oracle::grad_fd_of_loss(&net, &x, 2, 1e-5)?;
    let worst = g
        .iter()
        .zip(&g_fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0f64, f64::max);
    println!("gradient vs finite differences: max rel err {:.3e}", worst);
    if worst > 1e-6 {
        return Err(Error::Numeric("gradient check failed".into()));
    }

    let single = Network::mlp(&[5, 4], Activation::Softmax, 1)?;
    let cache = single.forward(&x)?;
    let approx = hesscale_full(Method::HesScale, &single, &cache, 2)?.flat_diag();
    let exact = oracle::exact_diag(&single, &x, 2)?;
    let worst = approx
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("single-layer diagonal vs oracle: max abs err {:.3e}", worst);
    if worst > 1e-8 {
        return Err(Error::Numeric("single-layer exactness check failed".into()));
    }
    println!("verify: ok");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Verify => verify(),
        Command::ApproxQuality => {
            let mut cfg: QualityConfig = load_config(cli.config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let records = run_quality(&cfg)?;
            write_quality_csv(&cli.out.join("quality.csv"), &records)?;
            write_metadata(&cli.out.join("quality.meta.json"), "approx-quality", &cfg)?;
            println!("wrote {} records to {}", records.len(), cli.out.display());
            Ok(())
        }
        Command::Timing => {
            let cfg: TimingConfig = load_config(cli.config.as_deref())?;
            let records = run_timing(&cfg)?;
            write_timing_csv(&cli.out.join("timing.csv"), &records)?;
            write_metadata(&cli.out.join("timing.meta.json"), "timing", &cfg)?;
            println!("wrote {} records to {}", records.len(), cli.out.display());
            Ok(())
        }
        Command::Train { epochs } => {
            let mut cfg: TrainConfig = load_config(cli.config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let out = run_training(&cfg)?;
            write_training_csv(&cli.out.join("training.csv"), &out.records)?;
            std::fs::write(
                cli.out.join("selection.json"),
                serde_json::to_string_pretty(&out.selection)?,
            )?;
            write_metadata(&cli.out.join("training.meta.json"), "train", &cfg)?;
            println!(
                "wrote {} records to {}; winners in selection.json",
                out.records.len(),
                cli.out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Json(_))) => {
            eprintln!("configuration error: {}", e);
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(1)
        }
    }
}
