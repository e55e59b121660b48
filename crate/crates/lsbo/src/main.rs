use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lsbo::experiment::{diagnose, gen_data, run_sweep};
use lsbo::ExperimentConfig;

#[derive(Parser)]
#[command(name = "lsbo", version, about = "Latent-space Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Concurrent runs during a sweep.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// sweep: run only this seed. diagnose: model seed. gen-data: data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every setting × seed and write curves, summaries and run logs.
    Sweep,
    /// Round-trip distance map of a pretrained VAE over a latent plane.
    Diagnose,
    /// Write the configured unlabelled pool as a dataset file.
    GenData,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> lsbo::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Sweep => {
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let out = run_sweep(&cfg, cli.workers, Some(&cli.out))?;
            for cell in &out.cells {
                let fin = cell.curve.as_ref().and_then(|c| c.final_mean());
                println!(
                    "{:<40} {}/{} runs  final normalized mean {}",
                    cell.key.name(),
                    cell.runs.len(),
                    cell.runs.len() + cell.failures.len(),
                    fin.map_or("-".into(), |v| format!("{v:.4}"))
                );
            }
            println!("wrote {} (config hash {})", cli.out.display(), out.hash);
        }
        Command::Diagnose => {
            let seed = cli.seed.unwrap_or(cfg.seeds[0]);
            let out = diagnose(&cfg, seed, Some(&cli.out))?;
            println!(
                "mean round-trip distance inside contour {:?}, outside {:?}",
                out.inside_mean, out.outside_mean
            );
            println!("wrote {} (config hash {})", cli.out.display(), out.hash);
        }
        Command::GenData => {
            if let Some(s) = cli.seed {
                cfg.data.data_seed = s;
            }
            let p = gen_data(&cfg, &cli.out)?;
            println!("wrote {} rows of {} values to {}", p.pool.rows(), p.pool.cols(), cli.out.display());
        }
    }
    Ok(())
}
