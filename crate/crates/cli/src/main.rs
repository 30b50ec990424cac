use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emmf_cli::{run_bound_curve, run_experiment, run_influence, CliError, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "emmf", version, about = "Entropy-minimizing matrix factorization experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Worker threads for repetitions (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Base seed; overrides `solver.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One repetition without a sweep.
    Fit,
    /// All repetitions over the configured sweep.
    Sweep,
    /// Influence ratios over a sigma sweep.
    Influence,
    /// Upper bound of the single-outlier EMMF influence for n = 3..=n_max.
    BoundCurve {
        #[arg(long, default_value_t = 100)]
        n_max: usize,
        #[arg(long, default_value_t = 0.01)]
        p_step: f64,
    },
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Input("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
        cfg.seeds = None;
    }
    if let Some(out) = &cli.output {
        cfg.output_dir = Some(out.clone());
    }
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("output"));
    Ok((cfg, out))
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit => {
            let (mut cfg, out) = load(cli)?;
            if cfg.sweep.is_some() {
                return Err(CliError::Input("fit runs without a sweep; use the sweep command".into()));
            }
            cfg.repetitions = 1;
            cfg.seeds = None;
            let rep = run_experiment(&cfg, &out, cli.threads)?;
            let r = &rep.runs[0];
            println!("acc {} nmi {} iterations {} objective {}", r.acc, r.nmi, r.iterations, r.objective);
        }
        Command::Sweep => {
            let (cfg, out) = load(cli)?;
            if cfg.sweep.is_none() {
                return Err(CliError::Input("sweep needs a `sweep` section in the config".into()));
            }
            let rep = run_experiment(&cfg, &out, cli.threads)?;
            for s in &rep.summaries {
                println!(
                    "value {} acc {:.4} ± {:.4} nmi {:.4} ± {:.4}",
                    s.value.unwrap_or(f64::NAN),
                    s.metrics.acc_mean,
                    s.metrics.acc_std,
                    s.metrics.nmi_mean,
                    s.metrics.nmi_std
                );
            }
        }
        Command::Influence => {
            let (cfg, out) = load(cli)?;
            for (sigma, r) in run_influence(&cfg, &out)? {
                println!("sigma {sigma} nmf {} l21 {} emmf {}", r.phi_nmf, r.phi_l21, r.phi_emmf);
            }
        }
        Command::BoundCurve { n_max, p_step } => {
            let out = cli.output.clone().unwrap_or_else(|| PathBuf::from("output"));
            let rows = run_bound_curve(*n_max, *p_step, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.join("bound.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
