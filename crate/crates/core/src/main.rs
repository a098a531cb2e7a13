use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lrednn::cli::{self, CliError, ExperimentConfig, Rank};
use lrednn::exec::{configure_threads, Execution};

#[derive(Parser)]
#[command(name = "lrednn", version, about = "Low-rank evolutionary neural network PDE solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the initial condition and march one configuration in time.
    Run {
        /// Config file, or the name of a preset.
        #[arg(long)]
        config: String,
        /// Subspace rank, or `full`.
        #[arg(long)]
        rank: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scales grid points per dimension and step count.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Run the full model plus each listed rank and compare final fields.
    Sweep {
        #[arg(long)]
        config: String,
        /// Comma separated ranks, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',', required = true)]
        ranks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scale: Option<f64>,
    },
    /// List the built-in configurations.
    Presets,
}

fn execution() -> Result<Execution, CliError> {
    match std::env::var("LREDNN_THREADS") {
        Err(_) => Ok(Execution::default()),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("LREDNN_THREADS must be a positive integer, got '{v}'")))?;
            if n == 0 {
                return Err(CliError::Usage("LREDNN_THREADS must be at least 1".into()));
            }
            if n == 1 {
                return Ok(Execution::Sequential);
            }
            configure_threads(n);
            Ok(Execution::default())
        }
    }
}

fn load(config: &str, scale: Option<f64>) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig::load(config)?;
    Ok(match scale {
        Some(s) => cfg.scaled(s)?,
        None => cfg,
    })
}

fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_{}", cfg.experiment.name(), cfg.rank.label())))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Presets => {
            print!("{}", cli::preset_table());
            Ok(())
        }
        Command::Run {
            config,
            rank,
            out,
            seed,
            scale,
        } => {
            let mut cfg = load(&config, scale)?;
            if let Some(r) = rank {
                cfg.rank = Rank::parse(&r).ok_or_else(|| CliError::Usage(format!("invalid rank '{r}'")))?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let exec = execution()?;
            let dir = out.unwrap_or_else(|| default_out(&cfg));
            let report = cli::run_experiment(&cfg, &dir, exec)?;
            if let Some(fit) = &report.fit {
                eprintln!("initial fit rms {:.3e}", fit.rms);
            }
            match report.error {
                None => {
                    println!(
                        "{} rank {}: {} steps, final energy {:.6e}, {:.2} s, output in {}",
                        cfg.experiment.name(),
                        cfg.rank.label(),
                        report.output.steps_completed,
                        report.output.final_energy,
                        report.output.total_seconds(),
                        dir.display()
                    );
                    Ok(())
                }
                Some(e) => Err(CliError::Numerical(format!(
                    "{e} (partial output in {})",
                    dir.display()
                ))),
            }
        }
        Command::Sweep {
            config,
            ranks,
            out,
            scale,
        } => {
            let cfg = load(&config, scale)?;
            cfg.validate()?;
            let exec = execution()?;
            let entries = cli::run_rank_sweep(&cfg, &ranks, &out, exec)?;
            for e in &entries {
                println!(
                    "rank {:>4}: {} l2 {:.3e} linf {:.3e} {:.2} s",
                    e.rank.label(),
                    e.status,
                    e.l2_error,
                    e.linf_error,
                    e.total_seconds
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
