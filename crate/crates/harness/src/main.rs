use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ubgrad_cli::experiments::{run_estimate, run_oracle, run_sgd_experiment, run_single_estimator_experiment};
use ubgrad_cli::output::write_csv;
use ubgrad_cli::{with_threads, ExperimentConfig, ExperimentKind, HarnessError, Result};

#[derive(Parser)]
#[command(name = "ubgrad", version, about = "Unbiased log-likelihood gradient estimation for PDE inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (all cores when absent).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// One gradient estimate with its (L, P) draws and cost.
    Estimate,
    /// Single-estimator MSE-vs-cost experiment (CSV).
    Mse,
    /// SGD MSE-vs-cost experiment (CSV).
    Sgd,
    /// Closed-form and quadrature reference values.
    Oracle,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| HarnessError::Io { path: p.display().to_string(), source: e })?,
        None => String::new(),
    };
    let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    cfg.kind = match cli.command {
        Command::Estimate => ExperimentKind::Estimate,
        Command::Mse => ExperimentKind::Mse,
        Command::Sgd => ExperimentKind::Sgd,
        Command::Oracle => ExperimentKind::Oracle,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &cfg.output {
        Some(path) => {
            let io = |e| HarnessError::Io { path: path.clone(), source: e };
            let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
            body(&mut file)?;
            file.flush().map_err(io)
        }
        None => body(&mut std::io::stdout().lock()),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let hash = cfg.hash();
    let stdout_err = |e| HarnessError::Io { path: "output".into(), source: e };
    with_threads(cli.threads, || match cfg.kind {
        ExperimentKind::Estimate => {
            let report = run_estimate(&cfg)?;
            emit(&cfg, |w| write!(w, "{report}").map_err(stdout_err))
        }
        ExperimentKind::Oracle => {
            let text = run_oracle(&cfg)?;
            emit(&cfg, |w| w.write_all(text.as_bytes()).map_err(stdout_err))
        }
        ExperimentKind::Mse => {
            let rows = run_single_estimator_experiment(&cfg)?;
            emit(&cfg, |w| write_csv(w, &hash, &rows))
        }
        ExperimentKind::Sgd => {
            let rows = run_sgd_experiment(&cfg)?;
            emit(&cfg, |w| write_csv(w, &hash, &rows))
        }
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
