use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hte_cli::error::Stage;
use hte_cli::{
    run_descriptives, run_estimate, run_report, run_simulate, run_support, CliResult, Overrides,
    RunConfig, SimulateConfig,
};

#[derive(Parser)]
#[command(name = "hte", version, about = "Double machine learning for heterogeneous treatment effects")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a contest or linear dataset with known effects.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run the estimation pipeline.
    Estimate(RunArgs),
    /// Cross-fit nuisances and write scores and the common-support report.
    Support(RunArgs),
    /// Write the balance table.
    Descriptives(RunArgs),
    /// Bundle an estimate run directory into report/.
    Report { run_dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Confidence level, e.g. 0.95 (default 0.90).
    #[arg(long)]
    level: Option<f64>,
    /// Cached scores file; skips the nuisance stage.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Record stage timings in the manifest.
    #[arg(long)]
    timings: bool,
}

impl RunArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(&self.config).stage("config")?;
        Overrides {
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            level: self.level,
            scores: self.scores.clone(),
            record_timings: self.timings,
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            output_dir,
        } => {
            let mut cfg = SimulateConfig::load(&config).stage("config")?;
            Overrides {
                seed,
                output_dir,
                ..Default::default()
            }
            .apply_simulate(&mut cfg)?;
            let m = run_simulate(&cfg)?;
            eprintln!("simulated {} files into {}", m.outputs.len(), cfg.output_path().display());
        }
        Command::Estimate(a) => {
            let cfg = a.load()?;
            let m = run_estimate(&cfg)?;
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Support(a) => {
            let m = run_support(&a.load()?)?;
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Descriptives(a) => {
            run_descriptives(&a.load()?)?;
        }
        Command::Report { run_dir } => run_report(&run_dir)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
