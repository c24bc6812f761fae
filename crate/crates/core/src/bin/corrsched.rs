use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use corrsched_core::experiment::{self, runner, ExperimentConfig};
use corrsched_core::Error;

#[derive(Parser)]
#[command(
    name = "corrsched",
    version,
    about = "Scheduling correlated sources by age of information"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the configured policies over the sweep and write a CSV.
    Run(Common),
    /// Check the lower-bound, cyclic-oracle and approximation-gap audits.
    Audit(Common),
    /// Export Online-MGF β and confidence-radius traces.
    BetaTrace(Common),
    /// Write the penalty tables of the configured model.
    ExportPenalties(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(n) = self.seeds {
            cfg.sim.seeds = n;
            cfg.beta_trace.seeds = n;
            cfg.validate()?;
        }
        if let Some(j) = self.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build_global()
                .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
        }
        Ok(cfg)
    }

    fn out_path(&self, cfg: &ExperimentConfig, default: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from(default))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Run(c) => {
            let cfg = c.load()?;
            let rows = experiment::run(&cfg)?;
            let path = c.out_path(&cfg, "results.csv");
            experiment::write_rows(create(&path)?, &rows)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        Command::Audit(c) => {
            let cfg = c.load()?;
            let report = experiment::audit(&cfg)?;
            let text = report.render();
            let path = c.out_path(&cfg, "audit.txt");
            std::fs::write(&path, &text)?;
            print!("{text}");
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::BetaTrace(c) => {
            let cfg = c.load()?;
            let runs = experiment::beta_trace(&cfg)?;
            let path = c.out_path(&cfg, "beta_trace.csv");
            experiment::write_beta_rows(create(&path)?, &runs)?;
            let bt = &cfg.beta_trace;
            for &z in &bt.zetas {
                if let Some(med) = runner::median_first_below(&runs, z, bt.threshold, bt.episodes) {
                    eprintln!(
                        "zeta={z}: median first episode with beta < {} is {med}",
                        bt.threshold
                    );
                }
            }
            eprintln!("wrote {}", path.display());
        }
        Command::ExportPenalties(c) => {
            let cfg = c.load()?;
            let path = c.out_path(&cfg, "penalties.csv");
            let tables = experiment::export_penalties(&cfg, create(&path)?)?;
            eprintln!("wrote {} tables to {}", tables.len(), path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
