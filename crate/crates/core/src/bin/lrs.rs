use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lrs_core::harness::{self, AgentKind, ExperimentConfig, LrsKind, Overrides};
use lrs_core::theory;

#[derive(Parser)]
#[command(name = "lrs", version, about = "Language reward shaping experiments on symbolic platformer rooms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write the run directory.
    Run(RunArgs),
    /// Check the shaping-invariance and gradient results on enumerable MDPs.
    VerifyTheory {
        /// Seed for the random MDPs.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also write the convergence sweep as CSV.
        #[arg(long)]
        sweep_csv: Option<PathBuf>,
    },
    /// Compare two run directories on AUC (candidate tested for being worse than reference).
    Compare { reference: PathBuf, candidate: PathBuf },
    /// Merge the per-seed visit heatmaps of a run directory.
    Heatmap { dir: PathBuf },
    /// Run a config with the full, Type-1 and Type-2 instructions.
    SweepGranularity(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (may also be given with --config).
    config_path: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to $LRS_OUT_DIR/<name>, then the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed list such as `1-10` or `1,2,5`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    room: Option<String>,
    #[arg(long)]
    lrs: Option<String>,
    #[arg(long)]
    agent: Option<String>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = match (&self.config_path, &self.config) {
            (Some(p), None) | (None, Some(p)) => p,
            (Some(_), Some(_)) => bail!("give the config either positionally or with --config, not both"),
            (None, None) => bail!("no config file given"),
        };
        let mut config = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        let overrides = Overrides {
            out: self.out.clone(),
            seeds: self.seeds.as_deref().map(harness::parse_seeds).transpose()?,
            episodes: self.episodes,
            room: self.room.clone(),
            lrs: self.lrs.as_deref().map(str::parse::<LrsKind>).transpose()?,
            agent: self.agent.as_deref().map(str::parse::<AgentKind>).transpose()?,
        };
        config.apply(&overrides)?;
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let config = args.load()?;
            let result = harness::run_experiment(&config)?;
            let s = &result.summary;
            println!("{}: {} seeds, AUC {:.4} ± {:.4}, SR {:.2}, wins {:?}", s.name, s.seeds.len(), s.mean_auc, s.std_auc, s.success_rate, s.wins);
            println!("written to {}", result.dir.display());
            Ok(true)
        }
        Command::VerifyTheory { seed, sweep_csv } => {
            let checks = theory::run_checks(seed)?;
            let mut ok = true;
            for c in &checks {
                println!("[{}] {:<34} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if let Some(path) = sweep_csv {
                std::fs::write(&path, theory::sweep_csv()?).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ok)
        }
        Command::Compare { reference, candidate } => {
            println!("{}", harness::compare(&reference, &candidate)?);
            Ok(true)
        }
        Command::Heatmap { dir } => {
            let (map, distance) = harness::merge_heatmaps(&dir)?;
            println!("{} visits, mean distance from start {:.3}", map.total, distance);
            Ok(true)
        }
        Command::SweepGranularity(args) => {
            let config = args.load()?;
            println!("{:<8} {:>9} {:>9} {:>10} {:>9}", "instr", "AUC mean", "AUC std", "p<full", "std/full");
            for r in harness::sweep_granularity(&config)? {
                println!("{:<8} {:>9.4} {:>9.4} {:>10.4} {:>9.2}", r.condition.as_str(), r.mean_auc, r.std_auc, r.p_vs_full, r.std_ratio);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
