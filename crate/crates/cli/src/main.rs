//! `fimstar`: train agents, run sweeps, evaluate checkpoints and check
//! configuration files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fimstar::drl::Trainer;
use fimstar::harness::config::{load_config, ExperimentConfig, SweepKind};
use fimstar::harness::experiment::{
    mean, metadata_line, run_convergence, run_sweep, std_error, sweep_file_name, write_csv_file,
};

#[derive(Parser)]
#[command(name = "fimstar", version, about = "FIM + STAR-RIS downlink simulator and DRL trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured agent on every seed; writes convergence.csv and checkpoints.
    Train(Common),
    /// Run the configured parameter sweep; writes sweep_<kind>.csv.
    Sweep(Common),
    /// Evaluate a saved checkpoint on fresh channel draws.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation draws (defaults to run.eval_draws of the config).
        #[arg(long)]
        draws: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Check a configuration file; silent on success.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
        /// Print the canonical form with every key filled in.
        #[arg(long)]
        print: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration; built-in full-size defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (falls back to $FIMSTAR_OUT, then run.output_dir).
    #[arg(long, env = "FIMSTAR_OUT")]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.run.seeds = vec![seed];
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir))
    }
}

fn train(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir(&cfg);
    let rows = run_convergence(&cfg, Some(&out.join("checkpoints")))?;
    let path = out.join("convergence.csv");
    write_csv_file(&path, &metadata_line(&cfg, "convergence"), &rows)?;
    let tail = 100.min(cfg.run.episodes);
    for &agent in &cfg.run.agents {
        for &seed in &cfg.run.seeds {
            let r: Vec<f64> = rows
                .iter()
                .filter(|r| r.agent == agent && r.seed == seed)
                .map(|r| r.episode_reward)
                .collect();
            println!("{agent} seed {seed}: mean reward over last {tail} episodes {:.4}", mean(&r[r.len() - tail..]));
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    if cfg.sweep.kind == SweepKind::None {
        bail!("sweep.kind is `none`; set it to power, sinr_min or ris_elements");
    }
    let rows = run_sweep(&cfg)?;
    let path = common.out_dir(&cfg).join(sweep_file_name(cfg.sweep.kind));
    write_csv_file(&path, &metadata_line(&cfg, "sweep"), &rows)?;
    for &agent in &cfg.run.agents {
        for &v in &cfg.sweep.grid {
            let r: Vec<f64> =
                rows.iter().filter(|r| r.agent == agent && r.sweep_value == v).map(|r| r.mean_sum_rate).collect();
            println!("{agent} {}: sum rate {:.4} ± {:.4}", cfg.grid_label(v), mean(&r), std_error(&r));
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn eval(checkpoint: &Path, draws: Option<usize>, common: &Common) -> Result<()> {
    let trainer = Trainer::<f64>::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let draws = match (draws, &common.config) {
        (Some(d), _) => d,
        (None, Some(_)) => common.load()?.run.eval_draws,
        (None, None) => 100,
    };
    if draws == 0 {
        bail!("--draws must be >= 1");
    }
    let rates = match common.seed {
        Some(seed) => fimstar::drl::evaluate_policy(trainer.agent(), trainer.env_config(), seed, draws)?,
        None => trainer.evaluate(draws)?,
    };
    println!(
        "{} after {} episodes: sum rate {:.4} ± {:.4} over {draws} draws",
        trainer.agent().kind(),
        trainer.log().episodes.len(),
        mean(&rates),
        std_error(&rates)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(c) => train(c),
        Command::Sweep(c) => sweep(c),
        Command::Eval { checkpoint, draws, common } => eval(checkpoint, *draws, common),
        Command::ValidateConfig { common, print } => {
            let cfg = common.load()?;
            if *print {
                print!("{}", cfg.dump());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
