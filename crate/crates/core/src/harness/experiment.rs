//! Convergence runs and parameter sweeps over agents and seeds.
//!
//! Each (agent, seed[, grid point]) job owns its trainer and streams, so the
//! jobs run in parallel and the rows are merged in a fixed key order.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, SweepKind, SweepMode};
use crate::drl::{evaluate_policy, AgentKind, Trainer};
use crate::env::EnvConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub agent: AgentKind,
    pub seed: u64,
    /// 1-based.
    pub episode: usize,
    pub episode_reward: f64,
    pub smoothed_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub agent: AgentKind,
    pub seed: u64,
    pub sweep_value: f64,
    pub mean_sum_rate: f64,
}

/// Trailing mean over at most `window` values ending at each index.
pub fn smooth(raw: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(raw.len());
    let mut sum = 0.0;
    for i in 0..raw.len() {
        sum += raw[i];
        if i >= window {
            sum -= raw[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard error of the mean (0 for fewer than two values).
pub fn std_error(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// A trained run for one agent and seed.
pub fn train(cfg: &ExperimentConfig, scenario: &EnvConfig, kind: AgentKind, seed: u64) -> Result<Trainer<f64>> {
    let mut trainer = Trainer::new(scenario.clone(), kind, cfg.agent.clone(), cfg.meta.clone(), seed)?;
    trainer.run(cfg.run.episodes)?;
    Ok(trainer)
}

/// Checkpoint file for one agent and seed inside `dir`.
pub fn checkpoint_path(dir: &Path, kind: AgentKind, seed: u64) -> PathBuf {
    dir.join(format!("{kind}_seed{seed}.ckpt"))
}

fn jobs(cfg: &ExperimentConfig) -> Vec<(AgentKind, u64)> {
    cfg.run.agents.iter().flat_map(|&k| cfg.run.seeds.iter().map(move |&s| (k, s))).collect()
}

/// Trains every agent on every seed and returns per-episode rewards, sorted
/// by agent, seed and episode. Checkpoints go to `checkpoints` when given.
pub fn run_convergence(cfg: &ExperimentConfig, checkpoints: Option<&Path>) -> Result<Vec<ConvergenceRow>> {
    if let Some(dir) = checkpoints {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    let runs = jobs(cfg)
        .into_par_iter()
        .map(|(kind, seed)| {
            let trainer = train(cfg, &cfg.scenario, kind, seed)?;
            if let Some(dir) = checkpoints {
                trainer.save(&checkpoint_path(dir, kind, seed))?;
            }
            let raw = trainer.log().rewards();
            let smoothed = smooth(&raw, cfg.run.smoothing_window);
            Ok(raw
                .iter()
                .zip(smoothed)
                .enumerate()
                .map(|(i, (&r, s))| ConvergenceRow { agent: kind, seed, episode: i + 1, episode_reward: r, smoothed_reward: s })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<ConvergenceRow> = runs.into_iter().flatten().collect();
    rows.sort_by(|a, b| (a.agent, a.seed, a.episode).cmp(&(b.agent, b.seed, b.episode)));
    Ok(rows)
}

/// Final-policy mean sum rate per agent, seed and grid point, sorted by
/// agent, seed and grid order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let kind = cfg.sweep.kind;
    if kind == SweepKind::None {
        return Err(super::config::ConfigError::Invalid { key: "sweep.kind".into(), reason: "a sweep needs a kind other than none".into() }.into());
    }
    let grid = &cfg.sweep.grid;
    let draws = cfg.run.eval_draws;
    let evaluate = |trainer: &Trainer<f64>, point: &EnvConfig, seed: u64| -> Result<f64> {
        Ok(mean(&evaluate_policy(trainer.agent(), point, seed, draws)?))
    };
    let mut rows: Vec<(usize, SweepRow)> = match cfg.sweep.mode {
        SweepMode::Retrain => {
            let jobs: Vec<_> = jobs(cfg).into_iter().flat_map(|(k, s)| (0..grid.len()).map(move |g| (k, s, g))).collect();
            jobs.into_par_iter()
                .map(|(agent, seed, g)| {
                    let point = kind.apply(&cfg.scenario, grid[g]);
                    let trainer = train(cfg, &point, agent, seed)?;
                    let rate = evaluate(&trainer, &point, seed)?;
                    Ok((g, SweepRow { agent, seed, sweep_value: grid[g], mean_sum_rate: rate }))
                })
                .collect::<Result<_>>()?
        }
        SweepMode::EvalOnly => {
            let per_run = jobs(cfg)
                .into_par_iter()
                .map(|(agent, seed)| {
                    let trainer = train(cfg, &cfg.scenario, agent, seed)?;
                    grid.iter()
                        .enumerate()
                        .map(|(g, &v)| {
                            let rate = evaluate(&trainer, &kind.apply(&cfg.scenario, v), seed)?;
                            Ok((g, SweepRow { agent, seed, sweep_value: v, mean_sum_rate: rate }))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            per_run.into_iter().flatten().collect()
        }
    };
    rows.sort_by(|(ga, a), (gb, b)| (a.agent, a.seed, *ga).cmp(&(b.agent, b.seed, *gb)));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// `# key=value ...` line recording what produced a CSV.
pub fn metadata_line(cfg: &ExperimentConfig, experiment: &str) -> String {
    let seeds: Vec<String> = cfg.run.seeds.iter().map(u64::to_string).collect();
    let agents: Vec<&str> = cfg.run.agents.iter().map(|a| a.as_str()).collect();
    format!(
        "# experiment={experiment} config_sha256={} seeds={} agents={} episodes={}",
        cfg.hash(),
        seeds.join(";"),
        agents.join(";"),
        cfg.run.episodes
    )
}

/// Writes the metadata line, a header and `rows` with LF line endings.
pub fn write_csv<R: Serialize, W: Write>(out: W, metadata: &str, rows: &[R]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{metadata}").map_err(csv::Error::from)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_csv_file<R: Serialize>(path: &Path, metadata: &str, rows: &[R]) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let file = std::fs::File::create(path).map_err(io)?;
    write_csv(std::io::BufWriter::new(file), metadata, rows)
}

/// CSV file name for a sweep kind.
pub fn sweep_file_name(kind: SweepKind) -> &'static str {
    match kind {
        SweepKind::None => "sweep.csv",
        SweepKind::Power => "sweep_power.csv",
        SweepKind::SinrMin => "sweep_sinr_min.csv",
        SweepKind::RisElements => "sweep_ris_elements.csv",
    }
}
