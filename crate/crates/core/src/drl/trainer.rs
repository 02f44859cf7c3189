//! Off-policy training loop, greedy evaluation and resumable checkpoints.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::agent::{uniform_action, Agent, AgentKind};
use super::meta::MetaParams;
use super::replay::{ReplayBuffer, Transition};
use super::td3::Td3Params;
use crate::env::{EnvConfig, FimStarEnv};
use crate::error::{Error, Result};
use crate::numerics::{PrngStream, StreamState};
use crate::scalar::Real;

const CHECKPOINT_MAGIC: &str = "fimstar-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Sub-stream labels under a run's root stream.
mod label {
    pub const CHANNELS: u64 = 1;
    pub const EXPLORE: u64 = 2;
    pub const UPDATES: u64 = 3;
    pub const INIT: u64 = 4;
    pub const EVAL: u64 = 5;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    /// Sum of step rewards.
    pub reward: f64,
    pub mean_sum_rate: f64,
    pub feasible_steps: usize,
    pub updates: u64,
    pub mean_critic_loss: Option<f64>,
    pub mean_actor_loss: Option<f64>,
    pub mean_meta_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeLog>,
    pub env_steps: u64,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub meta_updates: u64,
}

impl TrainingLog {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.reward).collect()
    }

    /// Mean reward of the last `n` episodes (all of them if fewer).
    pub fn tail_mean(&self, n: usize) -> f64 {
        let r = self.rewards();
        let tail = &r[r.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// One seeded training run: environment, agent, buffer and streams.
pub struct Trainer<T: Real> {
    env: FimStarEnv<T>,
    agent: Agent<T>,
    buffer: ReplayBuffer<T>,
    seed: u64,
    channels: PrngStream,
    explore: PrngStream,
    updates: PrngStream,
    log: TrainingLog,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    magic: String,
    version: u32,
    env: EnvConfig,
    agent: Agent<T>,
    buffer: ReplayBuffer<T>,
    seed: u64,
    explore: StreamState,
    updates: StreamState,
    log: TrainingLog,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl<T: Real> Trainer<T> {
    pub fn new(env_cfg: EnvConfig, kind: AgentKind, td3: Td3Params, meta: MetaParams, seed: u64) -> Result<Self> {
        let env = FimStarEnv::new(env_cfg)?;
        let root = PrngStream::new(seed, 0);
        let mut init = root.substream(label::INIT);
        let agent = Agent::new(kind, env.state_dim(), env.action_dim(), td3.clone(), meta, &mut init)?;
        Ok(Trainer {
            buffer: ReplayBuffer::new(td3.capacity, env.state_dim(), env.action_dim()),
            channels: root.substream(label::CHANNELS),
            explore: root.substream(label::EXPLORE),
            updates: root.substream(label::UPDATES),
            env,
            agent,
            seed,
            log: TrainingLog::default(),
        })
    }

    pub fn agent(&self) -> &Agent<T> {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer<T> {
        &self.buffer
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn env_config(&self) -> &EnvConfig {
        self.env.config()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn run_episode(&mut self) -> Result<&EpisodeLog> {
        let episode = self.log.episodes.len() as u64;
        let mut state = self.env.reset(&self.channels, episode)?;
        let (mut reward, mut rate_sum, mut feasible, mut steps) = (0.0, 0.0, 0, 0usize);
        let (mut critic, mut actor, mut meta) = (Vec::new(), Vec::new(), Vec::new());
        let mut updates = 0;
        loop {
            let warm = (self.log.env_steps as usize) < self.agent.td3_params().warmup;
            let action = if warm {
                uniform_action(self.env.action_dim(), &mut self.explore)
            } else {
                self.agent.explore(&state, &mut self.explore)?
            };
            let out = self.env.step(&action)?;
            self.log.env_steps += 1;
            steps += 1;
            reward += out.reward.as_f64();
            rate_sum += out.report.clamped_sum_rate().as_f64();
            feasible += out.report.feasible as usize;
            self.buffer.push(Transition {
                state: std::mem::take(&mut state),
                action,
                reward: out.reward,
                next_state: out.state.clone(),
                done: out.done && !self.agent.td3_params().time_limit_bootstrap,
            })?;
            state = out.state;
            if !warm {
                if let Some(u) = self.agent.update(&self.buffer, &mut self.updates)? {
                    updates += 1;
                    critic.push(0.5 * (u.critic_loss[0] + u.critic_loss[1]));
                    actor.extend(u.actor_loss);
                    meta.extend(u.meta_loss);
                }
            }
            if out.done {
                break;
            }
        }
        self.log.critic_updates = self.agent.critic_updates();
        self.log.actor_updates = self.agent.actor_updates();
        self.log.meta_updates = self.agent.meta_updates();
        self.log.episodes.push(EpisodeLog {
            episode,
            reward,
            mean_sum_rate: rate_sum / steps as f64,
            feasible_steps: feasible,
            updates,
            mean_critic_loss: mean(&critic),
            mean_actor_loss: mean(&actor),
            mean_meta_loss: mean(&meta),
        });
        Ok(self.log.episodes.last().unwrap())
    }

    /// Trains until `episodes` episodes have been logged in total.
    pub fn run(&mut self, episodes: usize) -> Result<&TrainingLog> {
        while self.log.episodes.len() < episodes {
            self.run_episode()?;
        }
        Ok(&self.log)
    }

    /// Greedy evaluation: for each of `draws` fresh channel realizations,
    /// the clamped sum rate of the noise-free policy's first action.
    pub fn evaluate(&self, draws: usize) -> Result<Vec<f64>> {
        evaluate_policy(&self.agent, self.env.config(), self.seed, draws)
    }
}

impl<T: Real + Serialize + DeserializeOwned> Trainer<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let ck = Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            env: self.env.config().clone(),
            agent: self.agent.clone(),
            buffer: self.buffer.clone(),
            seed: self.seed,
            explore: self.explore.state(),
            updates: self.updates.state(),
            log: self.log.clone(),
        };
        bincode::serialize(&ck).map_err(|e| Error::Checkpoint { path: "<memory>".into(), reason: e.to_string() })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint { path: "<memory>".into(), reason };
        let ck: Checkpoint<T> = bincode::deserialize(bytes).map_err(|e| bad(e.to_string()))?;
        if ck.magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", ck.version)));
        }
        let root = PrngStream::new(ck.seed, 0);
        Ok(Trainer {
            env: FimStarEnv::new(ck.env)?,
            agent: ck.agent,
            buffer: ck.buffer,
            seed: ck.seed,
            channels: root.substream(label::CHANNELS),
            explore: PrngStream::from_state(ck.explore),
            updates: PrngStream::from_state(ck.updates),
            log: ck.log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => Error::Checkpoint { path: path.to_path_buf(), reason },
            other => other,
        })
    }
}

/// Greedy evaluation of `agent` on `draws` channel realizations drawn from
/// the evaluation sub-stream of `seed`, disjoint from the training draws.
pub fn evaluate_policy<T: Real>(agent: &Agent<T>, env_cfg: &EnvConfig, seed: u64, draws: usize) -> Result<Vec<f64>> {
    let cfg = EnvConfig { redraw_per_episode: true, ..env_cfg.clone() };
    let mut env = FimStarEnv::<T>::new(cfg)?;
    let root = PrngStream::new(seed, 0).substream(label::EVAL);
    let mut actions = root.substream(u64::MAX);
    (0..draws as u64)
        .map(|d| {
            let state = env.reset(&root, d)?;
            let a = agent.policy(&state, &mut actions)?;
            Ok(env.step(&a)?.report.clamped_sum_rate().as_f64())
        })
        .collect()
}
