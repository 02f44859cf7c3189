use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use ndarray::Array2;

use super::adam::Adam;
use super::meta::{meta_gradient, meta_update, MetaParams};
use super::mlp::{Activation, Mlp};
use super::replay::ReplayBuffer;
use super::td3::{actor_loss_grad, critic_targets, critic_update, preact_penalty_grad, soft_update, target_action, Td3Params};
use crate::error::{Error, Result};
use crate::numerics::PrngStream;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Td3,
    MetaTd3,
    Random,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::MetaTd3, AgentKind::Td3, AgentKind::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Td3 => "td3",
            AgentKind::MetaTd3 => "meta_td3",
            AgentKind::Random => "random",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "td3" => Ok(AgentKind::Td3),
            "meta_td3" => Ok(AgentKind::MetaTd3),
            "random" => Ok(AgentKind::Random),
            other => Err(Error::AgentKind(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaCritic<T> {
    pub net: Mlp<T>,
    pub opt: Adam<T>,
}

/// Losses from one call to [`Agent::update`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateLog {
    pub critic_loss: [f64; 2],
    pub actor_loss: Option<f64>,
    pub meta_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent<T> {
    kind: AgentKind,
    td3: Td3Params,
    meta_params: MetaParams,
    state_dim: usize,
    action_dim: usize,
    actor: Mlp<T>,
    actor_target: Mlp<T>,
    critics: [Mlp<T>; 2],
    critic_targets: [Mlp<T>; 2],
    actor_opt: Adam<T>,
    critic_opts: [Adam<T>; 2],
    meta: Option<MetaCritic<T>>,
    critic_updates: u64,
    actor_updates: u64,
    meta_updates: u64,
}

fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl<T: Real> Agent<T> {
    /// Fresh networks drawn from `rng`. Targets start as copies.
    pub fn new(
        kind: AgentKind,
        state_dim: usize,
        action_dim: usize,
        td3: Td3Params,
        meta_params: MetaParams,
        rng: &mut PrngStream,
    ) -> Result<Self> {
        let actor = Mlp::init(&layer_dims(state_dim, &td3.hidden, action_dim), Activation::Tanh, rng, 0.1)?;
        let critic_dims = layer_dims(state_dim + action_dim, &td3.hidden, 1);
        let critics = [
            Mlp::init(&critic_dims, Activation::Identity, rng, 1.0)?,
            Mlp::init(&critic_dims, Activation::Identity, rng, 1.0)?,
        ];
        let lr = T::lit(td3.lr);
        let meta = if kind == AgentKind::MetaTd3 {
            let net =
                Mlp::init(&layer_dims(state_dim + action_dim, &meta_params.hidden, 1), Activation::Identity, rng, 0.1)?;
            let opt = Adam::new(net.num_params(), T::lit(meta_params.meta_lr));
            Some(MetaCritic { net, opt })
        } else {
            None
        };
        Ok(Agent {
            kind,
            state_dim,
            action_dim,
            actor_target: actor.clone(),
            actor_opt: Adam::new(actor.num_params(), lr),
            critic_opts: [Adam::new(critics[0].num_params(), lr), Adam::new(critics[1].num_params(), lr)],
            critic_targets: critics.clone(),
            actor,
            critics,
            meta,
            td3,
            meta_params,
            critic_updates: 0,
            actor_updates: 0,
            meta_updates: 0,
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn td3_params(&self) -> &Td3Params {
        &self.td3
    }

    pub fn meta_params(&self) -> &MetaParams {
        &self.meta_params
    }

    pub fn actor(&self) -> &Mlp<T> {
        &self.actor
    }

    pub fn critics(&self) -> &[Mlp<T>; 2] {
        &self.critics
    }

    pub fn meta_critic(&self) -> Option<&MetaCritic<T>> {
        self.meta.as_ref()
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    pub fn meta_updates(&self) -> u64 {
        self.meta_updates
    }

    /// Transitions needed before [`update`](Self::update) does anything.
    pub fn min_buffer(&self) -> usize {
        match self.kind {
            AgentKind::MetaTd3 => 2 * self.td3.batch_size,
            _ => self.td3.batch_size,
        }
    }

    /// Deterministic policy output, or a uniform draw for the random agent.
    pub fn policy(&self, state: &[T], rng: &mut PrngStream) -> Result<Vec<T>> {
        if state.len() != self.state_dim {
            return Err(Error::dim("agent state", self.state_dim, state.len()));
        }
        match self.kind {
            AgentKind::Random => Ok(uniform_action(self.action_dim, rng)),
            _ => self.actor.forward(state),
        }
    }

    /// Policy output plus clipped Gaussian behaviour noise.
    pub fn explore(&self, state: &[T], rng: &mut PrngStream) -> Result<Vec<T>> {
        let mut a = self.policy(state, rng)?;
        if self.kind != AgentKind::Random && self.td3.expl_sigma > 0.0 {
            let (sigma, one) = (T::lit(self.td3.expl_sigma), T::one());
            for v in &mut a {
                *v = (*v + sigma * rng.standard_normal::<T>()).max(-one).min(one);
            }
        }
        Ok(a)
    }

    /// One training step: both critics, then every `policy_delay` critic
    /// steps the actor (plus the meta-critic for `meta_td3`) and all
    /// targets. Returns `None` for the random agent or a short buffer.
    pub fn update(&mut self, buffer: &ReplayBuffer<T>, rng: &mut PrngStream) -> Result<Option<UpdateLog>> {
        if self.kind == AgentKind::Random || buffer.len() < self.min_buffer() {
            return Ok(None);
        }
        let b = self.td3.batch_size;
        let (batch, val) = match self.kind {
            AgentKind::MetaTd3 => {
                let (t, v) = buffer.sample_disjoint(rng, b, b)?;
                (t, Some(v))
            }
            _ => (buffer.sample(rng, b)?, None),
        };

        let next = target_action(&self.actor_target, &batch.next_states, self.td3.noise_sigma, self.td3.noise_clip, rng)?;
        let y = critic_targets(&batch, &next, &self.critic_targets[0], &self.critic_targets[1], self.td3.gamma)?;
        let mut log = UpdateLog::default();
        for j in 0..2 {
            let loss = critic_update(&mut self.critics[j], &mut self.critic_opts[j], &batch.states, &batch.actions, &y)?;
            log.critic_loss[j] = loss.as_f64();
        }
        self.critic_updates += 1;

        if self.critic_updates % u64::from(self.td3.policy_delay) == 0 {
            match (&mut self.meta, val) {
                (Some(meta), Some(val)) => {
                    let g = meta_gradient(&self.actor, &self.critics[0], &meta.net, &batch.states, &val.states, &self.meta_params)?;
                    let mut combined: Vec<T> =
                        g.step.grad_critic.iter().zip(&g.step.grad_aux).map(|(&a, &b)| a + b).collect();
                    add_penalty(&self.td3, &self.actor, &mut combined, &batch.states)?;
                    self.actor_opt.step(self.actor.params_mut(), &combined);
                    meta_update(&mut meta.net, &mut meta.opt, &g.grad);
                    self.meta_updates += 1;
                    log.actor_loss = Some(g.step.critic_loss.as_f64());
                    log.meta_loss = Some(g.loss.as_f64());
                }
                _ => {
                    let (loss, mut grad) = actor_loss_grad(&self.actor, &self.critics[0], &batch.states)?;
                    add_penalty(&self.td3, &self.actor, &mut grad, &batch.states)?;
                    self.actor_opt.step(self.actor.params_mut(), &grad);
                    log.actor_loss = Some(loss.as_f64());
                }
            }
            for j in 0..2 {
                soft_update(&mut self.critic_targets[j], &self.critics[j], self.td3.tau1)?;
            }
            soft_update(&mut self.actor_target, &self.actor, self.td3.tau2)?;
            self.actor_updates += 1;
        }
        Ok(Some(log))
    }
}

fn add_penalty<T: Real>(td3: &Td3Params, actor: &Mlp<T>, grad: &mut [T], states: &Array2<T>) -> Result<()> {
    if td3.preact_penalty > 0.0 {
        let (_, g) = preact_penalty_grad(actor, states, td3.preact_penalty)?;
        grad.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
    }
    Ok(())
}

pub fn uniform_action<T: Real>(dim: usize, rng: &mut PrngStream) -> Vec<T> {
    (0..dim).map(|_| T::lit(rng.uniform_in(-1.0, 1.0))).collect()
}
