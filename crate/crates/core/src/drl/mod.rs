//! Networks, replay, TD3 and the meta-critic variant.

pub mod adam;
pub mod agent;
pub mod meta;
pub mod mlp;
pub mod replay;
pub mod td3;
pub mod trainer;

pub use adam::Adam;
pub use agent::{Agent, AgentKind, MetaCritic, UpdateLog};
pub use meta::MetaParams;
pub use mlp::{Activation, Mlp};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use td3::Td3Params;
pub use trainer::{evaluate_policy, EpisodeLog, Trainer, TrainingLog};
