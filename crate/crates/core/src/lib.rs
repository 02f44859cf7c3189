//! FIM + STAR-RIS downlink simulator: multipath channels for a morphing
//! antenna array, a simultaneously transmitting and reflecting surface,
//! finite-blocklength rates, and TD3 / meta-critic TD3 agents that learn the
//! joint configuration.
//!
//! Everything numeric is generic over [`Real`] (`f32`, `f64`); the aliases
//! below fix the common `f64` instantiations.

pub mod channel;
pub mod drl;
pub mod dual;
pub mod env;
pub mod error;
pub mod harness;
pub mod link;
pub mod numerics;
pub mod scalar;
pub mod star;

pub use error::{Error, Result};
pub use scalar::Real;

pub type FimGeometry64 = channel::FimGeometry<f64>;
pub type ChannelSet64 = channel::ChannelSet<f64>;
pub type StarConfig64 = star::StarConfig<f64>;
pub type SolutionPoint64 = link::SolutionPoint<f64>;
pub type RateReport64 = link::RateReport<f64>;
pub type FimStarEnv64 = env::FimStarEnv<f64>;
pub type Mlp64 = drl::Mlp<f64>;
pub type Agent64 = drl::Agent<f64>;
pub type Trainer64 = drl::Trainer<f64>;
