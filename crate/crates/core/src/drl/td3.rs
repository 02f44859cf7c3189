//! TD3 building blocks: target policy smoothing, the clipped double-Q
//! target, critic and actor losses with their gradients, and Polyak
//! averaging.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{columns, hstack, Mlp};
use super::replay::Batch;
use crate::error::{Error, Result};
use crate::numerics::PrngStream;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Td3Params {
    /// Discount factor.
    pub gamma: f64,
    /// Critic target averaging rate.
    pub tau1: f64,
    /// Actor target averaging rate.
    pub tau2: f64,
    pub policy_delay: u32,
    /// Target smoothing noise σ and its clip c.
    pub noise_sigma: f64,
    pub noise_clip: f64,
    /// Behaviour noise σ during data collection.
    pub expl_sigma: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Uniform-random steps before the first update.
    pub warmup: usize,
    pub capacity: usize,
    pub hidden: Vec<usize>,
    /// Weight of the pre-tanh penalty on the actor head (0 disables it).
    pub preact_penalty: f64,
    /// Treat the end of a fixed-length episode as a cut, not a terminal
    /// state: critic targets keep bootstrapping through it.
    pub time_limit_bootstrap: bool,
}

impl Default for Td3Params {
    fn default() -> Self {
        Td3Params {
            gamma: 0.99,
            tau1: 0.005,
            tau2: 0.005,
            policy_delay: 2,
            noise_sigma: 0.2,
            noise_clip: 0.5,
            expl_sigma: 0.1,
            lr: 1e-4,
            batch_size: 64,
            warmup: 1000,
            capacity: 100_000,
            hidden: vec![500, 400, 300],
            preact_penalty: 0.0,
            time_limit_bootstrap: true,
        }
    }
}

impl Td3Params {
    /// Returns the offending field name and reason on failure.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let bad = |k, m: &str| Err((k, m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(self.tau1 > 0.0 && self.tau1 <= 1.0) {
            return bad("tau1", "must lie in (0, 1]");
        }
        if !(self.tau2 > 0.0 && self.tau2 <= 1.0) {
            return bad("tau2", "must lie in (0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay", "must be >= 1");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma", "must be >= 0");
        }
        if !(self.noise_clip > 0.0) {
            return bad("noise_clip", "must be > 0");
        }
        if !(self.expl_sigma >= 0.0) {
            return bad("expl_sigma", "must be >= 0");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be a finite value >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.capacity < self.batch_size {
            return bad("capacity", "must be >= batch_size");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one layer, all sizes >= 1");
        }
        if !(self.preact_penalty >= 0.0 && self.preact_penalty.is_finite()) {
            return bad("preact_penalty", "must be a finite value >= 0");
        }
        Ok(())
    }
}

/// `clip(π′(s′) + clip(N(0, σ²), -c, c), -1, 1)` row by row.
pub fn target_action<T: Real>(
    actor_target: &Mlp<T>,
    next_states: &Array2<T>,
    sigma: f64,
    clip: f64,
    rng: &mut PrngStream,
) -> Result<Array2<T>> {
    let mut a = actor_target.forward_batch(next_states.clone())?.output().clone();
    let (one, c) = (T::one(), T::lit(clip));
    if sigma > 0.0 && clip > 0.0 {
        let sigma = T::lit(sigma);
        a.mapv_inplace(|v| {
            let noise = (sigma * rng.standard_normal::<T>()).max(-c).min(c);
            (v + noise).max(-one).min(one)
        });
    }
    Ok(a)
}

/// `y = r + γ·min(q1, q2)`, or `r` at a terminal transition.
pub fn critic_target<T: Real>(reward: T, done: bool, q1: T, q2: T, gamma: T) -> T {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

fn q_values<T: Real>(critic: &Mlp<T>, states: &Array2<T>, actions: &Array2<T>) -> Result<Vec<T>> {
    Ok(critic.forward_batch(hstack(states, actions))?.output().column(0).to_vec())
}

/// Bootstrap targets for a batch given smoothed target actions.
pub fn critic_targets<T: Real>(
    batch: &Batch<T>,
    target_actions: &Array2<T>,
    critic1_target: &Mlp<T>,
    critic2_target: &Mlp<T>,
    gamma: f64,
) -> Result<Vec<T>> {
    let q1 = q_values(critic1_target, &batch.next_states, target_actions)?;
    let q2 = q_values(critic2_target, &batch.next_states, target_actions)?;
    let g = T::lit(gamma);
    Ok((0..batch.len()).map(|i| critic_target(batch.rewards[i], batch.dones[i], q1[i], q2[i], g)).collect())
}

/// `(1/B) Σ (Q(s, a) - y)²` and its parameter gradient.
pub fn critic_loss_grad<T: Real>(
    critic: &Mlp<T>,
    states: &Array2<T>,
    actions: &Array2<T>,
    targets: &[T],
) -> Result<(T, Vec<T>)> {
    let b = targets.len();
    if states.nrows() != b || actions.nrows() != b {
        return Err(Error::dim("critic batch", b, states.nrows()));
    }
    let cache = critic.forward_batch(hstack(states, actions))?;
    let n = T::from_usize(b).unwrap();
    let diff: Vec<T> = cache.output().column(0).iter().zip(targets).map(|(&q, &y)| q - y).collect();
    let loss = diff.iter().fold(T::zero(), |acc, &d| acc + d * d) / n;
    let d_out = Array2::from_shape_fn((b, 1), |(i, _)| T::lit(2.0) * diff[i] / n);
    let (grad, _) = critic.backward(&cache, &d_out, true);
    Ok((loss, grad))
}

/// One Adam step of a critic towards `targets`; returns the pre-step loss.
pub fn critic_update<T: Real>(
    critic: &mut Mlp<T>,
    opt: &mut Adam<T>,
    states: &Array2<T>,
    actions: &Array2<T>,
    targets: &[T],
) -> Result<T> {
    let (loss, grad) = critic_loss_grad(critic, states, actions, targets)?;
    opt.step(critic.params_mut(), &grad);
    Ok(loss)
}

/// `-(1/B) Σ Q₁(s, π(s))` and its gradient with respect to the actor.
pub fn actor_loss_grad<T: Real>(actor: &Mlp<T>, critic: &Mlp<T>, states: &Array2<T>) -> Result<(T, Vec<T>)> {
    let b = states.nrows();
    let n = T::from_usize(b).unwrap();
    let a_cache = actor.forward_batch(states.clone())?;
    let c_cache = critic.forward_batch(hstack(states, a_cache.output()))?;
    let loss = -c_cache.output().sum() / n;
    let d_q = Array2::from_elem((b, 1), -T::one() / n);
    let (_, d_x) = critic.backward(&c_cache, &d_q, false);
    let d_a = columns(&d_x, states.ncols(), d_x.ncols());
    let (grad, _) = actor.backward(&a_cache, &d_a, true);
    Ok((loss, grad))
}

pub fn actor_loss<T: Real>(actor: &Mlp<T>, critic: &Mlp<T>, states: &Array2<T>) -> Result<T> {
    let a = actor.forward_batch(states.clone())?.output().clone();
    let q = critic.forward_batch(hstack(states, &a))?;
    Ok(-q.output().sum() / T::from_usize(states.nrows()).unwrap())
}

/// `λ · mean(z²)` over the actor's output pre-activations and its gradient.
///
/// Keeps the tanh head out of saturation, where the critic's action gradient
/// no longer reaches the actor parameters.
pub fn preact_penalty_grad<T: Real>(actor: &Mlp<T>, states: &Array2<T>, weight: f64) -> Result<(T, Vec<T>)> {
    let cache = actor.forward_batch(states.clone())?;
    let z = actor.output_pre(&cache);
    let n = T::from_usize(z.len()).unwrap();
    let w = T::lit(weight);
    let loss = w * z.iter().fold(T::zero(), |acc, &v| acc + v * v) / n;
    let two = T::lit(2.0);
    let (grad, _) = actor.backward_pre(&cache, z.mapv(|v| two * w * v / n), true);
    Ok((loss, grad))
}

/// One Adam step of the actor on the critic-driven loss; returns the
/// pre-step loss.
pub fn actor_update<T: Real>(actor: &mut Mlp<T>, opt: &mut Adam<T>, critic: &Mlp<T>, states: &Array2<T>) -> Result<T> {
    let (loss, grad) = actor_loss_grad(actor, critic, states)?;
    opt.step(actor.params_mut(), &grad);
    Ok(loss)
}

/// `θ′ ← τθ + (1-τ)θ′`.
pub fn soft_update<T: Real>(target: &mut Mlp<T>, online: &Mlp<T>, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::dim("soft update parameters", online.num_params(), target.num_params()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::domain("soft update rate must lie in [0, 1]", tau));
    }
    if tau == 1.0 {
        target.params_mut().copy_from_slice(online.params());
    } else if tau > 0.0 {
        let (t, keep) = (T::lit(tau), T::lit(1.0 - tau));
        for (p, &o) in target.params_mut().iter_mut().zip(online.params()) {
            *p = t * o + keep * *p;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::mlp::Activation;
    use super::*;

    fn nets(rng: &mut PrngStream) -> (Mlp<f64>, Mlp<f64>) {
        let actor = Mlp::init(&[3, 8, 6, 2], Activation::Tanh, rng, 1.0).unwrap();
        let critic = Mlp::init(&[5, 8, 6, 1], Activation::Identity, rng, 1.0).unwrap();
        (actor, critic)
    }

    fn batch(rng: &mut PrngStream, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.uniform_in(-1.0, 1.0))
    }

    #[test]
    fn target_examples() {
        assert_eq!(critic_target(0.5, true, 2.0, 3.0, 0.99), 0.5);
        assert!((critic_target(0.0_f64, false, 2.0, 3.0, 0.99) - 1.98).abs() < 1e-15);
        assert_eq!(critic_target(1.0, false, 2.0, 2.0, 0.5), 2.0);
    }

    #[test]
    fn min_rule_never_exceeds_either_critic() {
        let mut rng = PrngStream::new(1, 0);
        for _ in 0..1000 {
            let (r, q1, q2) = (rng.uniform_in(-5.0, 5.0), rng.uniform_in(-5.0, 5.0), rng.uniform_in(-5.0, 5.0));
            let y = critic_target(r, false, q1, q2, 0.9);
            assert!(y <= r + 0.9 * q1 && y <= r + 0.9 * q2);
        }
    }

    #[test]
    fn smoothing_noise_is_clipped() {
        let mut rng = PrngStream::new(2, 0);
        let actor = Mlp::<f64>::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
        let s = batch(&mut rng, 5000, 3);
        let a = target_action(&actor, &s, 10.0, 0.5, &mut rng).unwrap();
        assert!(a.iter().all(|v| v.abs() <= 0.5));
        assert!(a.iter().any(|v| v.abs() == 0.5));

        let (actor, _) = nets(&mut rng);
        let s = batch(&mut rng, 10, 3);
        let clean = actor.forward_batch(s.clone()).unwrap().output().clone();
        assert_eq!(target_action(&actor, &s, 0.0, 0.5, &mut rng).unwrap(), clean);
        assert_eq!(target_action(&actor, &s, 1.0, 0.0, &mut rng).unwrap(), clean);
    }

    #[test]
    fn critic_loss_matches_hand_mse() {
        let critic = Mlp::from_params(&[2, 1], Activation::Identity, vec![1.0_f64, 2.0, 0.5]).unwrap();
        let s = Array2::from_shape_vec((2, 1), vec![1.0, -1.0]).unwrap();
        let a = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        // Q = s + 2a + 0.5 → [1.5, 1.5]
        let (loss, _) = critic_loss_grad(&critic, &s, &a, &[1.0, 3.5]).unwrap();
        assert!((loss - (0.25 + 4.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn exact_targets_give_zero_loss_and_no_change() {
        let mut rng = PrngStream::new(3, 0);
        let (_, mut critic) = nets(&mut rng);
        let (s, a) = (batch(&mut rng, 4, 3), batch(&mut rng, 4, 2));
        let y = q_values(&critic, &s, &a).unwrap();
        let before = critic.clone();
        let mut opt = Adam::new(critic.num_params(), 1e-3);
        assert_eq!(critic_update(&mut critic, &mut opt, &s, &a, &y).unwrap(), 0.0);
        assert_eq!(critic, before);
    }

    fn fd_grad(f: impl Fn(&Mlp<f64>) -> f64, net: &Mlp<f64>, i: usize) -> f64 {
        let h = 1e-5;
        let (mut up, mut dn) = (net.clone(), net.clone());
        up.params_mut()[i] += h;
        dn.params_mut()[i] -= h;
        (f(&up) - f(&dn)) / (2.0 * h)
    }

    #[test]
    fn preact_penalty_gradient_matches_finite_differences() {
        let mut rng = PrngStream::new(8, 0);
        let (actor, _) = nets(&mut rng);
        let s = batch(&mut rng, 5, 3);
        let (_, g) = preact_penalty_grad(&actor, &s, 0.3).unwrap();
        for _ in 0..10 {
            let i = rng.index(actor.num_params());
            let fd = fd_grad(|p| preact_penalty_grad(p, &s, 0.3).unwrap().0, &actor, i);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1e-3));
        }
        let (l0, g0) = preact_penalty_grad(&actor, &s, 0.0).unwrap();
        assert_eq!(l0, 0.0);
        assert!(g0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn critic_and_actor_gradients_match_finite_differences() {
        let mut rng = PrngStream::new(4, 0);
        let (actor, critic) = nets(&mut rng);
        let (s, a) = (batch(&mut rng, 6, 3), batch(&mut rng, 6, 2));
        let y: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let (_, gc) = critic_loss_grad(&critic, &s, &a, &y).unwrap();
        let (_, ga) = actor_loss_grad(&actor, &critic, &s).unwrap();
        for _ in 0..10 {
            let i = rng.index(critic.num_params());
            let fd = fd_grad(|c| critic_loss_grad(c, &s, &a, &y).unwrap().0, &critic, i);
            assert!((fd - gc[i]).abs() <= 1e-4 * fd.abs().max(1e-3));
            let j = rng.index(actor.num_params());
            let fd = fd_grad(|p| actor_loss(p, &critic, &s).unwrap(), &actor, j);
            assert!((fd - ga[j]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn actor_step_raises_q() {
        let mut rng = PrngStream::new(5, 0);
        let (mut actor, critic) = nets(&mut rng);
        let s = batch(&mut rng, 16, 3);
        let before = actor_loss(&actor, &critic, &s).unwrap();
        let mut frozen = actor.clone();
        let mut opt0 = Adam::new(actor.num_params(), 0.0);
        actor_update(&mut frozen, &mut opt0, &critic, &s).unwrap();
        assert_eq!(frozen, actor);
        let mut opt = Adam::new(actor.num_params(), 1e-6);
        actor_update(&mut actor, &mut opt, &critic, &s).unwrap();
        assert!(actor_loss(&actor, &critic, &s).unwrap() <= before);
    }

    #[test]
    fn soft_update_algebra() {
        let online = Mlp::from_params(&[1, 1], Activation::Identity, vec![2.0, 2.0]).unwrap();
        let zero = Mlp::from_params(&[1, 1], Activation::Identity, vec![0.0, 0.0]).unwrap();
        let mut t = zero.clone();
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, zero);
        soft_update(&mut t, &online, 0.5).unwrap();
        assert_eq!(t.params(), &[1.0, 1.0]);
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
        let other = Mlp::<f64>::zeros(&[2, 1], Activation::Identity).unwrap();
        assert!(soft_update(&mut t, &other, 0.5).is_err());
    }

    #[test]
    fn soft_update_contracts() {
        let mut rng = PrngStream::new(6, 0);
        let (online, _) = nets(&mut rng);
        let (mut target, _) = nets(&mut rng);
        let dist = |a: &Mlp<f64>, b: &Mlp<f64>| a.params().iter().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut prev = dist(&target, &online);
        for _ in 0..50 {
            soft_update(&mut target, &online, 0.1).unwrap();
            let d = dist(&target, &online);
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn param_validation_names_the_field() {
        assert!(Td3Params::default().validate().is_ok());
        let p = Td3Params { gamma: 1.5, ..Default::default() };
        assert_eq!(p.validate().unwrap_err().0, "gamma");
        let p = Td3Params { policy_delay: 0, ..Default::default() };
        assert_eq!(p.validate().unwrap_err().0, "policy_delay");
    }
}
