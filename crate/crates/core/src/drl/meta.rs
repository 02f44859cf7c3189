//! Meta-critic extension of the actor update.
//!
//! A small network `M_ϰ` scores `[s | π_φ(s)]`; its batch mean is an
//! auxiliary actor loss. The actor takes two differentiable SGD stages on a
//! training batch (critic-driven loss, then the auxiliary loss) and the
//! meta-loss `tanh(L(b_val; φ_new) - L(b_val; φ_old))` is minimized over ϰ.
//! Since `φ_new = φ_old - η ∇_φ L_aux(φ; ϰ)`,
//!
//! `∇_ϰ L_meta = -η · sech²(·) · ∇_ϰ ⟨g_val, ∇_φ L_aux(φ; ϰ)⟩`
//!
//! with `g_val = ∇_φ L(b_val; φ_new)`. The mixed second derivative is taken
//! exactly by pushing dual numbers with tangent `g_val` through the actor and
//! backpropagating into ϰ, or approximately by a central difference along
//! `g_val`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::adam::{sgd_step, Adam};
use super::mlp::{columns, hstack, Mlp};
use super::td3::{actor_loss, actor_loss_grad};
use crate::dual::Dual;
use crate::error::Result;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub hidden: Vec<usize>,
    /// Adam rate for ϰ.
    pub meta_lr: f64,
    /// SGD rate η of the two differentiable actor stages.
    pub inner_lr: f64,
    /// Replace the exact mixed derivative by a finite difference.
    pub first_order: bool,
    pub fd_delta: f64,
}

impl Default for MetaParams {
    fn default() -> Self {
        MetaParams { hidden: vec![64, 64], meta_lr: 1e-4, inner_lr: 1e-4, first_order: false, fd_delta: 1e-4 }
    }
}

impl MetaParams {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(("hidden", "needs at least one layer, all sizes >= 1".into()));
        }
        if !(self.meta_lr >= 0.0 && self.meta_lr.is_finite()) {
            return Err(("meta_lr", "must be a finite value >= 0".into()));
        }
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return Err(("inner_lr", "must be a finite value >= 0".into()));
        }
        if !(self.fd_delta > 0.0) {
            return Err(("fd_delta", "must be > 0".into()));
        }
        Ok(())
    }
}

/// `mean_i M_ϰ([s_i | π_φ(s_i)])`.
pub fn aux_loss<T: Real>(actor: &Mlp<T>, meta: &Mlp<T>, states: &Array2<T>) -> Result<T> {
    let a = actor.forward_batch(states.clone())?.output().clone();
    let m = meta.forward_batch(hstack(states, &a))?;
    Ok(m.output().sum() / T::from_usize(states.nrows()).unwrap())
}

/// Auxiliary loss with its gradients with respect to the actor (φ) and the
/// meta network (ϰ).
pub fn aux_loss_grads<T: Real>(actor: &Mlp<T>, meta: &Mlp<T>, states: &Array2<T>) -> Result<(T, Vec<T>, Vec<T>)> {
    let b = states.nrows();
    let n = T::from_usize(b).unwrap();
    let a_cache = actor.forward_batch(states.clone())?;
    let m_cache = meta.forward_batch(hstack(states, a_cache.output()))?;
    let loss = m_cache.output().sum() / n;
    let d_m = Array2::from_elem((b, 1), T::one() / n);
    let (g_meta, d_x) = meta.backward(&m_cache, &d_m, true);
    let d_a = columns(&d_x, states.ncols(), d_x.ncols());
    let (g_actor, _) = actor.backward(&a_cache, &d_a, true);
    Ok((loss, g_actor, g_meta))
}

/// `tanh(l_new - l_old)`.
pub fn meta_loss<T: Real>(l_new: T, l_old: T) -> T {
    (l_new - l_old).tanh()
}

/// The two actor snapshots and the stage gradients that produced them.
#[derive(Clone, Debug)]
pub struct MetaActorStep<T> {
    pub phi_old: Mlp<T>,
    pub phi_new: Mlp<T>,
    /// `∇_φ` of the critic-driven loss at φ.
    pub grad_critic: Vec<T>,
    /// `∇_φ` of the auxiliary loss at φ.
    pub grad_aux: Vec<T>,
    pub critic_loss: T,
    pub aux_loss: T,
}

/// `φ_old = φ - η g_c`, `φ_new = φ_old - η g_aux`, both gradients taken at φ
/// on the training batch.
pub fn meta_actor_step<T: Real>(
    actor: &Mlp<T>,
    critic1: &Mlp<T>,
    meta: &Mlp<T>,
    train_states: &Array2<T>,
    lr: f64,
) -> Result<MetaActorStep<T>> {
    let (critic_loss, grad_critic) = actor_loss_grad(actor, critic1, train_states)?;
    let (aux, grad_aux, _) = aux_loss_grads(actor, meta, train_states)?;
    let eta = T::lit(lr);
    let mut phi_old = actor.clone();
    sgd_step(phi_old.params_mut(), &grad_critic, eta);
    let mut phi_new = phi_old.clone();
    sgd_step(phi_new.params_mut(), &grad_aux, eta);
    Ok(MetaActorStep { phi_old, phi_new, grad_critic, grad_aux, critic_loss, aux_loss: aux })
}

/// `∇_ϰ ⟨v, ∇_φ L_aux(φ; ϰ)⟩` by forward-over-reverse differentiation.
pub fn mixed_grad_exact<T: Real>(actor: &Mlp<T>, meta: &Mlp<T>, states: &Array2<T>, v: &[T]) -> Result<Vec<T>> {
    let actor_d: Mlp<Dual<T>> = actor.map_params(|i, p| Dual::new(p, v[i]));
    let meta_d: Mlp<Dual<T>> = meta.map_params(|_, p| Dual::constant(p));
    let s = states.mapv(Dual::constant);
    let a = actor_d.forward_batch(s.clone())?.output().clone();
    let cache = meta_d.forward_batch(hstack(&s, &a))?;
    let b = states.nrows();
    let d_m = Array2::from_elem((b, 1), Dual::constant(T::one() / T::from_usize(b).unwrap()));
    let (g, _) = meta_d.backward(&cache, &d_m, true);
    Ok(g.iter().map(|d| d.eps).collect())
}

/// Central-difference version of [`mixed_grad_exact`]; the step is `delta`
/// divided by `‖v‖`.
pub fn mixed_grad_fd<T: Real>(actor: &Mlp<T>, meta: &Mlp<T>, states: &Array2<T>, v: &[T], delta: f64) -> Result<Vec<T>> {
    let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    if norm == T::zero() {
        return Ok(vec![T::zero(); meta.num_params()]);
    }
    let h = T::lit(delta) / norm;
    let (_, _, up) = aux_loss_grads(&actor.offset(v, h), meta, states)?;
    let (_, _, dn) = aux_loss_grads(&actor.offset(v, -h), meta, states)?;
    let two_h = h + h;
    Ok(up.iter().zip(&dn).map(|(&a, &b)| (a - b) / two_h).collect())
}

/// Meta-loss value and `∇_ϰ L_meta`.
#[derive(Clone, Debug)]
pub struct MetaGradient<T> {
    pub step: MetaActorStep<T>,
    pub loss: T,
    pub grad: Vec<T>,
}

pub fn meta_gradient<T: Real>(
    actor: &Mlp<T>,
    critic1: &Mlp<T>,
    meta: &Mlp<T>,
    train_states: &Array2<T>,
    val_states: &Array2<T>,
    params: &MetaParams,
) -> Result<MetaGradient<T>> {
    let step = meta_actor_step(actor, critic1, meta, train_states, params.inner_lr)?;
    let (l_new, g_val) = actor_loss_grad(&step.phi_new, critic1, val_states)?;
    let l_old = actor_loss(&step.phi_old, critic1, val_states)?;
    let loss = meta_loss(l_new, l_old);
    let mixed = if params.first_order {
        mixed_grad_fd(actor, meta, train_states, &g_val, params.fd_delta)?
    } else {
        mixed_grad_exact(actor, meta, train_states, &g_val)?
    };
    let scale = -T::lit(params.inner_lr) * (T::one() - loss * loss);
    let grad = mixed.iter().map(|&m| scale * m).collect();
    Ok(MetaGradient { step, loss, grad })
}

/// One Adam step on ϰ.
pub fn meta_update<T: Real>(meta: &mut Mlp<T>, opt: &mut Adam<T>, grad: &[T]) -> bool {
    opt.step(meta.params_mut(), grad)
}
