use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::PrngStream;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub state: Vec<T>,
    pub action: Vec<T>,
    pub reward: T,
    pub next_state: Vec<T>,
    pub done: bool,
}

/// A minibatch in matrix form, one row per transition.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub states: Array2<T>,
    pub actions: Array2<T>,
    pub rewards: Vec<T>,
    pub next_states: Array2<T>,
    pub dones: Vec<bool>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity ring of transitions stored as flat arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<T>,
    actions: Vec<T>,
    rewards: Vec<T>,
    next_states: Vec<T>,
    dones: Vec<bool>,
    cursor: usize,
    len: usize,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        ReplayBuffer {
            capacity,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
            cursor: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition<T>) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
            return Err(Error::dim("replay state", self.state_dim, t.state.len()));
        }
        if t.action.len() != self.action_dim {
            return Err(Error::dim("replay action", self.action_dim, t.action.len()));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.len < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_states.extend_from_slice(&t.next_state);
            self.dones.push(t.done);
            self.len += 1;
        } else {
            let (c, sd, ad) = (self.cursor, self.state_dim, self.action_dim);
            self.states[c * sd..(c + 1) * sd].copy_from_slice(&t.state);
            self.actions[c * ad..(c + 1) * ad].copy_from_slice(&t.action);
            self.rewards[c] = t.reward;
            self.next_states[c * sd..(c + 1) * sd].copy_from_slice(&t.next_state);
            self.dones[c] = t.done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition<T>> {
        if i >= self.len {
            return None;
        }
        let (sd, ad) = (self.state_dim, self.action_dim);
        Some(Transition {
            state: self.states[i * sd..(i + 1) * sd].to_vec(),
            action: self.actions[i * ad..(i + 1) * ad].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * sd..(i + 1) * sd].to_vec(),
            done: self.dones[i],
        })
    }

    pub fn gather(&self, idx: &[usize]) -> Batch<T> {
        let (sd, ad, b) = (self.state_dim, self.action_dim, idx.len());
        let mut states = Array2::zeros((b, sd));
        let mut actions = Array2::zeros((b, ad));
        let mut next_states = Array2::zeros((b, sd));
        for (r, &i) in idx.iter().enumerate() {
            states.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&self.states[i * sd..(i + 1) * sd]);
            actions.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&self.actions[i * ad..(i + 1) * ad]);
            next_states.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&self.next_states[i * sd..(i + 1) * sd]);
        }
        Batch {
            states,
            actions,
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states,
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    /// `size` distinct stored indices.
    pub fn sample_indices(&self, rng: &mut PrngStream, size: usize) -> Result<Vec<usize>> {
        if size == 0 || size > self.len {
            return Err(Error::dim("replay sample size", self.len, size));
        }
        Ok(index::sample(rng, self.len, size).into_vec())
    }

    pub fn sample(&self, rng: &mut PrngStream, size: usize) -> Result<Batch<T>> {
        Ok(self.gather(&self.sample_indices(rng, size)?))
    }

    /// Two batches with no transition in common.
    pub fn sample_disjoint(&self, rng: &mut PrngStream, trn: usize, val: usize) -> Result<(Batch<T>, Batch<T>)> {
        let idx = self.sample_indices(rng, trn + val)?;
        Ok((self.gather(&idx[..trn]), self.gather(&idx[trn..])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(v: f64) -> Transition<f64> {
        Transition { state: vec![v, v], action: vec![v], reward: v, next_state: vec![-v, -v], done: v < 0.0 }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 2, 1);
        for i in 0..5 {
            b.push(tr(i as f64)).unwrap();
            assert!(b.len() <= 3);
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
        assert!(b.get(3).is_none());
    }

    #[test]
    fn rejects_wrong_shapes() {
        let mut b = ReplayBuffer::<f64>::new(3, 2, 1);
        let mut t = tr(1.0);
        t.action.push(0.0);
        assert!(b.push(t).is_err());
    }

    #[test]
    fn samples_only_stored_entries() {
        let mut b = ReplayBuffer::new(100, 2, 1);
        for i in 0..10 {
            b.push(tr(i as f64)).unwrap();
        }
        let mut rng = PrngStream::new(1, 0);
        let batch = b.sample(&mut rng, 10).unwrap();
        let mut r = batch.rewards.clone();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        assert!(b.sample(&mut rng, 11).is_err());
        for row in 0..batch.len() {
            assert_eq!(batch.states[[row, 0]], batch.rewards[row]);
            assert_eq!(batch.next_states[[row, 1]], -batch.rewards[row]);
        }
    }

    #[test]
    fn disjoint_batches() {
        let mut b = ReplayBuffer::new(100, 2, 1);
        for i in 0..40 {
            b.push(tr(i as f64)).unwrap();
        }
        let mut rng = PrngStream::new(2, 0);
        for _ in 0..50 {
            let (trn, val) = b.sample_disjoint(&mut rng, 16, 16).unwrap();
            assert!(trn.rewards.iter().all(|r| !val.rewards.contains(r)));
        }
    }
}
