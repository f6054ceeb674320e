//! Transition storage: a FIFO ring plus an optional never-evicted region.

use std::sync::Arc;

use cirl_sim::{ActionTriple, Observation};
use rand::Rng;

use crate::error::{CirlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Arc<Observation>,
    pub action: ActionTriple,
    pub reward: f64,
    pub next_obs: Arc<Observation>,
    /// Goal or collision: the target is not bootstrapped.
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    protected: Vec<Transition>,
    ring: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CirlError::Config("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, protected: Vec::new(), ring: Vec::new(), head: 0 })
    }

    /// Adds transitions that are never evicted. They count against capacity.
    pub fn protect(&mut self, transitions: Vec<Transition>) -> Result<()> {
        if self.protected.len() + transitions.len() + self.ring.len() >= self.capacity {
            return Err(CirlError::Config(format!(
                "{} protected transitions leave no room in a replay buffer of {}",
                self.protected.len() + transitions.len(),
                self.capacity
            )));
        }
        self.protected.extend(transitions);
        Ok(())
    }

    fn ring_capacity(&self) -> usize {
        self.capacity - self.protected.len()
    }

    pub fn push(&mut self, t: Transition) {
        if self.ring.len() < self.ring_capacity() {
            self.ring.push(t);
        } else {
            self.ring[self.head] = t;
            self.head = (self.head + 1) % self.ring.len();
        }
    }

    pub fn len(&self) -> usize {
        self.protected.len() + self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn protected_len(&self) -> usize {
        self.protected.len()
    }

    pub fn get(&self, i: usize) -> &Transition {
        if i < self.protected.len() {
            &self.protected[i]
        } else {
            &self.ring[i - self.protected.len()]
        }
    }

    /// Ring contents from oldest to newest.
    pub fn ring_in_order(&self) -> impl Iterator<Item = &Transition> {
        self.ring[self.head..].iter().chain(&self.ring[..self.head])
    }

    /// Uniform sample with replacement over protected and ring transitions.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        (0..n).map(|_| self.get(rng.random_range(0..self.len()))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(tag: f64) -> Transition {
        let obs = Arc::new(Observation {
            raster: vec![0.0],
            height: 1,
            width: 1,
            speed: 0.0,
            command: cirl_sim::Command::Follow,
        });
        Transition { obs: obs.clone(), action: ActionTriple::default(), reward: tag, next_obs: obs, terminal: false }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(5).unwrap();
        for i in 0..8 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 5);
        let kept: Vec<f64> = b.ring_in_order().map(|t| t.reward).collect();
        assert_eq!(kept, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn protected_transitions_survive() {
        let mut b = ReplayBuffer::new(6).unwrap();
        b.protect(vec![tr(-1.0), tr(-2.0)]).unwrap();
        for i in 0..20 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 6);
        assert_eq!(b.get(0).reward, -1.0);
        assert_eq!(b.get(1).reward, -2.0);
        let kept: Vec<f64> = b.ring_in_order().map(|t| t.reward).collect();
        assert_eq!(kept, vec![16.0, 17.0, 18.0, 19.0]);
        assert!(ReplayBuffer::new(3).unwrap().protect(vec![tr(0.0); 3]).is_err());
    }
}
