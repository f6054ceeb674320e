//! Actor-critic updates with target networks.

use cirl_nn::{soft_update, Adam, ParamSet};
use log::warn;
use ndarray::Array2;

use crate::error::{CirlError, Result};
use crate::policy::{ActorOptimizer, ActorOptimizerKind, Critic, GatedActor, ObsBatch};
use crate::rl::replay::Transition;

/// A sampled batch laid out for the networks.
pub struct TransitionBatch {
    pub obs: ObsBatch,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: ObsBatch,
    pub terminal: Vec<bool>,
}

impl TransitionBatch {
    pub fn new(transitions: &[&Transition], speed_scale_kmh: f64) -> Result<Self> {
        let obs: Vec<_> = transitions.iter().map(|t| t.obs.as_ref()).collect();
        let next: Vec<_> = transitions.iter().map(|t| t.next_obs.as_ref()).collect();
        let mut actions = Array2::zeros((transitions.len(), 3));
        for (i, t) in transitions.iter().enumerate() {
            for (k, v) in t.action.to_array().into_iter().enumerate() {
                actions[[i, k]] = v;
            }
        }
        Ok(Self {
            obs: ObsBatch::new(&obs, speed_scale_kmh)?,
            actions,
            rewards: transitions.iter().map(|t| t.reward).collect(),
            next_obs: ObsBatch::new(&next, speed_scale_kmh)?,
            terminal: transitions.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Ddpg {
    pub actor: GatedActor,
    pub actor_target: GatedActor,
    pub critic: Critic,
    pub critic_target: Critic,
    actor_opt: ActorOptimizer,
    critic_opt: Adam,
    /// Critic updates skipped because a target was not finite.
    pub skipped_updates: usize,
}

impl Ddpg {
    /// Targets start as exact copies of the online networks.
    pub fn new(actor: GatedActor, critic: Critic) -> Self {
        Self::with_actor_optimizer(actor, critic, ActorOptimizerKind::Sgd)
    }

    pub fn with_actor_optimizer(actor: GatedActor, critic: Critic, kind: ActorOptimizerKind) -> Self {
        Self {
            actor_opt: ActorOptimizer::with_kind(&actor, kind),
            critic_opt: Adam::new(&critic),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            skipped_updates: 0,
        }
    }

    /// Bootstrapped targets `r + gamma·Q'(o', π'(o'))`, with the second term
    /// dropped on terminal transitions.
    pub fn targets(&self, batch: &TransitionBatch, gamma: f64) -> Result<Vec<f64>> {
        let next_actions = self.actor_target.forward_batch(&batch.next_obs)?;
        let q_next = self.critic_target.forward_batch(&batch.next_obs, next_actions.view())?;
        Ok((0..batch.len())
            .map(|i| {
                if batch.terminal[i] {
                    batch.rewards[i]
                } else {
                    batch.rewards[i] + gamma * q_next[[i, 0]]
                }
            })
            .collect())
    }

    /// One Adam step on the critic's squared temporal-difference error.
    /// Returns the pre-update loss, or `None` when the update was skipped.
    pub fn critic_update(&mut self, batch: &TransitionBatch, gamma: f64, lr: f64) -> Result<Option<f64>> {
        let y = self.targets(batch, gamma)?;
        if y.iter().any(|v| !v.is_finite()) {
            self.skipped_updates += 1;
            warn!("non-finite critic target; update skipped");
            return Ok(None);
        }
        let q = self.critic.forward_train(&batch.obs, batch.actions.view())?;
        let n = batch.len() as f64;
        let mut grad = Array2::zeros((batch.len(), 1));
        let mut loss = 0.0;
        for i in 0..batch.len() {
            let d = q[[i, 0]] - y[i];
            loss += d * d / n;
            grad[[i, 0]] = 2.0 * d / n;
        }
        self.critic.backward(grad.view())?;
        if let Err(e) = self.critic_opt.step(&mut self.critic, lr) {
            cirl_nn::zero_grads(&mut self.critic);
            return Err(CirlError::Numeric(format!("critic update: {e}")));
        }
        Ok(Some(loss))
    }

    /// Accumulates `-d mean Q(o, π(o)) / dθ` into the actor's gradients and
    /// returns which branches were hit.
    pub fn actor_gradient(&mut self, obs: &ObsBatch) -> Result<[bool; 4]> {
        let a = self.actor.forward_train(obs)?;
        let dq = Array2::from_elem((obs.len(), 1), -1.0 / obs.len() as f64);
        let da = self.critic.action_grad(obs, a.view(), dq.view())?;
        self.actor.backward(da.view())
    }

    /// One Adam step ascending the critic's value of the actor's actions.
    /// Returns the gradient norm that was applied.
    pub fn actor_update(&mut self, obs: &ObsBatch, lr: f64) -> Result<f64> {
        self.actor_update_with_trunk_lr(obs, lr, lr)
    }

    /// As [`Ddpg::actor_update`], with its own learning rate for the raster trunk.
    pub fn actor_update_with_trunk_lr(&mut self, obs: &ObsBatch, lr: f64, trunk_lr: f64) -> Result<f64> {
        let active = self.actor_gradient(obs)?;
        let norm = self
            .actor
            .params()
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        self.actor_opt.step_with_trunk_lr(&mut self.actor, active, lr, trunk_lr)?;
        Ok(norm)
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.actor_target, &self.actor, tau)?;
        soft_update(&mut self.critic_target, &self.critic, tau)?;
        Ok(())
    }
}
