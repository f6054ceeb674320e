//! The reinforcement-learning loop: explore, store, update, repeat.

use std::path::Path;
use std::sync::Arc;

use cirl_sim::{bundled_map, sample_episode, EpisodeStatus, SimConfig, TaskKind};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demo::DemoDataset;
use crate::error::{CirlError, Result};
use crate::policy::{ActorOptimizerKind, Critic, GatedActor, PolicyConfig};
use crate::regimes::RegimeGroup;
use crate::reward::{total_reward, RewardConfig};
use crate::rl::ddpg::{Ddpg, TransitionBatch};
use crate::rl::ou::{explore, OUConfig, OUProcess};
use crate::rl::replay::{ReplayBuffer, Transition};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RLConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub warmup_steps: usize,
    /// Updates after warmup that train the critic only.
    pub actor_delay_steps: usize,
    /// Multiplier on the actor learning rate for the raster trunk.
    pub trunk_lr_scale: f64,
    pub actor_optimizer: ActorOptimizerKind,
    /// Start the critic's trunk and speed encoder as copies of the pretrained actor's.
    pub critic_from_pretrained: bool,
    pub replay_capacity: usize,
    /// Preload the demonstrations into the replay buffer and never evict them.
    pub demo_replay: bool,
    pub ou: OUConfig,
    pub map: String,
    pub tasks: Vec<TaskKind>,
    pub regime_group: RegimeGroup,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            actor_lr: 1e-5,
            critic_lr: 1e-3,
            total_steps: 150_000,
            batch_size: 64,
            tau: 0.001,
            warmup_steps: 1000,
            actor_delay_steps: 0,
            trunk_lr_scale: 1.0,
            actor_optimizer: ActorOptimizerKind::Sgd,
            critic_from_pretrained: false,
            replay_capacity: 100_000,
            demo_replay: false,
            ou: OUConfig::default(),
            map: "town-a".into(),
            tasks: vec![TaskKind::Straight, TaskKind::OneTurn, TaskKind::Navigation, TaskKind::NavDynamic],
            regime_group: RegimeGroup::Training,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CirlError::Config("rl.gamma must be in (0, 1)".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(CirlError::Config("rl.tau must be in (0, 1]".into()));
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return Err(CirlError::Config("rl learning rates must be >= 0".into()));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.tasks.is_empty() {
            return Err(CirlError::Config("rl.batch_size, rl.replay_capacity and rl.tasks must be non-empty".into()));
        }
        self.ou.validate()
    }

    /// Linear decay factor at step `t`: 1 at the start, exactly 0 at `total_steps`.
    pub fn decay(&self, t: usize) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        (1.0 - t as f64 / self.total_steps as f64).max(0.0)
    }
}

/// One row per finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub step: usize,
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub success: bool,
    pub r_s: f64,
    pub r_v: f64,
    pub r_r: f64,
    pub r_o: f64,
    pub r_d: f64,
    pub critic_loss: f64,
    pub actor_grad_norm: f64,
}

pub fn write_metrics(rows: &[EpisodeMetrics], path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "step",
        "episode",
        "return",
        "success",
        "r_s",
        "r_v",
        "r_r",
        "r_o",
        "r_d",
        "critic_loss",
        "actor_grad_norm",
        "config_hash",
    ])?;
    for m in rows {
        w.write_record([
            m.step.to_string(),
            m.episode.to_string(),
            format!("{:.6}", m.episode_return),
            (m.success as u8).to_string(),
            format!("{:.6}", m.r_s),
            format!("{:.6}", m.r_v),
            format!("{:.6}", m.r_r),
            format!("{:.6}", m.r_o),
            format!("{:.6}", m.r_d),
            format!("{:.9e}", m.critic_loss),
            format!("{:.9e}", m.actor_grad_norm),
            config_hash.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Demonstration steps as replay transitions, rewards recomputed from the
/// recorded measurements. Steps whose successor was not recorded are skipped
/// unless they end the episode.
pub fn demo_transitions(ds: &DemoDataset, reward: &RewardConfig) -> Vec<Transition> {
    let obs: Vec<Arc<_>> = ds.samples.iter().map(|s| Arc::new(s.observation.clone())).collect();
    let mut out = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let terminal = matches!(s.status, EpisodeStatus::GoalReached | EpisodeStatus::Collision);
        let next = match ds.successor(i) {
            Some(j) if !terminal => obs[j].clone(),
            _ if terminal => obs[i].clone(),
            _ => continue,
        };
        let r = total_reward(&s.measurements, s.command(), &s.executed, reward);
        out.push(Transition { obs: obs[i].clone(), action: s.executed, reward: r.total, next_obs: next, terminal });
    }
    out
}

#[derive(Debug)]
pub struct RLOutcome {
    pub ddpg: Ddpg,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Trains actor and critic. With `pretrained`, the online and target actors
/// start as exact copies of it; otherwise from a fresh seeded actor.
#[allow(clippy::too_many_arguments)]
pub fn train_rl(
    cfg: &RLConfig,
    sim: &SimConfig,
    reward: &RewardConfig,
    policy: &PolicyConfig,
    pretrained: Option<&GatedActor>,
    demos: Option<&DemoDataset>,
    seed: u64,
) -> Result<RLOutcome> {
    cfg.validate()?;
    reward.validate()?;
    let map = Arc::new(bundled_map(&cfg.map)?);
    let input_dim = sim.raster.cells();
    let actor = match pretrained {
        Some(a) => {
            if a.input_dim() != input_dim {
                return Err(CirlError::Data(format!(
                    "pretrained actor expects {} raster cells, simulator renders {input_dim}",
                    a.input_dim()
                )));
            }
            a.clone()
        }
        None => GatedActor::new(policy, input_dim, derive_seed(seed, &["rl", "actor"]))?,
    };
    let mut critic = Critic::new(policy, input_dim, derive_seed(seed, &["rl", "critic"]))?;
    if let (true, Some(a)) = (cfg.critic_from_pretrained, pretrained) {
        critic.trunk = a.trunk.clone();
        critic.speed = a.speed.clone();
    }
    let mut ddpg = Ddpg::with_actor_optimizer(actor, critic, cfg.actor_optimizer);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity)?;
    if cfg.demo_replay {
        let ds = demos.ok_or_else(|| CirlError::Config("rl.demo_replay needs a demonstration dataset".into()))?;
        replay.protect(demo_transitions(ds, reward))?;
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["rl", "noise"]));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["rl", "batch"]));
    let mut ou = OUProcess::new(cfg.ou.clone());
    let regimes = cfg.regime_group.regimes();
    let mut env = cirl_sim::Env::new(map.clone(), sim.clone());
    let mut metrics = Vec::new();
    let mut t = 0;
    let mut episode = 0;
    while t < cfg.total_steps {
        let task = cfg.tasks[episode % cfg.tasks.len()];
        let regime = regimes[(episode / cfg.tasks.len()) % regimes.len()].clone();
        let spec = sample_episode(&map, task, derive_seed(seed, &["rl", "episode", &episode.to_string()]), regime, sim)?;
        let mut obs = Arc::new(env.reset(&spec)?);
        ou.reset();
        let mut row = EpisodeMetrics {
            step: 0,
            episode,
            episode_return: 0.0,
            success: false,
            r_s: 0.0,
            r_v: 0.0,
            r_r: 0.0,
            r_o: 0.0,
            r_d: 0.0,
            critic_loss: 0.0,
            actor_grad_norm: 0.0,
        };
        let mut updates = 0usize;
        loop {
            let decay = cfg.decay(t);
            let greedy = ddpg.actor.act(&obs)?;
            let action = explore(greedy, ou.sample(decay, &mut noise_rng));
            let out = env.step(action)?;
            let r = total_reward(&out.measurements, obs.command, &action, reward);
            row.episode_return += r.total;
            row.r_s += r.steer;
            row.r_v += r.speed;
            row.r_r += r.sidewalk;
            row.r_o += r.opposite;
            row.r_d += r.damage;
            let next = Arc::new(out.observation);
            let terminal = matches!(out.status, EpisodeStatus::GoalReached | EpisodeStatus::Collision);
            replay.push(Transition { obs, action, reward: r.total, next_obs: next.clone(), terminal });
            obs = next;
            t += 1;
            if t > cfg.warmup_steps && replay.len() >= cfg.batch_size {
                let sample = replay.sample(cfg.batch_size, &mut batch_rng);
                let batch = TransitionBatch::new(&sample, policy.speed_scale_kmh)?;
                if let Some(loss) = ddpg.critic_update(&batch, cfg.gamma, cfg.critic_lr * decay)? {
                    row.critic_loss += loss;
                }
                if t > cfg.warmup_steps + cfg.actor_delay_steps {
                    let lr = cfg.actor_lr * decay;
                    row.actor_grad_norm += ddpg.actor_update_with_trunk_lr(&batch.obs, lr, lr * cfg.trunk_lr_scale)?;
                }
                ddpg.soft_update_targets(cfg.tau)?;
                updates += 1;
            }
            if out.status.is_terminal() || t >= cfg.total_steps {
                row.success = out.status == EpisodeStatus::GoalReached;
                break;
            }
        }
        row.step = t;
        if updates > 0 {
            row.critic_loss /= updates as f64;
            row.actor_grad_norm /= updates as f64;
        }
        if episode % 50 == 0 {
            info!("rl episode {episode} step {t}: return {:.1} success {}", row.episode_return, row.success);
        }
        metrics.push(row);
        episode += 1;
    }
    Ok(RLOutcome { ddpg, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (RLConfig, SimConfig, PolicyConfig) {
        let mut sim = SimConfig::default();
        sim.raster.height = 6;
        sim.raster.width = 6;
        let policy = PolicyConfig { trunk_widths: vec![8], speed_width: 4, branch_width: 4, critic_width: 4, ..Default::default() };
        let cfg = RLConfig { total_steps: 400, warmup_steps: 50, batch_size: 8, replay_capacity: 300, ..Default::default() };
        (cfg, sim, policy)
    }

    #[test]
    fn zero_steps_returns_pretrained_actor() {
        let (mut cfg, sim, policy) = small();
        cfg.total_steps = 0;
        let pre = GatedActor::new(&policy, sim.raster.cells(), 5).unwrap();
        let out = train_rl(&cfg, &sim, &RewardConfig::default(), &policy, Some(&pre), None, 1).unwrap();
        assert_eq!(out.ddpg.actor, pre);
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn runs_are_deterministic() {
        let (cfg, sim, policy) = small();
        let run = || train_rl(&cfg, &sim, &RewardConfig::default(), &policy, None, None, 9).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.ddpg.actor, b.ddpg.actor);
        assert_eq!(a.ddpg.critic, b.ddpg.critic);
        assert_eq!(a.metrics.last().unwrap().step, cfg.total_steps);
    }

    #[test]
    fn mismatched_pretrained_actor_rejected() {
        let (cfg, sim, policy) = small();
        let pre = GatedActor::new(&policy, 10, 5).unwrap();
        let err = train_rl(&cfg, &sim, &RewardConfig::default(), &policy, Some(&pre), None, 1).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn demo_replay_needs_demos() {
        let (mut cfg, sim, policy) = small();
        cfg.demo_replay = true;
        let err = train_rl(&cfg, &sim, &RewardConfig::default(), &policy, None, None, 1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn learning_rates_decay_to_zero() {
        let cfg = RLConfig { total_steps: 100, ..Default::default() };
        assert_eq!(cfg.decay(0), 1.0);
        assert_eq!(cfg.decay(50), 0.5);
        assert_eq!(cfg.decay(100), 0.0);
    }
}
