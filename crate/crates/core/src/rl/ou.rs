//! Ornstein-Uhlenbeck exploration noise over (steer, throttle, brake).

use cirl_sim::ActionTriple;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CirlError, Result};

/// How the brake channel is explored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrakeNoise {
    /// Brake noise is pinned at zero.
    Zero,
    /// Brake state starts at zero and reverts toward its mean.
    RevertToMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OUConfig {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    pub theta: f64,
    pub brake: BrakeNoise,
}

impl Default for OUConfig {
    fn default() -> Self {
        Self { mu: [0.0, 0.15, 0.5], sigma: [0.02, 0.05, 0.0], theta: 0.15, brake: BrakeNoise::Zero }
    }
}

impl OUConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(CirlError::Config("rl.ou.sigma must be >= 0".into()));
        }
        if !(self.theta >= 0.0 && self.theta <= 1.0) || self.mu.iter().any(|m| !m.is_finite()) {
            return Err(CirlError::Config("rl.ou.theta must be in [0, 1] and mu finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OUProcess {
    pub cfg: OUConfig,
    pub state: [f64; 3],
}

impl OUProcess {
    pub fn new(cfg: OUConfig) -> Self {
        let mut p = Self { cfg, state: [0.0; 3] };
        p.reset();
        p
    }

    /// Episode start: steer and throttle at their means, brake at zero.
    pub fn reset(&mut self) {
        self.state = [self.cfg.mu[0], self.cfg.mu[1], 0.0];
    }

    /// One step of `x += theta·(mu − x) + sigma·N(0,1)` per channel, with
    /// sigma multiplied by `sigma_scale`.
    pub fn sample<R: Rng + ?Sized>(&mut self, sigma_scale: f64, rng: &mut R) -> [f64; 3] {
        for k in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            self.state[k] += self.cfg.theta * (self.cfg.mu[k] - self.state[k]) + self.cfg.sigma[k] * sigma_scale * z;
        }
        if self.cfg.brake == BrakeNoise::Zero {
            self.state[2] = 0.0;
        }
        self.state
    }
}

/// Greedy action plus noise, clipped to the action bounds.
pub fn explore(greedy: ActionTriple, noise: [f64; 3]) -> ActionTriple {
    let g = greedy.to_array();
    ActionTriple::from_array([g[0] + noise[0], g[1] + noise[1], g[2] + noise[2]]).clipped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_from_mean_stays_at_mean() {
        let cfg = OUConfig { sigma: [0.0; 3], brake: BrakeNoise::RevertToMean, ..Default::default() };
        let mut p = OUProcess::new(cfg);
        p.state = p.cfg.mu;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(p.sample(1.0, &mut rng), [0.0, 0.15, 0.5]);
        }
    }

    #[test]
    fn full_reversion_in_one_step() {
        let cfg = OUConfig { theta: 1.0, sigma: [0.0; 3], brake: BrakeNoise::RevertToMean, ..Default::default() };
        let mut p = OUProcess::new(cfg);
        p.state = [0.7, -0.3, 0.9];
        let out = p.sample(1.0, &mut ChaCha8Rng::seed_from_u64(0));
        for (o, m) in out.iter().zip([0.0, 0.15, 0.5]) {
            assert!((o - m).abs() < 1e-15);
        }
    }

    #[test]
    fn brake_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut zero = OUProcess::new(OUConfig::default());
        for _ in 0..50 {
            assert_eq!(zero.sample(1.0, &mut rng)[2], 0.0);
        }
        let mut revert = OUProcess::new(OUConfig { brake: BrakeNoise::RevertToMean, ..Default::default() });
        assert_eq!(revert.state[2], 0.0);
        let first = revert.sample(1.0, &mut rng)[2];
        assert!((first - 0.15 * 0.5).abs() < 1e-12);
        for _ in 0..200 {
            revert.sample(1.0, &mut rng);
        }
        assert!((revert.state[2] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_keeps_greedy_and_clipping_binds() {
        let g = ActionTriple::new(0.3, 0.4, 0.1);
        assert_eq!(explore(g, [0.0; 3]), g);
        assert_eq!(explore(ActionTriple::new(0.99, 0.5, 0.0), [0.05, 0.0, 0.0]).steer, 1.0);
        let b = explore(ActionTriple::new(0.0, 0.2, 0.1), [0.0, 0.15, 0.5]);
        assert!((b.brake - 0.6).abs() < 1e-12 && (b.throttle - 0.35).abs() < 1e-12);
    }

    #[test]
    fn long_run_means_match_mu() {
        let mut p = OUProcess::new(OUConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let x = p.sample(1.0, &mut rng);
            sum[0] += x[0];
            sum[1] += x[1];
        }
        assert!((sum[0] / n as f64).abs() < 0.01);
        assert!((sum[1] / n as f64 - 0.15).abs() < 0.01);
    }
}
