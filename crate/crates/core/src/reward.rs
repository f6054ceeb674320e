//! Command-conditioned reward: steer, speed, sidewalk, opposite lane and
//! collision terms, summed and scaled.

use cirl_sim::{ActionTriple, CollisionKind, Command, Measurements, STEER_RIGHT_SIGN};
use serde::{Deserialize, Serialize};

use crate::error::{CirlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub steer_opposite_penalty: f64,
    pub steer_straight_penalty: f64,
    pub straight_steer_threshold: f64,
    /// Steer magnitude below which no turn direction is read from it.
    pub steer_dead_band: f64,
    pub sidewalk_penalty: f64,
    pub opposite_penalty: f64,
    pub collision_vp_penalty: f64,
    pub collision_other_penalty: f64,
    /// Overlap fraction above which the sidewalk and opposite-lane terms fire.
    pub overlap_trigger: f64,
    pub scale: f64,
    pub enable_steer: bool,
    pub enable_speed: bool,
    pub enable_offroad_collision: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            steer_opposite_penalty: -15.0,
            steer_straight_penalty: -20.0,
            straight_steer_threshold: 0.2,
            steer_dead_band: 0.05,
            sidewalk_penalty: -100.0,
            opposite_penalty: -100.0,
            collision_vp_penalty: -100.0,
            collision_other_penalty: -50.0,
            overlap_trigger: 0.0,
            scale: 1.0,
            enable_steer: true,
            enable_speed: true,
            enable_offroad_collision: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(CirlError::Config(format!("reward scale must be positive, got {}", self.scale)));
        }
        let penalties = [
            ("steer_opposite_penalty", self.steer_opposite_penalty),
            ("steer_straight_penalty", self.steer_straight_penalty),
            ("sidewalk_penalty", self.sidewalk_penalty),
            ("opposite_penalty", self.opposite_penalty),
            ("collision_vp_penalty", self.collision_vp_penalty),
            ("collision_other_penalty", self.collision_other_penalty),
        ];
        for (name, v) in penalties {
            if v > 0.0 || !v.is_finite() {
                return Err(CirlError::Config(format!("{name} must be a finite value <= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.overlap_trigger) {
            return Err(CirlError::Config("overlap_trigger must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub steer: f64,
    pub speed: f64,
    pub sidewalk: f64,
    pub opposite: f64,
    pub damage: f64,
    pub total: f64,
}

pub fn steer_reward(command: Command, steer: f64, cfg: &RewardConfig) -> f64 {
    let rightward = steer * STEER_RIGHT_SIGN;
    match command {
        Command::Follow => 0.0,
        Command::Straight if steer.abs() > cfg.straight_steer_threshold => cfg.steer_straight_penalty,
        Command::Straight => 0.0,
        Command::TurnLeft if rightward > cfg.steer_dead_band => cfg.steer_opposite_penalty,
        Command::TurnRight if rightward < -cfg.steer_dead_band => cfg.steer_opposite_penalty,
        Command::TurnLeft | Command::TurnRight => 0.0,
    }
}

/// Speed term on km/h.
pub fn speed_reward(command: Command, speed_kmh: f64) -> f64 {
    match command {
        Command::Follow => speed_kmh.min(25.0),
        Command::Straight => speed_kmh.min(35.0),
        Command::TurnLeft | Command::TurnRight => {
            if speed_kmh <= 20.0 {
                speed_kmh
            } else {
                40.0 - speed_kmh
            }
        }
    }
}

pub fn damage_reward(kind: CollisionKind, cfg: &RewardConfig) -> f64 {
    match kind {
        CollisionKind::None => 0.0,
        CollisionKind::VehicleOrPedestrian => cfg.collision_vp_penalty,
        CollisionKind::Other => cfg.collision_other_penalty,
    }
}

pub fn total_reward(m: &Measurements, command: Command, action: &ActionTriple, cfg: &RewardConfig) -> RewardBreakdown {
    let steer = if cfg.enable_steer { steer_reward(command, action.steer, cfg) } else { 0.0 };
    let speed = if cfg.enable_speed { speed_reward(command, m.speed_kmh) } else { 0.0 };
    let (sidewalk, opposite, damage) = if cfg.enable_offroad_collision {
        (
            if m.sidewalk_overlap > cfg.overlap_trigger { cfg.sidewalk_penalty } else { 0.0 },
            if m.opposite_overlap > cfg.overlap_trigger { cfg.opposite_penalty } else { 0.0 },
            damage_reward(m.collision_kind, cfg),
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    RewardBreakdown {
        steer,
        speed,
        sidewalk,
        opposite,
        damage,
        total: cfg.scale * (steer + speed + sidewalk + opposite + damage),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas(speed_kmh: f64) -> Measurements {
        Measurements { speed_kmh, ..Default::default() }
    }

    #[test]
    fn anchor_points() {
        let cfg = RewardConfig::default();
        assert_eq!(steer_reward(Command::Straight, 0.5, &cfg), -20.0);
        assert_eq!(steer_reward(Command::Follow, 0.9, &cfg), 0.0);
        assert_eq!(speed_reward(Command::Follow, 30.0), 25.0);
        assert_eq!(speed_reward(Command::TurnRight, 30.0), 10.0);
        assert_eq!(speed_reward(Command::Straight, 0.0), 0.0);
    }

    #[test]
    fn steer_sign_table() {
        let cfg = RewardConfig::default();
        let table = [
            (Command::TurnLeft, 0.3, -15.0),
            (Command::TurnLeft, -0.3, 0.0),
            (Command::TurnRight, 0.3, 0.0),
            (Command::TurnRight, -0.3, -15.0),
            (Command::TurnLeft, 0.04, 0.0),
            (Command::TurnRight, -0.04, 0.0),
            (Command::Straight, 0.2, 0.0),
            (Command::Straight, -0.21, -20.0),
        ];
        for (c, s, want) in table {
            assert_eq!(steer_reward(c, s, &cfg), want, "{c:?} {s}");
        }
    }

    #[test]
    fn clean_straight_drive() {
        let cfg = RewardConfig::default();
        let r = total_reward(&meas(35.0), Command::Straight, &ActionTriple::new(0.0, 0.5, 0.0), &cfg);
        assert_eq!(r.total, 35.0);
    }

    #[test]
    fn pedestrian_hit_while_turning() {
        let cfg = RewardConfig::default();
        let m = Measurements { collision_kind: CollisionKind::VehicleOrPedestrian, ..meas(10.0) };
        let steer_left = -STEER_RIGHT_SIGN * 0.4;
        let r = total_reward(&m, Command::TurnLeft, &ActionTriple::new(steer_left, 0.2, 0.0), &cfg);
        assert_eq!((r.damage, r.speed, r.total), (-100.0, 10.0, -90.0));
        let x10 = RewardConfig { scale: 10.0, ..cfg };
        let r10 = total_reward(&m, Command::TurnLeft, &ActionTriple::new(steer_left, 0.2, 0.0), &x10);
        assert_eq!(r10.total, 10.0 * r.total);
    }

    #[test]
    fn collision_kinds() {
        let cfg = RewardConfig::default();
        assert_eq!(damage_reward(CollisionKind::Other, &cfg), -50.0);
        assert_eq!(damage_reward(CollisionKind::None, &cfg), 0.0);
    }

    #[test]
    fn validation() {
        assert!(RewardConfig::default().validate().is_ok());
        assert!(RewardConfig { scale: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { sidewalk_penalty: 5.0, ..Default::default() }.validate().is_err());
    }
}
