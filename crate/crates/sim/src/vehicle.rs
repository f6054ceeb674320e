use serde::{Deserialize, Serialize};

use crate::config::VehicleParams;
use crate::error::{Result, SimError};
use crate::geometry::{normalize_angle, Polygon, Vec2};

/// Sign of the steer value that turns the vehicle to the right (clockwise).
/// Reward and expert code take the sign convention from here.
pub const STEER_RIGHT_SIGN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Command {
    Follow,
    Straight,
    TurnLeft,
    TurnRight,
}

impl Command {
    pub const ALL: [Command; 4] = [Command::Follow, Command::Straight, Command::TurnLeft, Command::TurnRight];

    /// Position in the fixed `[Follow, Straight, TurnLeft, TurnRight]` order.
    pub fn index(self) -> usize {
        match self {
            Command::Follow => 0,
            Command::Straight => 1,
            Command::TurnLeft => 2,
            Command::TurnRight => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Command> {
        Self::ALL.get(i).copied()
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Command::TurnLeft | Command::TurnRight)
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Follow => "follow",
            Command::Straight => "straight",
            Command::TurnLeft => "left",
            Command::TurnRight => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionTriple {
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl ActionTriple {
    pub const fn new(steer: f64, throttle: f64, brake: f64) -> Self {
        Self { steer, throttle, brake }
    }

    pub fn clipped(self) -> Self {
        Self {
            steer: self.steer.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(0.0, 1.0),
            brake: self.brake.clamp(0.0, 1.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.steer.is_finite() && self.throttle.is_finite() && self.brake.is_finite()
    }

    pub fn in_bounds(&self) -> bool {
        (-1.0..=1.0).contains(&self.steer)
            && (0.0..=1.0).contains(&self.throttle)
            && (0.0..=1.0).contains(&self.brake)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.steer, self.throttle, self.brake]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    fn check(&self) -> Result<()> {
        for (v, name) in [(self.steer, "steer"), (self.throttle, "throttle"), (self.brake, "brake")] {
            if !v.is_finite() {
                return Err(SimError::NonFiniteAction(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pos: Vec2,
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl VehicleState {
    pub fn new(pos: Vec2, heading: f64, speed: f64, params: &VehicleParams) -> Self {
        Self {
            pos,
            heading: normalize_angle(heading),
            speed,
            half_length: params.length / 2.0,
            half_width: params.width / 2.0,
        }
    }

    pub fn forward(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }

    pub fn footprint(&self) -> Polygon {
        Polygon::oriented_rect(self.pos, self.heading, self.half_length, self.half_width)
    }

    pub fn front_center(&self) -> Vec2 {
        self.pos + self.forward() * self.half_length
    }

    pub fn speed_kmh(&self) -> f64 {
        self.speed * 3.6
    }

    /// Transforms a world point into the vehicle frame: `x` forward, `y` to the right.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let f = self.forward();
        let d = p - self.pos;
        Vec2::new(d.dot(f), d.dot(f.right()))
    }

    pub fn to_world(&self, local: Vec2) -> Vec2 {
        let f = self.forward();
        self.pos + f * local.x + f.right() * local.y
    }
}

/// Kinematic bicycle step. The position advances along the exact arc swept at
/// the pre-step speed and steering, then the speed is updated and clipped.
pub fn step_dynamics(
    state: &VehicleState,
    action: ActionTriple,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState> {
    action.check()?;
    let a = action.clipped();
    let delta = a.steer * STEER_RIGHT_SIGN * params.max_steer();
    let v = state.speed;
    let yaw_rate = -(v / params.wheelbase) * delta.tan();
    let th = state.heading;
    let dtheta = yaw_rate * dt;
    let pos = if dtheta.abs() < 1e-12 {
        state.pos + Vec2::from_angle(th) * (v * dt)
    } else {
        let r = v / yaw_rate;
        state.pos + Vec2::new((th + dtheta).sin() - th.sin(), th.cos() - (th + dtheta).cos()) * r
    };
    let accel = params.max_accel * a.throttle - params.max_brake * a.brake - params.drag * v;
    let speed = (v + accel * dt).clamp(0.0, params.max_speed);
    Ok(VehicleState {
        pos,
        heading: normalize_angle(th + dtheta),
        speed,
        ..*state
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn rest_without_input_is_fixed_point() {
        let s = VehicleState::new(Vec2::new(3.0, -2.0), 0.7, 0.0, &params());
        let n = step_dynamics(&s, ActionTriple::default(), 0.1, &params()).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn straight_line_advance() {
        let s = VehicleState::new(Vec2::default(), 0.0, 10.0, &params());
        let n = step_dynamics(&s, ActionTriple::default(), 0.1, &params()).unwrap();
        assert!((n.pos.x - 1.0).abs() < 1e-12);
        assert_eq!(n.pos.y, 0.0);
        assert_eq!(n.heading, 0.0);
        assert!((n.speed - (10.0 - 0.05 * 10.0 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn full_right_lock_closes_circle() {
        let p = params();
        let radius = p.wheelbase / p.max_steer().tan();
        // Throttle balancing drag holds the speed at 5 m/s.
        let v = 5.0;
        let throttle = p.drag * v / p.max_accel;
        let mut s = VehicleState::new(Vec2::default(), 0.0, v, &p);
        let center = Vec2::new(0.0, -radius);
        let period = 2.0 * PI * radius / v;
        let steps = (period / 0.1).round() as usize;
        for _ in 0..steps {
            s = step_dynamics(&s, ActionTriple::new(1.0, throttle, 0.0), 0.1, &p).unwrap();
            assert!((s.pos.dist(center) - radius).abs() < 0.01 * radius);
        }
        assert!(s.pos.norm() < 0.01 * 2.0 * PI * radius);
    }

    #[test]
    fn positive_steer_turns_right() {
        let p = params();
        let s = VehicleState::new(Vec2::default(), 0.0, 5.0, &p);
        let n = step_dynamics(&s, ActionTriple::new(0.5, 0.0, 0.0), 0.1, &p).unwrap();
        assert!(n.heading < 0.0);
        assert!(n.pos.y < 0.0);
    }

    #[test]
    fn nan_rejected() {
        let s = VehicleState::new(Vec2::default(), 0.0, 5.0, &params());
        let err = step_dynamics(&s, ActionTriple::new(f64::NAN, 0.0, 0.0), 0.1, &params());
        assert!(matches!(err, Err(SimError::NonFiniteAction("steer"))));
    }

    #[test]
    fn command_order() {
        for (i, c) in Command::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(Command::from_index(i), Some(*c));
        }
    }
}
