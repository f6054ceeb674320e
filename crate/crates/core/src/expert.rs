//! Scripted demonstrator: pure-pursuit steering and proportional speed
//! control toward a command-dependent target speed.

use cirl_sim::config::VehicleParams;
use cirl_sim::{ActionTriple, Command, DynamicObstacle, Env, Route, VehicleState, STEER_RIGHT_SIGN};
use serde::{Deserialize, Serialize};

use crate::error::{CirlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub lookahead_min: f64,
    /// Lookahead seconds: lookahead = max(lookahead_min, gain · speed).
    pub lookahead_gain: f64,
    pub follow_kmh: f64,
    pub straight_kmh: f64,
    pub turn_kmh: f64,
    /// Throttle per m/s of speed shortfall.
    pub speed_gain: f64,
    /// Brake per m/s of excess speed.
    pub brake_gain: f64,
    /// Excess speed (m/s) tolerated before braking.
    pub brake_margin: f64,
    /// Obstacles this close ahead of the bumper in the route corridor force a full stop.
    pub block_distance: f64,
    pub corridor_half_width: f64,
    /// Further than this from the route, the expert gives up.
    pub max_deviation: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            lookahead_min: 4.0,
            lookahead_gain: 0.8,
            follow_kmh: 25.0,
            straight_kmh: 30.0,
            turn_kmh: 15.0,
            speed_gain: 0.5,
            brake_gain: 0.25,
            brake_margin: 0.5,
            block_distance: 8.0,
            corridor_half_width: 1.75,
            max_deviation: 10.0,
        }
    }
}

impl ExpertConfig {
    pub fn target_kmh(&self, command: Command) -> f64 {
        match command {
            Command::Follow => self.follow_kmh,
            Command::Straight => self.straight_kmh,
            Command::TurnLeft | Command::TurnRight => self.turn_kmh,
        }
    }
}

const SEARCH_BACK: usize = 3;
const SEARCH_AHEAD: usize = 15;

/// Expert action for the current state. `segment_hint` is a route segment
/// near the vehicle; the search for the closest route point starts there.
pub fn expert_action(
    vehicle: &VehicleState,
    route: &Route,
    segment_hint: usize,
    obstacles: &[DynamicObstacle],
    cfg: &ExpertConfig,
    params: &VehicleParams,
) -> Result<ActionTriple> {
    let from = segment_hint.saturating_sub(SEARCH_BACK);
    let (_, arc, deviation) = route.project(vehicle.pos, from, SEARCH_BACK + SEARCH_AHEAD);
    if deviation > cfg.max_deviation {
        return Err(CirlError::ExpertAbort { deviation });
    }
    let path = &route.waypoints;

    let lookahead = cfg.lookahead_min.max(cfg.lookahead_gain * vehicle.speed);
    let target = path.point_at(arc + lookahead);
    let local = vehicle.to_local(target);
    let ld = local.norm().max(1e-6);
    // Pure pursuit: curvature 2·sin(alpha)/ld, alpha measured to the right.
    let sin_alpha = local.y / ld;
    let delta = (2.0 * params.wheelbase * sin_alpha / ld).atan();
    let steer = (delta / params.max_steer() * STEER_RIGHT_SIGN).clamp(-1.0, 1.0);

    let command = route.command_at_arc(arc);
    let target_speed = cfg.target_kmh(command) / 3.6;
    let err = target_speed - vehicle.speed;
    let feedforward = params.drag * vehicle.speed / params.max_accel;
    let (mut throttle, mut brake) = if err < -cfg.brake_margin {
        (0.0, (-cfg.brake_gain * err).clamp(0.0, 1.0))
    } else {
        ((feedforward + cfg.speed_gain * err).clamp(0.0, 1.0), 0.0)
    };

    if blocked(vehicle, route, arc, obstacles, cfg) {
        throttle = 0.0;
        brake = 1.0;
    }
    Ok(ActionTriple::new(steer, throttle, brake))
}

fn blocked(vehicle: &VehicleState, route: &Route, arc: f64, obstacles: &[DynamicObstacle], cfg: &ExpertConfig) -> bool {
    let reach = vehicle.half_length + cfg.block_distance;
    let near: Vec<&DynamicObstacle> = obstacles
        .iter()
        .filter(|o| o.center().dist(vehicle.pos) <= reach + o.extent() + cfg.corridor_half_width)
        .collect();
    if near.is_empty() {
        return false;
    }
    let path = &route.waypoints;
    let step = 0.5;
    let n = (reach / step).ceil() as usize;
    (0..=n).any(|k| {
        let p = path.point_at(arc + k as f64 * step);
        near.iter().any(|o| obstacle_distance(o, p) <= cfg.corridor_half_width)
    })
}

fn obstacle_distance(o: &DynamicObstacle, p: cirl_sim::geometry::Vec2) -> f64 {
    match *o {
        DynamicObstacle::Pedestrian { center, radius } => (center.dist(p) - radius).max(0.0),
        DynamicObstacle::Vehicle { footprint_center, heading, half_length, half_width } => {
            cirl_sim::geometry::Polygon::oriented_rect(footprint_center, heading, half_length, half_width)
                .distance_to_point(p)
        }
    }
}

/// Expert action in a live environment.
pub fn expert_for_env(env: &Env, cfg: &ExpertConfig) -> Result<ActionTriple> {
    let obstacles = env.obstacles()?;
    expert_action(
        env.vehicle()?,
        env.route()?,
        env.route_segment()?,
        &obstacles,
        cfg,
        &env.config().vehicle,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use cirl_sim::geometry::Vec2;
    use cirl_sim::map::{bundled_map, LanePos};
    use cirl_sim::{plan_route, SimConfig};

    fn straight_route() -> (Route, SimConfig) {
        let cfg = SimConfig::default();
        let map = bundled_map("town-a").unwrap();
        let route = plan_route(&map, LanePos::new(0, 10.0), LanePos::new(0, 50.0), &cfg).unwrap();
        (route, cfg)
    }

    #[test]
    fn aligned_at_target_speed() {
        let (route, sim) = straight_route();
        let e = ExpertConfig::default();
        let v = VehicleState::new(Vec2::new(20.0, -1.75), 0.0, 25.0 / 3.6, &sim.vehicle);
        let a = expert_action(&v, &route, 0, &[], &e, &sim.vehicle).unwrap();
        assert!(a.steer.abs() < 0.02);
        let drag_comp = sim.vehicle.drag * v.speed / sim.vehicle.max_accel;
        assert!((a.throttle - drag_comp).abs() < 1e-9);
        assert_eq!(a.brake, 0.0);
    }

    #[test]
    fn offset_right_steers_left() {
        let (route, sim) = straight_route();
        let v = VehicleState::new(Vec2::new(20.0, -2.75), 0.0, 5.0, &sim.vehicle);
        let a = expert_action(&v, &route, 0, &[], &ExpertConfig::default(), &sim.vehicle).unwrap();
        assert!(a.steer * STEER_RIGHT_SIGN < 0.0, "{}", a.steer);
    }

    #[test]
    fn pedestrian_ahead_brakes() {
        let (route, sim) = straight_route();
        let v = VehicleState::new(Vec2::new(20.0, -1.75), 0.0, 5.0, &sim.vehicle);
        let ped = DynamicObstacle::Pedestrian { center: Vec2::new(27.0, -1.75), radius: 0.35 };
        let a = expert_action(&v, &route, 0, &[ped], &ExpertConfig::default(), &sim.vehicle).unwrap();
        assert_eq!(a.brake, 1.0);
        assert_eq!(a.throttle, 0.0);
        // On the sidewalk beside the lane it is ignored.
        let side = DynamicObstacle::Pedestrian { center: Vec2::new(27.0, -5.25), radius: 0.35 };
        let a = expert_action(&v, &route, 0, &[side], &ExpertConfig::default(), &sim.vehicle).unwrap();
        assert_eq!(a.brake, 0.0);
    }

    #[test]
    fn far_off_route_aborts() {
        let (route, sim) = straight_route();
        let v = VehicleState::new(Vec2::new(20.0, 15.0), 0.0, 5.0, &sim.vehicle);
        let err = expert_action(&v, &route, 0, &[], &ExpertConfig::default(), &sim.vehicle);
        assert!(matches!(err, Err(CirlError::ExpertAbort { .. })));
    }
}
