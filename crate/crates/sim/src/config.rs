use serde::{Deserialize, Serialize};

/// Vehicle constants. Sedan-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steer_deg: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub drag: f64,
    pub max_speed: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.5,
            max_steer_deg: 35.0,
            max_accel: 3.0,
            max_brake: 8.0,
            drag: 0.05,
            max_speed: 15.0,
            length: 4.0,
            width: 1.8,
        }
    }
}

impl VehicleParams {
    pub fn max_steer(&self) -> f64 {
        self.max_steer_deg.to_radians()
    }

    pub fn min_turn_radius(&self) -> f64 {
        self.wheelbase / self.max_steer().tan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub height: usize,
    pub width: usize,
    /// Forward extent of the window ahead of the vehicle center, meters.
    pub forward_m: f64,
    /// Full lateral extent, centered on the vehicle, meters.
    pub lateral_m: f64,
    /// Samples per cell side; cell values are the sample mean.
    pub supersample: usize,
    /// Half-width of the rendered route corridor, meters.
    pub corridor_half_width: f64,
    /// How far ahead along the route the corridor is drawn, meters.
    pub corridor_lookahead: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            forward_m: 40.0,
            lateral_m: 40.0,
            supersample: 2,
            corridor_half_width: 1.75,
            corridor_lookahead: 45.0,
        }
    }
}

impl RasterConfig {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentParams {
    pub vehicle_speed: f64,
    /// NPC vehicles halt while the ego footprint is within this distance ahead.
    pub vehicle_stop_distance: f64,
    /// A vehicle held up this long, in seconds, is moved elsewhere on the map.
    pub vehicle_respawn_after: f64,
    pub pedestrian_speed: f64,
    pub pedestrian_radius: f64,
    /// Per-step probability that a walking pedestrian starts to cross.
    pub crossing_probability: f64,
    /// Pedestrians only start crossing when the ego is farther than this.
    pub crossing_clearance: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            vehicle_speed: 6.0,
            vehicle_stop_distance: 8.0,
            vehicle_respawn_after: 5.0,
            pedestrian_speed: 1.2,
            pedestrian_radius: 0.35,
            crossing_probability: 0.003,
            crossing_clearance: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    /// Minimum start-to-goal distance for straight episodes, meters.
    pub straight_min_length: f64,
    /// Keep starts and goals this far inside lane interiors, meters.
    pub lane_margin: f64,
    /// Longest navigation route accepted by the sampler, meters.
    pub navigation_max_length: f64,
    pub dynamic_vehicles: usize,
    pub dynamic_pedestrians: usize,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            straight_min_length: 25.0,
            lane_margin: 2.0,
            navigation_max_length: 320.0,
            dynamic_vehicles: 10,
            dynamic_pedestrians: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub vehicle: VehicleParams,
    /// Distance from the goal at which the episode succeeds, meters.
    pub goal_tolerance: f64,
    /// Length of the approach before a junction over which its command is shown, meters.
    pub approach_window: f64,
    /// Time budget speed: the optimal route driven at this speed, km/h.
    pub budget_speed_kmh: f64,
    /// Maximum spacing of route waypoints, meters.
    pub waypoint_spacing: f64,
    pub raster: RasterConfig,
    pub agents: AgentParams,
    pub tasks: TaskParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            vehicle: VehicleParams::default(),
            goal_tolerance: 2.0,
            approach_window: 25.0,
            budget_speed_kmh: 10.0,
            waypoint_spacing: 2.0,
            raster: RasterConfig::default(),
            agents: AgentParams::default(),
            tasks: TaskParams::default(),
        }
    }
}

impl SimConfig {
    /// Number of steps allowed for a route of the given optimal length.
    pub fn budget_steps(&self, optimal_length: f64) -> usize {
        let seconds = optimal_length / (self.budget_speed_kmh / 3.6);
        (seconds / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_hundred_meters_is_1800_steps() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.budget_steps(500.0), 1800);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = toml::from_str::<SimConfig>("dt = 0.1\nbogus = 3\n");
        assert!(err.is_err());
        let ok: SimConfig = toml::from_str("[vehicle]\nwheelbase = 3.0\n").unwrap();
        assert_eq!(ok.vehicle.wheelbase, 3.0);
        assert_eq!(ok.dt, 0.1);
    }
}
