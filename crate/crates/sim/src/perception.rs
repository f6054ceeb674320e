//! Egocentric occupancy raster and observation perturbations.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agents::DynamicObstacle;
use crate::config::RasterConfig;
use crate::error::{Result, SimError};
use crate::geometry::{point_segment_distance, Aabb, Vec2};
use crate::map::{Ground, TownMap};
use crate::route::Route;
use crate::vehicle::{Command, VehicleState};

/// Cell intensity codes.
pub mod codes {
    pub const OFF: f64 = 0.0;
    pub const SIDEWALK: f64 = 0.25;
    pub const OPPOSITE_LANE: f64 = 0.45;
    pub const DRIVABLE: f64 = 0.65;
    pub const ROUTE: f64 = 0.85;
    pub const OBSTACLE: f64 = 1.0;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Row-major, row 0 farthest ahead, column 0 leftmost.
    pub raster: Vec<f32>,
    pub height: usize,
    pub width: usize,
    /// m/s.
    pub speed: f64,
    pub command: Command,
}

impl Observation {
    pub fn speed_kmh(&self) -> f64 {
        self.speed * 3.6
    }

    pub fn cell(&self, row: usize, col: usize) -> f32 {
        self.raster[row * self.width + col]
    }
}

/// Parametric corruption applied to a rendered raster: intensity rescale,
/// additive Gaussian noise, then cell dropout, then clamping to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationRegime {
    pub name: String,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "one")]
    pub intensity: f64,
    /// Mixed into the per-episode perturbation stream.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for PerturbationRegime {
    fn default() -> Self {
        Self::none()
    }
}

impl PerturbationRegime {
    pub fn none() -> Self {
        Self { name: "none".into(), noise_sigma: 0.0, dropout: 0.0, intensity: 1.0, seed: 0 }
    }

    pub fn noise(sigma: f64) -> Self {
        Self { name: format!("noise-{sigma}"), noise_sigma: sigma, ..Self::none() }
    }

    pub fn dropout(p: f64) -> Self {
        Self { name: format!("dropout-{p}"), dropout: p, ..Self::none() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.noise_sigma >= 0.0
            && (0.0..=1.0).contains(&self.dropout)
            && self.intensity >= 0.0
            && self.noise_sigma.is_finite()
            && self.intensity.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidSpec(format!("bad perturbation regime {self:?}")))
        }
    }

    pub fn is_identity(&self) -> bool {
        self.noise_sigma == 0.0 && self.dropout == 0.0 && self.intensity == 1.0
    }

    pub fn apply<R: Rng + ?Sized>(&self, raster: &mut [f32], rng: &mut R) {
        if self.is_identity() {
            return;
        }
        for v in raster.iter_mut() {
            let mut x = *v as f64 * self.intensity;
            if self.noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                x += self.noise_sigma * z;
            }
            if self.dropout > 0.0 && rng.random::<f64>() < self.dropout {
                x = 0.0;
            }
            *v = x.clamp(0.0, 1.0) as f32;
        }
    }
}

struct Corridor {
    segments: Vec<(Vec2, Vec2, Aabb)>,
    half_width: f64,
}

impl Corridor {
    fn new(route: &Route, from_segment: usize, cfg: &RasterConfig) -> Self {
        let pts = &route.waypoints.points;
        let arcs = &route.waypoints.arc;
        let first = from_segment.min(pts.len().saturating_sub(2));
        let limit = arcs[first] + cfg.corridor_lookahead;
        let mut segments = Vec::new();
        for i in first..pts.len().saturating_sub(1) {
            if arcs[i] > limit {
                break;
            }
            let bb = Aabb::of_points(&[pts[i], pts[i + 1]]).inflate(cfg.corridor_half_width);
            segments.push((pts[i], pts[i + 1], bb));
        }
        Self { segments, half_width: cfg.corridor_half_width }
    }

    fn contains(&self, p: Vec2) -> bool {
        self.segments
            .iter()
            .any(|(a, b, bb)| bb.contains(p) && point_segment_distance(p, *a, *b) <= self.half_width)
    }
}

/// Renders the noise-free raster in the vehicle frame. `progress_segment` is
/// the route segment the vehicle currently projects onto.
pub fn render_raster(
    map: &TownMap,
    vehicle: &VehicleState,
    route: &Route,
    progress_segment: usize,
    obstacles: &[DynamicObstacle],
    cfg: &RasterConfig,
) -> Vec<f32> {
    let (h, w, ss) = (cfg.height, cfg.width, cfg.supersample.max(1));
    let corridor = Corridor::new(route, progress_segment, cfg);
    let reach = cfg.forward_m.hypot(cfg.lateral_m / 2.0);
    let near: Vec<&DynamicObstacle> = obstacles
        .iter()
        .filter(|o| o.center().dist(vehicle.pos) <= reach + o.extent())
        .collect();
    let fwd = vehicle.forward();
    let right = fwd.right();
    let cell_f = cfg.forward_m / h as f64;
    let cell_l = cfg.lateral_m / w as f64;
    let inv = 1.0 / (ss * ss) as f64;
    let mut out = vec![0f32; h * w];
    for r in 0..h {
        let f0 = cfg.forward_m - (r + 1) as f64 * cell_f;
        for c in 0..w {
            let l0 = -cfg.lateral_m / 2.0 + c as f64 * cell_l;
            let mut acc = 0.0;
            for i in 0..ss {
                for j in 0..ss {
                    let f = f0 + (i as f64 + 0.5) * cell_f / ss as f64;
                    let l = l0 + (j as f64 + 0.5) * cell_l / ss as f64;
                    let p = vehicle.pos + fwd * f + right * l;
                    acc += sample_code(map, vehicle, &corridor, &near, p);
                }
            }
            out[r * w + c] = (acc * inv) as f32;
        }
    }
    out
}

fn sample_code(
    map: &TownMap,
    vehicle: &VehicleState,
    corridor: &Corridor,
    near: &[&DynamicObstacle],
    p: Vec2,
) -> f64 {
    if near.iter().any(|o| o.contains(p)) {
        return codes::OBSTACLE;
    }
    let ground = map.ground_at(p);
    if ground == Ground::Obstacle {
        return codes::OBSTACLE;
    }
    if corridor.contains(p) {
        return codes::ROUTE;
    }
    match ground {
        Ground::Off | Ground::Obstacle => codes::OFF,
        Ground::Sidewalk => codes::SIDEWALK,
        Ground::Junction => codes::DRIVABLE,
        Ground::Lane(q) => {
            if map.quads[q].dir.dot(vehicle.forward()) < 0.0 {
                codes::OPPOSITE_LANE
            } else {
                codes::DRIVABLE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::map::{bundled_map, LanePos};
    use crate::route::plan_route;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (TownMap, VehicleState, Route, SimConfig) {
        let cfg = SimConfig::default();
        let map = bundled_map("town-a").unwrap();
        // Lane 1 runs west along the first road; start at its east end.
        let lane = 1;
        let start = LanePos::new(lane, map.lanes[lane].entry_s + 1.0);
        let goal = LanePos::new(lane, map.lanes[lane].exit_s - 1.0);
        let route = plan_route(&map, start, goal, &cfg).unwrap();
        let (p, h) = map.lane_pose(start);
        let v = VehicleState::new(p, h, 0.0, &cfg.vehicle);
        (map, v, route, cfg)
    }

    #[test]
    fn centered_vehicle_sees_route_in_center_columns() {
        let (map, v, route, cfg) = setup();
        let raster = render_raster(&map, &v, &route, 0, &[], &cfg.raster);
        let w = cfg.raster.width;
        // Near rows, within the lane interior ahead: center columns carry the
        // route code, the band left of them is the opposite lane.
        for r in 20..32 {
            for c in [15, 16] {
                assert_eq!(raster[r * w + c], codes::ROUTE as f32, "row {r} col {c}");
            }
            assert_eq!(raster[r * w + 12], codes::OPPOSITE_LANE as f32, "row {r}");
            assert_eq!(raster[r * w + 19], codes::SIDEWALK as f32, "row {r}");
            assert_eq!(raster[r * w + 23], codes::OBSTACLE as f32, "row {r}");
        }
    }

    #[test]
    fn zero_noise_equals_none() {
        let (map, v, route, cfg) = setup();
        let base = render_raster(&map, &v, &route, 0, &[], &cfg.raster);
        let mut a = base.clone();
        let mut b = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        PerturbationRegime::none().apply(&mut a, &mut rng);
        PerturbationRegime::noise(0.0).apply(&mut b, &mut rng);
        assert_eq!(a, base);
        assert_eq!(b, base);
    }

    #[test]
    fn perturbation_stays_in_unit_interval() {
        let (map, v, route, cfg) = setup();
        let mut r = render_raster(&map, &v, &route, 0, &[], &cfg.raster);
        let regime = PerturbationRegime { name: "x".into(), noise_sigma: 0.5, dropout: 0.2, intensity: 1.7, seed: 0 };
        regime.apply(&mut r, &mut ChaCha8Rng::seed_from_u64(9));
        assert!(r.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
