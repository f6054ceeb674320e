//! Scripted dynamic obstacles: lane-following vehicles and sidewalk pedestrians.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::config::{AgentParams, VehicleParams};
use crate::geometry::{Polygon, Polyline, Vec2};
use crate::map::TownMap;
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Piece {
    Lane(usize),
    Connector(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpcVehicle {
    pub state: VehicleState,
    piece: Piece,
    s: f64,
    pub stopped: bool,
    stalled: u32,
}

impl NpcVehicle {
    fn path<'m>(&self, map: &'m TownMap) -> &'m Polyline {
        match self.piece {
            Piece::Lane(l) => &map.lanes[l].centerline,
            Piece::Connector(c) => &map.connectors[c].path,
        }
    }

    fn end_s(&self, map: &TownMap) -> f64 {
        match self.piece {
            Piece::Lane(l) => map.lanes[l].exit_s,
            Piece::Connector(c) => map.connectors[c].path.length(),
        }
    }

    fn sync_pose(&mut self, map: &TownMap) {
        let path = self.path(map);
        self.state.pos = path.point_at(self.s);
        self.state.heading = path.direction_at(self.s).angle();
    }

    /// Moves a vehicle that has been blocked too long to a random lane away from the ego.
    fn respawn<R: Rng + ?Sized>(&mut self, map: &TownMap, ego: &VehicleState, rng: &mut R) {
        for _ in 0..SPAWN_ATTEMPTS {
            let lane = rng.random_range(0..map.lanes.len());
            let l = &map.lanes[lane];
            let s = rng.random_range(l.entry_s..l.exit_s);
            if l.centerline.point_at(s).dist(ego.pos) < SPAWN_CLEARANCE {
                continue;
            }
            self.piece = Piece::Lane(lane);
            self.s = s;
            self.stopped = false;
            self.stalled = 0;
            self.sync_pose(map);
            return;
        }
    }

    /// Region ahead of the bumper that must be clear for the vehicle to move.
    pub fn probe(&self, distance: f64) -> Polygon {
        let f = self.state.forward();
        let center = self.state.front_center() + f * (distance / 2.0);
        Polygon::oriented_rect(center, self.state.heading, distance / 2.0, self.state.half_width + 0.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Walk {
    Along { lane: usize, s: f64, dir: f64 },
    Crossing { from: Vec2, to: Vec2, t: f64, lane: usize, waited: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pedestrian {
    pub pos: Vec2,
    pub radius: f64,
    walk: Walk,
}

impl Pedestrian {
    pub fn is_crossing(&self) -> bool {
        matches!(self.walk, Walk::Crossing { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DynamicObstacle {
    Vehicle { footprint_center: Vec2, heading: f64, half_length: f64, half_width: f64 },
    Pedestrian { center: Vec2, radius: f64 },
}

impl DynamicObstacle {
    pub fn center(&self) -> Vec2 {
        match *self {
            DynamicObstacle::Vehicle { footprint_center, .. } => footprint_center,
            DynamicObstacle::Pedestrian { center, .. } => center,
        }
    }

    /// Distance from the center to the farthest boundary point.
    pub fn extent(&self) -> f64 {
        match *self {
            DynamicObstacle::Vehicle { half_length, half_width, .. } => half_length.hypot(half_width),
            DynamicObstacle::Pedestrian { radius, .. } => radius,
        }
    }

    pub fn intersects(&self, poly: &Polygon) -> bool {
        match *self {
            DynamicObstacle::Vehicle { footprint_center, heading, half_length, half_width } => {
                Polygon::oriented_rect(footprint_center, heading, half_length, half_width).intersects(poly)
            }
            DynamicObstacle::Pedestrian { center, radius } => poly.intersects_disc(center, radius),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        match *self {
            DynamicObstacle::Vehicle { footprint_center, heading, half_length, half_width } => {
                let f = Vec2::from_angle(heading);
                let d = p - footprint_center;
                d.dot(f).abs() <= half_length && d.dot(f.left()).abs() <= half_width
            }
            DynamicObstacle::Pedestrian { center, radius } => p.dist(center) <= radius,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Agents {
    pub vehicles: Vec<NpcVehicle>,
    pub pedestrians: Vec<Pedestrian>,
}

const SPAWN_CLEARANCE: f64 = 25.0;
const SPAWN_SPACING: f64 = 12.0;
const SPAWN_ATTEMPTS: usize = 200;
/// Seconds a crossing pedestrian waits for the ego before turning back.
const PEDESTRIAN_PATIENCE: f64 = 2.0;

impl Agents {
    pub fn none() -> Self {
        Self::default()
    }

    /// Places agents at random lane and sidewalk positions away from the ego.
    pub fn spawn<R: Rng + ?Sized>(
        map: &TownMap,
        vehicles: usize,
        pedestrians: usize,
        ego: &VehicleState,
        params: &AgentParams,
        vehicle: &VehicleParams,
        rng: &mut R,
    ) -> Self {
        let mut out = Agents::default();
        let mut taken: Vec<Vec2> = vec![ego.pos];
        for _ in 0..vehicles {
            for _ in 0..SPAWN_ATTEMPTS {
                let lane = rng.random_range(0..map.lanes.len());
                let l = &map.lanes[lane];
                let s = rng.random_range(l.entry_s..l.exit_s);
                let p = l.centerline.point_at(s);
                if p.dist(ego.pos) < SPAWN_CLEARANCE || taken.iter().skip(1).any(|q| q.dist(p) < SPAWN_SPACING) {
                    continue;
                }
                taken.push(p);
                let mut npc = NpcVehicle {
                    state: VehicleState::new(p, 0.0, params.vehicle_speed, vehicle),
                    piece: Piece::Lane(lane),
                    s,
                    stopped: false,
                    stalled: 0,
                };
                npc.sync_pose(map);
                out.vehicles.push(npc);
                break;
            }
        }
        for _ in 0..pedestrians {
            for _ in 0..SPAWN_ATTEMPTS {
                let lane = rng.random_range(0..map.lanes.len());
                let path = &map.lanes[lane].sidewalk_path;
                let s = rng.random_range(0.0..path.length());
                let p = path.point_at(s);
                if p.dist(ego.pos) < SPAWN_CLEARANCE / 2.0 {
                    continue;
                }
                let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                out.pedestrians.push(Pedestrian {
                    pos: p,
                    radius: params.pedestrian_radius,
                    walk: Walk::Along { lane, s, dir },
                });
                break;
            }
        }
        out
    }

    /// Advances every agent by one step given the ego's current state.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        map: &TownMap,
        ego: &VehicleState,
        params: &AgentParams,
        dt: f64,
        rng: &mut R,
    ) {
        let ego_fp = ego.footprint();
        for npc in &mut self.vehicles {
            npc.stopped = npc.probe(params.vehicle_stop_distance).intersects(&ego_fp);
            if npc.stopped {
                npc.stalled += 1;
                if npc.stalled as f64 * dt >= params.vehicle_respawn_after {
                    npc.respawn(map, ego, rng);
                }
                continue;
            }
            npc.stalled = 0;
            npc.s += npc.state.speed * dt;
            loop {
                let end = npc.end_s(map);
                if npc.s <= end {
                    break;
                }
                let over = npc.s - end;
                match npc.piece {
                    Piece::Lane(l) => {
                        let &c = map.successors[l].choose(rng).expect("strongly connected map");
                        npc.piece = Piece::Connector(c);
                        npc.s = over;
                    }
                    Piece::Connector(c) => {
                        let next = map.connectors[c].to_lane;
                        npc.piece = Piece::Lane(next);
                        npc.s = map.lanes[next].entry_s + over;
                    }
                }
            }
            npc.sync_pose(map);
        }

        let lw = map.lane_width;
        let sw = map.sidewalk_width;
        for ped in &mut self.pedestrians {
            let draw: f64 = rng.random();
            match ped.walk {
                Walk::Along { lane, s, dir } => {
                    let path = &map.lanes[lane].sidewalk_path;
                    if draw < params.crossing_probability && ped.pos.dist(ego.pos) > params.crossing_clearance {
                        let across = path.direction_at(s).left() * (2.0 * lw + sw);
                        ped.walk = Walk::Crossing {
                            from: ped.pos,
                            to: ped.pos + across,
                            t: 0.0,
                            lane: map.lanes[lane].opposite,
                            waited: 0,
                        };
                        continue;
                    }
                    let mut s = s + dir * params.pedestrian_speed * dt;
                    let mut dir = dir;
                    let len = path.length();
                    if s > len {
                        s = 2.0 * len - s;
                        dir = -1.0;
                    } else if s < 0.0 {
                        s = -s;
                        dir = 1.0;
                    }
                    ped.pos = path.point_at(s);
                    ped.walk = Walk::Along { lane, s, dir };
                }
                Walk::Crossing { from, to, t, lane, waited } => {
                    let total = from.dist(to);
                    let next_t = (t + params.pedestrian_speed * dt / total).min(1.0);
                    let next = from + (to - from) * next_t;
                    let gap = ego_fp.distance_to_point(next);
                    if gap < ped.radius + 0.5 && gap < ego_fp.distance_to_point(ped.pos) {
                        let origin = map.lanes[lane].opposite;
                        ped.walk = if (waited + 1) as f64 * dt < PEDESTRIAN_PATIENCE {
                            Walk::Crossing { from, to, t, lane, waited: waited + 1 }
                        } else if t <= 0.0 {
                            let path = &map.lanes[origin].sidewalk_path;
                            let (_, s, _) = path.project(ped.pos, 0, path.points.len());
                            Walk::Along { lane: origin, s, dir: 1.0 }
                        } else {
                            Walk::Crossing { from: ped.pos, to: from, t: 0.0, lane: origin, waited: 0 }
                        };
                        continue;
                    }
                    let t = next_t;
                    ped.pos = next;
                    if t >= 1.0 {
                        let path = &map.lanes[lane].sidewalk_path;
                        let (_, s, _) = path.project(ped.pos, 0, path.points.len());
                        let dir = if draw < 0.5 { 1.0 } else { -1.0 };
                        ped.pos = path.point_at(s);
                        ped.walk = Walk::Along { lane, s, dir };
                    } else {
                        ped.walk = Walk::Crossing { from, to, t, lane, waited: 0 };
                    }
                }
            }
        }
    }

    pub fn obstacles(&self) -> impl Iterator<Item = DynamicObstacle> + '_ {
        let vehicles = self.vehicles.iter().map(|v| DynamicObstacle::Vehicle {
            footprint_center: v.state.pos,
            heading: v.state.heading,
            half_length: v.state.half_length,
            half_width: v.state.half_width,
        });
        let peds = self
            .pedestrians
            .iter()
            .map(|p| DynamicObstacle::Pedestrian { center: p.pos, radius: p.radius });
        vehicles.chain(peds)
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty() && self.pedestrians.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::bundled_map;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn agents_stay_on_their_ground() {
        let map = bundled_map("town-a").unwrap();
        let params = AgentParams::default();
        let vp = VehicleParams::default();
        let ego = VehicleState::new(Vec2::new(-100.0, -100.0), 0.0, 0.0, &vp);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agents = Agents::spawn(&map, 8, 12, &ego, &params, &vp, &mut rng);
        assert_eq!(agents.vehicles.len(), 8);
        assert_eq!(agents.pedestrians.len(), 12);
        let mut crossed = false;
        for _ in 0..2000 {
            agents.step(&map, &ego, &params, 0.1, &mut rng);
            crossed |= agents.pedestrians.iter().any(|p| p.is_crossing());
            for v in &agents.vehicles {
                assert!(!matches!(map.ground_at(v.state.pos), crate::map::Ground::Obstacle | crate::map::Ground::Off));
            }
            for p in &agents.pedestrians {
                assert!(!matches!(map.ground_at(p.pos), crate::map::Ground::Obstacle));
            }
        }
        assert!(crossed);
    }

    #[test]
    fn npc_halts_for_ego_ahead() {
        let map = bundled_map("town-a").unwrap();
        let params = AgentParams::default();
        let vp = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let far = VehicleState::new(Vec2::new(-100.0, -100.0), 0.0, 0.0, &vp);
        let mut agents = Agents::spawn(&map, 1, 0, &far, &params, &vp, &mut rng);
        let npc = &agents.vehicles[0];
        let ahead = npc.state.to_world(Vec2::new(6.0, 0.0));
        let ego = VehicleState::new(ahead, npc.state.heading, 0.0, &vp);
        let before = agents.vehicles[0].state.pos;
        agents.step(&map, &ego, &params, 0.1, &mut rng);
        assert!(agents.vehicles[0].stopped);
        assert_eq!(agents.vehicles[0].state.pos, before);
    }
}
