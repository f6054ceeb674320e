use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Agents, DynamicObstacle};
use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::infractions::{detect_infractions, CollisionKind, Measurements};
use crate::map::{LanePos, TownMap};
use crate::perception::{render_raster, Observation, PerturbationRegime};
use crate::route::{plan_route, Route};
use crate::vehicle::{step_dynamics, ActionTriple, VehicleState};
use crate::EpisodeStatus;

const WORLD_STREAM: u64 = 1;
const PERCEPTION_STREAM: u64 = 2;
/// Route segments searched behind and ahead of the last projection.
const TRACK_BACK: usize = 2;
const TRACK_AHEAD: usize = 12;

/// Everything needed to reproduce an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub map: String,
    pub start: LanePos,
    pub goal: LanePos,
    #[serde(default)]
    pub vehicles: usize,
    #[serde(default)]
    pub pedestrians: usize,
    #[serde(default)]
    pub regime: PerturbationRegime,
    pub seed: u64,
    #[serde(default)]
    pub initial_speed: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub measurements: Measurements,
    pub status: EpisodeStatus,
}

#[derive(Debug, Clone)]
struct Episode {
    spec: EpisodeSpec,
    route: Route,
    vehicle: VehicleState,
    agents: Agents,
    world_rng: ChaCha8Rng,
    perception_rng: ChaCha8Rng,
    steps: usize,
    budget: usize,
    status: EpisodeStatus,
    segment: usize,
    measurements: Measurements,
}

/// Single-episode driving environment over a shared immutable map.
#[derive(Debug, Clone)]
pub struct Env {
    map: Arc<TownMap>,
    cfg: SimConfig,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(map: Arc<TownMap>, cfg: SimConfig) -> Self {
        Self { map, cfg, episode: None }
    }

    pub fn map(&self) -> &Arc<TownMap> {
        &self.map
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn reset(&mut self, spec: &EpisodeSpec) -> Result<Observation> {
        if spec.map != self.map.name {
            return Err(SimError::InvalidSpec(format!(
                "spec names map {:?} but environment holds {:?}",
                spec.map, self.map.name
            )));
        }
        if spec.start.lane == spec.goal.lane && (spec.start.s - spec.goal.s).abs() < 1e-9 {
            return Err(SimError::InvalidSpec("goal equals start".into()));
        }
        if !(spec.initial_speed >= 0.0 && spec.initial_speed <= self.cfg.vehicle.max_speed) {
            return Err(SimError::InvalidSpec(format!("initial speed {} out of range", spec.initial_speed)));
        }
        spec.regime.validate()?;
        let route = plan_route(&self.map, spec.start, spec.goal, &self.cfg)?;
        let (pos, heading) = self.map.lane_pose(spec.start);
        let vehicle = VehicleState::new(pos, heading, spec.initial_speed, &self.cfg.vehicle);
        let mut world_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        world_rng.set_stream(WORLD_STREAM);
        let mut perception_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ spec.regime.seed.rotate_left(32));
        perception_rng.set_stream(PERCEPTION_STREAM);
        let agents = Agents::spawn(
            &self.map,
            spec.vehicles,
            spec.pedestrians,
            &vehicle,
            &self.cfg.agents,
            &self.cfg.vehicle,
            &mut world_rng,
        );
        let budget = self.cfg.budget_steps(route.optimal_length);
        let distance_to_goal = vehicle.pos.dist(route.goal_point());
        let mut ep = Episode {
            spec: spec.clone(),
            route,
            vehicle,
            agents,
            world_rng,
            perception_rng,
            steps: 0,
            budget,
            status: EpisodeStatus::Running,
            segment: 0,
            measurements: Measurements { speed_kmh: vehicle.speed_kmh(), distance_to_goal, ..Default::default() },
        };
        let obs = self.observe(&mut ep);
        self.episode = Some(ep);
        Ok(obs)
    }

    fn observe(&self, ep: &mut Episode) -> Observation {
        let obstacles: Vec<DynamicObstacle> = ep.agents.obstacles().collect();
        let mut raster = render_raster(&self.map, &ep.vehicle, &ep.route, ep.segment, &obstacles, &self.cfg.raster);
        ep.spec.regime.apply(&mut raster, &mut ep.perception_rng);
        Observation {
            raster,
            height: self.cfg.raster.height,
            width: self.cfg.raster.width,
            speed: ep.vehicle.speed,
            command: ep.route.command_at_index(ep.segment + 1),
        }
    }

    pub fn step(&mut self, action: ActionTriple) -> Result<StepOutcome> {
        let mut ep = self.episode.take().ok_or(SimError::NotStarted)?;
        if ep.status != EpisodeStatus::Running {
            let status = ep.status;
            self.episode = Some(ep);
            return Err(SimError::Terminated(status));
        }
        let vehicle = match step_dynamics(&ep.vehicle, action, self.cfg.dt, &self.cfg.vehicle) {
            Ok(v) => v,
            Err(e) => {
                self.episode = Some(ep);
                return Err(e);
            }
        };
        ep.vehicle = vehicle;
        ep.agents.step(&self.map, &ep.vehicle, &self.cfg.agents, self.cfg.dt, &mut ep.world_rng);
        let obstacles: Vec<DynamicObstacle> = ep.agents.obstacles().collect();
        let inf = detect_infractions(&self.map, &ep.vehicle, &obstacles);
        let from = ep.segment.saturating_sub(TRACK_BACK);
        let (segment, _, _) = ep.route.project(ep.vehicle.pos, from, TRACK_BACK + TRACK_AHEAD);
        ep.segment = segment;
        ep.steps += 1;
        let distance_to_goal = ep.vehicle.pos.dist(ep.route.goal_point());
        ep.measurements = Measurements {
            speed_kmh: ep.vehicle.speed_kmh(),
            collision_kind: inf.collision_kind,
            sidewalk_overlap: inf.sidewalk_overlap,
            opposite_overlap: inf.opposite_overlap,
            distance_to_goal,
        };
        ep.status = if inf.collision_kind != CollisionKind::None {
            EpisodeStatus::Collision
        } else if distance_to_goal < self.cfg.goal_tolerance {
            EpisodeStatus::GoalReached
        } else if ep.steps >= ep.budget {
            EpisodeStatus::TimeBudgetExhausted
        } else {
            EpisodeStatus::Running
        };
        let observation = self.observe(&mut ep);
        let out = StepOutcome { observation, measurements: ep.measurements, status: ep.status };
        self.episode = Some(ep);
        Ok(out)
    }

    fn ep(&self) -> Result<&Episode> {
        self.episode.as_ref().ok_or(SimError::NotStarted)
    }

    pub fn status(&self) -> Option<EpisodeStatus> {
        self.episode.as_ref().map(|e| e.status)
    }

    pub fn vehicle(&self) -> Result<&VehicleState> {
        Ok(&self.ep()?.vehicle)
    }

    pub fn route(&self) -> Result<&Route> {
        Ok(&self.ep()?.route)
    }

    pub fn agents(&self) -> Result<&Agents> {
        Ok(&self.ep()?.agents)
    }

    pub fn obstacles(&self) -> Result<Vec<DynamicObstacle>> {
        Ok(self.ep()?.agents.obstacles().collect())
    }

    pub fn spec(&self) -> Result<&EpisodeSpec> {
        Ok(&self.ep()?.spec)
    }

    pub fn steps(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    pub fn budget_steps(&self) -> Result<usize> {
        Ok(self.ep()?.budget)
    }

    /// Route segment the vehicle currently projects onto.
    pub fn route_segment(&self) -> Result<usize> {
        Ok(self.ep()?.segment)
    }

    pub fn measurements(&self) -> Result<Measurements> {
        Ok(self.ep()?.measurements)
    }
}
