use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::env::EpisodeSpec;
use crate::error::{Result, SimError};
use crate::map::{LanePos, TownMap};
use crate::perception::PerturbationRegime;
use crate::route::plan_route;

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    Straight,
    OneTurn,
    Navigation,
    NavDynamic,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Straight, TaskKind::OneTurn, TaskKind::Navigation, TaskKind::NavDynamic];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Straight => "straight",
            TaskKind::OneTurn => "one-turn",
            TaskKind::Navigation => "navigation",
            TaskKind::NavDynamic => "nav-dynamic",
        }
    }

    pub fn from_name(s: &str) -> Option<TaskKind> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

fn interior<R: Rng + ?Sized>(map: &TownMap, lane: usize, lo_pad: f64, hi_pad: f64, rng: &mut R) -> Option<f64> {
    let l = &map.lanes[lane];
    let (lo, hi) = (l.entry_s + lo_pad, l.exit_s - hi_pad);
    (hi > lo).then(|| rng.random_range(lo..hi))
}

/// Samples a start/goal pair conforming to `task`.
pub fn sample_start_goal<R: Rng + ?Sized>(
    map: &TownMap,
    task: TaskKind,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<(LanePos, LanePos)> {
    let tp = &cfg.tasks;
    let m = tp.lane_margin;
    for _ in 0..MAX_ATTEMPTS {
        let lane = rng.random_range(0..map.lanes.len());
        match task {
            TaskKind::Straight => {
                let Some(s0) = interior(map, lane, m, m + tp.straight_min_length, rng) else { continue };
                let hi = map.lanes[lane].exit_s - m;
                let s1 = rng.random_range(s0 + tp.straight_min_length..=hi);
                return Ok((LanePos::new(lane, s0), LanePos::new(lane, s1)));
            }
            TaskKind::OneTurn => {
                let turns: Vec<usize> = map.successors[lane]
                    .iter()
                    .copied()
                    .filter(|&c| map.connectors[c].command.is_turn())
                    .collect();
                let Some(&c) = turns.choose(rng) else { continue };
                let next = map.connectors[c].to_lane;
                let (Some(s0), Some(s1)) = (interior(map, lane, m, m, rng), interior(map, next, m, m, rng)) else {
                    continue;
                };
                return Ok((LanePos::new(lane, s0), LanePos::new(next, s1)));
            }
            TaskKind::Navigation | TaskKind::NavDynamic => {
                let goal_lane = rng.random_range(0..map.lanes.len());
                let (Some(s0), Some(s1)) = (interior(map, lane, m, m, rng), interior(map, goal_lane, m, m, rng)) else {
                    continue;
                };
                let (start, goal) = (LanePos::new(lane, s0), LanePos::new(goal_lane, s1));
                let route = plan_route(map, start, goal, cfg)?;
                if route.turn_count() >= 2 && route.optimal_length <= tp.navigation_max_length {
                    return Ok((start, goal));
                }
            }
        }
    }
    Err(SimError::TaskSampling(task, MAX_ATTEMPTS))
}

/// Builds a complete episode spec for `task` from a single seed. The seed
/// drives both the start/goal draw and the episode's world randomness.
pub fn sample_episode(
    map: &TownMap,
    task: TaskKind,
    seed: u64,
    regime: PerturbationRegime,
    cfg: &SimConfig,
) -> Result<EpisodeSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (start, goal) = sample_start_goal(map, task, cfg, &mut rng)?;
    let dynamic = task == TaskKind::NavDynamic;
    Ok(EpisodeSpec {
        map: map.name.clone(),
        start,
        goal,
        vehicles: if dynamic { cfg.tasks.dynamic_vehicles } else { 0 },
        pedestrians: if dynamic { cfg.tasks.dynamic_pedestrians } else { 0 },
        regime,
        seed,
        initial_speed: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::bundled_map;
    use crate::vehicle::Command;

    #[test]
    fn tasks_conform() {
        let cfg = SimConfig::default();
        for name in ["town-a", "town-b"] {
            let map = bundled_map(name).unwrap();
            for seed in 0..40 {
                for task in TaskKind::ALL {
                    let spec = sample_episode(&map, task, seed, PerturbationRegime::none(), &cfg).unwrap();
                    let route = plan_route(&map, spec.start, spec.goal, &cfg).unwrap();
                    match task {
                        TaskKind::Straight => {
                            assert!(route.junctions.is_empty());
                            assert!(route.commands.iter().all(|&c| c == Command::Follow));
                            assert!(route.optimal_length >= 25.0);
                        }
                        TaskKind::OneTurn => {
                            assert_eq!(route.junctions.len(), 1);
                            assert!(route.junctions[0].command.is_turn());
                        }
                        _ => assert!(route.turn_count() >= 2),
                    }
                    assert_eq!(spec.vehicles > 0, task == TaskKind::NavDynamic);
                }
            }
        }
    }
}
