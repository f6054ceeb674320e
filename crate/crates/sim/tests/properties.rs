use std::sync::Arc;

use cirl_sim::config::VehicleParams;
use cirl_sim::geometry::Vec2;
use cirl_sim::map::{bundled_map, LanePos, TownMap};
use cirl_sim::{
    plan_route, step_dynamics, ActionTriple, Command, Env, EpisodeSpec, EpisodeStatus, PerturbationRegime, SimConfig,
    SimError, TaskKind, VehicleState,
};
use proptest::prelude::*;

fn action() -> impl Strategy<Value = ActionTriple> {
    (-1.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(s, t, b)| ActionTriple::new(s, t, b))
}

fn maps() -> &'static [Arc<TownMap>; 2] {
    static MAPS: std::sync::OnceLock<[Arc<TownMap>; 2]> = std::sync::OnceLock::new();
    MAPS.get_or_init(|| {
        [
            Arc::new(bundled_map("town-a").unwrap()),
            Arc::new(bundled_map("town-b").unwrap()),
        ]
    })
}

/// All-pairs cost from the exit of lane i to the entry of lane j.
fn floyd_warshall(map: &TownMap) -> Vec<Vec<f64>> {
    let n = map.lanes.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for c in &map.connectors {
        d[c.from_lane][c.to_lane] = d[c.from_lane][c.to_lane].min(c.path.length());
    }
    for k in 0..n {
        let through = map.lanes[k].interior_length();
        for i in 0..n {
            for j in 0..n {
                let alt = d[i][k] + through + d[k][j];
                if alt < d[i][j] {
                    d[i][j] = alt;
                }
            }
        }
    }
    d
}

fn oracle_length(map: &TownMap, d: &[Vec<f64>], start: LanePos, goal: LanePos) -> f64 {
    let a = &map.lanes[start.lane];
    let b = &map.lanes[goal.lane];
    let via = (a.exit_s - start.s) + d[start.lane][goal.lane] + (goal.s - b.entry_s);
    if start.lane == goal.lane && goal.s > start.s {
        via.min(goal.s - start.s)
    } else {
        via
    }
}

fn lane_pos(map: &TownMap, lane: usize, frac: f64) -> LanePos {
    let l = &map.lanes[lane % map.lanes.len()];
    LanePos::new(l.id, l.entry_s + frac * l.interior_length())
}

fn episode(map: &TownMap, start: LanePos, goal: LanePos, seed: u64, dynamic: bool) -> EpisodeSpec {
    EpisodeSpec {
        map: map.name.clone(),
        start,
        goal,
        vehicles: if dynamic { 6 } else { 0 },
        pedestrians: if dynamic { 10 } else { 0 },
        regime: PerturbationRegime { name: "mix".into(), noise_sigma: 0.05, dropout: 0.05, intensity: 0.9, seed: 1 },
        seed,
        initial_speed: 0.0,
    }
}

#[test]
fn planner_matches_floyd_warshall_oracle() {
    let cfg = SimConfig::default();
    for map in maps() {
        assert!(map.lanes.len() / 2 <= 50);
        let d = floyd_warshall(map);
        let n = map.lanes.len();
        for i in 0..n {
            for j in 0..n {
                for (fa, fb) in [(0.2, 0.7), (0.8, 0.1)] {
                    let start = lane_pos(map, i, fa);
                    let goal = lane_pos(map, j, fb);
                    let route = plan_route(map, start, goal, &cfg).unwrap();
                    let want = oracle_length(map, &d, start, goal);
                    assert!(
                        (route.optimal_length - want).abs() < 1e-6,
                        "{}: {i}->{j}: planner {} oracle {}",
                        map.name,
                        route.optimal_length,
                        want
                    );
                }
            }
        }
    }
}

/// Hand-built single junction: a west-east road crossed by a north-south one.
fn cross_map() -> TownMap {
    use cirl_sim::map::{MapFile, RoadDef, MAP_VERSION};
    let road = |from, to| RoadDef { from, to, via: vec![] };
    // Outer nodes are joined by a ring so the lane graph is strongly connected.
    let file = MapFile {
        version: MAP_VERSION,
        name: "cross".into(),
        lane_width: 3.5,
        sidewalk_width: 3.5,
        junction_half_size: 7.0,
        nodes: vec![[0.0, 0.0], [-80.0, 0.0], [80.0, 0.0], [0.0, -80.0], [0.0, 80.0], [-80.0, -80.0], [80.0, -80.0], [80.0, 80.0], [-80.0, 80.0]],
        roads: vec![
            road(1, 0),
            road(0, 2),
            road(3, 0),
            road(0, 4),
            road(1, 5),
            road(5, 3),
            road(3, 6),
            road(6, 2),
            road(2, 7),
            road(7, 4),
            road(4, 8),
            road(8, 1),
        ],
        obstacles: vec![],
    };
    TownMap::from_file(file).unwrap()
}

#[test]
fn left_turn_schedule_matches_geometric_oracle() {
    let cfg = SimConfig::default();
    let map = cross_map();
    // Lane 0: eastbound from node 1 toward the center; lane 6: northbound
    // from the center. Heading changes from east to north, a left turn.
    let east_in = 0;
    let north_out = 6;
    assert_eq!(map.lanes[north_out].from_node, 0);
    assert_eq!(map.lanes[north_out].to_node, 4);
    let start = LanePos::new(east_in, 10.0);
    let goal = LanePos::new(north_out, 40.0);
    let route = plan_route(&map, start, goal, &cfg).unwrap();
    assert_eq!(route.lanes, vec![east_in, north_out]);
    // Oracle: entry of the junction at the end of lane 0 along the route,
    // heading change from the lane direction vectors.
    let d_in = map.lanes[east_in].centerline.direction_at(0.0);
    let d_out = map.lanes[north_out].centerline.direction_at(0.0);
    let turn = d_in.cross(d_out);
    assert!(turn > 0.9, "left turn expected");
    let entry_arc = map.lanes[east_in].exit_s - start.s;
    let exit_arc = entry_arc + map.connector_between(east_in, north_out).unwrap().path.length();
    for (k, &arc) in route.waypoints.arc.iter().enumerate() {
        let expect = if arc >= entry_arc - 25.0 && arc <= exit_arc { Command::TurnLeft } else { Command::Follow };
        assert_eq!(route.commands[k], expect, "arc {arc}");
    }
    assert!(route.commands.contains(&Command::TurnLeft));
}

#[test]
fn straight_task_has_no_turn_commands() {
    let cfg = SimConfig::default();
    for map in maps() {
        for seed in 0..50 {
            let spec = cirl_sim::sample_episode(map, TaskKind::Straight, seed, PerturbationRegime::none(), &cfg).unwrap();
            let mut env = Env::new(map.clone(), cfg.clone());
            env.reset(&spec).unwrap();
            let route = env.route().unwrap();
            assert!(route.commands.iter().all(|c| !c.is_turn()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dynamics_bounded(speed in 0.0f64..=15.0, heading in -3.1f64..3.1, acts in prop::collection::vec(action(), 1..60)) {
        let p = VehicleParams::default();
        let mut s = VehicleState::new(Vec2::new(1.0, 2.0), heading, speed, &p);
        for a in acts {
            let n = step_dynamics(&s, a, 0.1, &p).unwrap();
            prop_assert!(n.speed >= 0.0 && n.speed <= p.max_speed);
            prop_assert!(n.pos.dist(s.pos) <= p.max_speed * 0.1 + 1e-12);
            prop_assert!(n.heading > -std::f64::consts::PI && n.heading <= std::f64::consts::PI);
            s = n;
        }
    }

    #[test]
    fn trajectories_are_deterministic(
        m in 0usize..2, a in 0usize..200, b in 0usize..200, fa in 0.0f64..1.0, fb in 0.0f64..1.0,
        seed in any::<u64>(), acts in prop::collection::vec(action(), 1..80),
    ) {
        let map = &maps()[m];
        let start = lane_pos(map, a, fa);
        let goal = lane_pos(map, b, fb);
        prop_assume!(start != goal);
        let spec = episode(map, start, goal, seed, true);
        let cfg = SimConfig::default();
        let mut e1 = Env::new(map.clone(), cfg.clone());
        let mut e2 = Env::new(map.clone(), cfg);
        prop_assert_eq!(e1.reset(&spec).unwrap(), e2.reset(&spec).unwrap());
        for act in acts {
            let r1 = e1.step(act);
            let r2 = e2.step(act);
            match (r1, r2) {
                (Ok(o1), Ok(o2)) => {
                    prop_assert_eq!(&o1.observation, &o2.observation);
                    prop_assert_eq!(o1.measurements, o2.measurements);
                    prop_assert_eq!(o1.status, o2.status);
                    prop_assert_eq!(e1.vehicle().unwrap(), e2.vehicle().unwrap());
                    prop_assert_eq!(e1.agents().unwrap(), e2.agents().unwrap());
                }
                (Err(SimError::Terminated(s1)), Err(SimError::Terminated(s2))) => prop_assert_eq!(s1, s2),
                (x, y) => prop_assert!(false, "diverged: {:?} vs {:?}", x.is_ok(), y.is_ok()),
            }
        }
    }

    #[test]
    fn terminal_states_absorb(a in 0usize..200, fa in 0.0f64..0.5, seed in any::<u64>()) {
        let map = &maps()[0];
        let start = lane_pos(map, a, fa);
        let goal = LanePos::new(start.lane, start.s + 1.0);
        let mut env = Env::new(map.clone(), SimConfig::default());
        env.reset(&episode(map, start, goal, seed, false)).unwrap();
        let out = env.step(ActionTriple::default()).unwrap();
        prop_assert_eq!(out.status, EpisodeStatus::GoalReached);
        let v = *env.vehicle().unwrap();
        let steps = env.steps();
        for act in [ActionTriple::new(1.0, 1.0, 0.0), ActionTriple::default()] {
            prop_assert!(matches!(env.step(act), Err(SimError::Terminated(EpisodeStatus::GoalReached))));
        }
        prop_assert_eq!(*env.vehicle().unwrap(), v);
        prop_assert_eq!(env.steps(), steps);
    }

    #[test]
    fn turn_commands_lie_in_approach_windows(m in 0usize..2, a in 0usize..200, b in 0usize..200, fa in 0.0f64..1.0, fb in 0.0f64..1.0) {
        let map = &maps()[m];
        let start = lane_pos(map, a, fa);
        let goal = lane_pos(map, b, fb);
        prop_assume!(start != goal);
        let route = plan_route(map, start, goal, &SimConfig::default()).unwrap();
        for (k, c) in route.commands.iter().enumerate() {
            if c.is_turn() {
                prop_assert!(route.in_approach_window(route.waypoints.arc[k]));
            }
        }
        for w in route.waypoints.points.windows(2) {
            prop_assert!(w[0].dist(w[1]) <= 5.0);
        }
    }
}
