use petgraph::algo::astar;
use petgraph::graph::NodeIndex;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::geometry::{Polyline, Vec2};
use crate::map::{LanePos, TownMap};
use crate::vehicle::Command;

/// One junction traversal along a route, in route arc length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionPass {
    pub node: usize,
    pub connector: usize,
    pub command: Command,
    /// Arc length where the connector starts (the junction edge).
    pub entry_arc: f64,
    pub exit_arc: f64,
}

#[derive(Debug, Clone)]
pub struct Route {
    pub start: LanePos,
    pub goal: LanePos,
    pub lanes: Vec<usize>,
    pub junctions: Vec<JunctionPass>,
    pub waypoints: Polyline,
    /// Command shown at each waypoint.
    pub commands: Vec<Command>,
    /// Length of the lane-centerline path, meters.
    pub optimal_length: f64,
    pub approach_window: f64,
}

impl Route {
    pub fn goal_point(&self) -> Vec2 {
        *self.waypoints.points.last().expect("route has waypoints")
    }

    pub fn turn_count(&self) -> usize {
        self.junctions.iter().filter(|j| j.command.is_turn()).count()
    }

    /// The approach window of the first junction whose connector has not been
    /// left behind at `arc`, if `arc` falls inside it.
    pub fn command_at_arc(&self, arc: f64) -> Command {
        for j in &self.junctions {
            if arc <= j.exit_arc {
                if arc >= j.entry_arc - self.approach_window {
                    return j.command;
                }
                break;
            }
        }
        Command::Follow
    }

    /// Whether `arc` lies inside any junction's approach window.
    pub fn in_approach_window(&self, arc: f64) -> bool {
        self.junctions
            .iter()
            .any(|j| arc >= j.entry_arc - self.approach_window && arc <= j.exit_arc)
    }

    /// Command for the route position with waypoint index `i` as the next
    /// upcoming waypoint.
    pub fn command_at_index(&self, i: usize) -> Command {
        self.commands[i.min(self.commands.len() - 1)]
    }

    /// Closest point on the route searching segments `[from, from + span)`.
    /// Returns `(segment, arc, distance)`.
    pub fn project(&self, p: Vec2, from: usize, span: usize) -> (usize, f64, f64) {
        self.waypoints.project(p, from, from + span)
    }
}

/// Shortest route by lane-centerline length from `start` to `goal`. U-turns
/// are not available; a goal behind the start on the same lane loops around.
pub fn plan_route(map: &TownMap, start: LanePos, goal: LanePos, cfg: &SimConfig) -> Result<Route> {
    for (what, p) in [("start", start), ("goal", goal)] {
        let lane = map
            .lanes
            .get(p.lane)
            .ok_or_else(|| SimError::InvalidSpec(format!("{what} lane {} does not exist", p.lane)))?;
        if !(p.s >= lane.entry_s && p.s <= lane.exit_s) {
            return Err(SimError::InvalidSpec(format!(
                "{what} s = {} is outside lane {} interior [{}, {}]",
                p.s, p.lane, lane.entry_s, lane.exit_s
            )));
        }
    }
    let (lanes, length) = lane_sequence(map, start, goal)?;
    build_route(map, start, goal, lanes, length, cfg)
}

fn lane_sequence(map: &TownMap, start: LanePos, goal: LanePos) -> Result<(Vec<usize>, f64)> {
    if start.lane == goal.lane && goal.s > start.s {
        return Ok((vec![start.lane], goal.s - start.s));
    }
    let graph = map.lane_graph();
    let a = &map.lanes[start.lane];
    let b = &map.lanes[goal.lane];
    let head = a.exit_s - start.s;
    let tail_unused = b.exit_s - goal.s;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for &c in &map.successors[start.lane] {
        let conn = &map.connectors[c];
        let j = conn.to_lane;
        let found = astar(
            &graph,
            NodeIndex::new(j),
            |n| n.index() == goal.lane,
            |e| {
                let conn = &map.connectors[*e.weight()];
                conn.path.length() + map.lanes[conn.to_lane].interior_length()
            },
            |_| 0.0,
        );
        if let Some((cost, path)) = found {
            let total = head + conn.path.length() + map.lanes[j].interior_length() + cost - tail_unused;
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                let mut lanes = vec![start.lane];
                lanes.extend(path.iter().map(|n| n.index()));
                best = Some((total, lanes));
            }
        }
    }
    best.map(|(len, lanes)| (lanes, len))
        .ok_or(SimError::Unreachable { from: start.lane, to: goal.lane })
}

fn build_route(
    map: &TownMap,
    start: LanePos,
    goal: LanePos,
    lanes: Vec<usize>,
    optimal_length: f64,
    cfg: &SimConfig,
) -> Result<Route> {
    let mut points: Vec<Vec2> = Vec::new();
    let mut junctions = Vec::new();
    let push = |pts: Vec<Vec2>, points: &mut Vec<Vec2>| {
        for p in pts {
            if points.last().is_none_or(|q: &Vec2| q.dist(p) > 1e-9) {
                points.push(p);
            }
        }
    };
    let n = lanes.len();
    let mut arc = 0.0;
    for (k, &l) in lanes.iter().enumerate() {
        let lane = &map.lanes[l];
        let s0 = if k == 0 { start.s } else { lane.entry_s };
        let s1 = if k + 1 == n { goal.s } else { lane.exit_s };
        push(lane.centerline.slice(s0, s1), &mut points);
        arc += s1 - s0;
        if k + 1 < n {
            let conn = map
                .connector_between(l, lanes[k + 1])
                .ok_or_else(|| SimError::InvalidSpec(format!("no connector from lane {l} to {}", lanes[k + 1])))?;
            let cid = map.successors[l].iter().copied().find(|&c| map.connectors[c].to_lane == lanes[k + 1]).unwrap();
            let len = conn.path.length();
            junctions.push(JunctionPass {
                node: conn.node,
                connector: cid,
                command: conn.command,
                entry_arc: arc,
                exit_arc: arc + len,
            });
            push(conn.path.points.clone(), &mut points);
            arc += len;
        }
    }
    let waypoints = Polyline::new(points).densify(cfg.waypoint_spacing);
    let mut route = Route {
        start,
        goal,
        lanes,
        junctions,
        waypoints,
        commands: Vec::new(),
        optimal_length,
        approach_window: cfg.approach_window,
    };
    route.commands = route.waypoints.arc.iter().map(|&a| route.command_at_arc(a)).collect();
    Ok(route)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{bundled_map, MapFile, RoadDef, MAP_VERSION};

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn same_lane_is_all_follow() {
        let m = bundled_map("town-a").unwrap();
        let r = plan_route(&m, LanePos::new(0, 10.0), LanePos::new(0, 45.0), &cfg()).unwrap();
        assert!(r.commands.iter().all(|&c| c == Command::Follow));
        assert!((r.optimal_length - 35.0).abs() < 1e-12);
        assert!(r.junctions.is_empty());
    }

    #[test]
    fn waypoint_spacing_bounded() {
        let m = bundled_map("town-b").unwrap();
        let r = plan_route(&m, LanePos::new(0, 10.0), LanePos::new(20, 20.0), &cfg()).unwrap();
        for w in r.waypoints.points.windows(2) {
            assert!(w[0].dist(w[1]) <= 2.0 + 1e-9);
        }
        assert!((r.waypoints.length() - r.optimal_length).abs() < 1.0);
    }

    #[test]
    fn goal_behind_start_loops_around() {
        let m = bundled_map("town-a").unwrap();
        let r = plan_route(&m, LanePos::new(0, 40.0), LanePos::new(0, 20.0), &cfg()).unwrap();
        assert_eq!(r.lanes.first(), Some(&0));
        assert_eq!(r.lanes.last(), Some(&0));
        assert!(r.lanes.len() > 2);
    }

    #[test]
    fn parallel_roads_pick_shorter() {
        // Nodes A and B are joined by a straight 100 m road and a 150 m
        // detour. A third node C closes the loop so the lane graph is
        // strongly connected without U-turns; arriving at A from C, both
        // roads to B are legal.
        let h = 43.30127018922193;
        let file = MapFile {
            version: MAP_VERSION,
            name: "pair".into(),
            lane_width: 3.5,
            sidewalk_width: 3.5,
            junction_half_size: 7.0,
            nodes: vec![[0.0, 0.0], [100.0, 0.0], [50.0, -80.0]],
            roads: vec![
                RoadDef { from: 0, to: 1, via: vec![] },
                RoadDef { from: 0, to: 1, via: vec![[25.0, h], [75.0, h]] },
                RoadDef { from: 1, to: 2, via: vec![] },
                RoadDef { from: 2, to: 0, via: vec![] },
            ],
            obstacles: vec![],
        };
        let m = TownMap::from_file(file).unwrap();
        assert!((m.lanes[0].length() - 100.0).abs() < 1e-9);
        assert!((m.lanes[2].length() - 150.0).abs() < 5.0);
        let start = LanePos::new(6, m.lanes[6].exit_s - 1.0);
        let goal = LanePos::new(4, m.lanes[4].entry_s + 5.0);
        let r = plan_route(&m, start, goal, &cfg()).unwrap();
        assert_eq!(r.lanes, vec![6, 0, 4]);
    }
}
