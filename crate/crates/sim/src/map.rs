//! Road-graph towns: lanes, sidewalks, junctions, static obstacles.
//!
//! Every road joins two nodes and carries one lane per direction. Traffic
//! keeps right, so a lane's centerline sits half a lane width to the right of
//! the road axis and its sidewalk lies beyond it. Each node is an
//! axis-aligned drivable junction square; lanes and sidewalks stop at its
//! edge and connectors (cubic Béziers) join incoming to outgoing lanes.

use std::path::Path;

use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{bezier_connector, normalize_angle, Aabb, Polygon, Polyline, Vec2};
use crate::vehicle::Command;

pub const MAP_VERSION: u32 = 1;

/// Turns sharper than this (degrees) get a turn command, others `Straight`.
pub const STRAIGHT_TOLERANCE_DEG: f64 = 30.0;

const GRID_RES: f64 = 0.5;
const CONNECTOR_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadDef {
    pub from: usize,
    pub to: usize,
    /// Optional interior shape points of the road axis.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub via: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleKind {
    Building,
    Wall,
    Pole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleDef {
    pub kind: ObstacleKind,
    pub points: Vec<[f64; 2]>,
}

/// On-disk map description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub version: u32,
    pub name: String,
    pub lane_width: f64,
    pub sidewalk_width: f64,
    pub junction_half_size: f64,
    pub nodes: Vec<[f64; 2]>,
    pub roads: Vec<RoadDef>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleDef>,
}

impl MapFile {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SimError::MapFormat(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: MapFile = toml::from_str(text).map_err(|e| SimError::MapFormat(e.to_string()))?;
        if file.version != MAP_VERSION {
            return Err(SimError::MapFormat(format!(
                "unsupported map version {} (expected {MAP_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// A position along a lane centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanePos {
    pub lane: usize,
    pub s: f64,
}

impl LanePos {
    pub fn new(lane: usize, s: f64) -> Self {
        Self { lane, s }
    }
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: usize,
    pub road: usize,
    pub from_node: usize,
    pub to_node: usize,
    pub opposite: usize,
    /// Node-to-node centerline.
    pub centerline: Polyline,
    /// Drivable interior is `[entry_s, exit_s]` along the centerline.
    pub entry_s: f64,
    pub exit_s: f64,
    pub quads: Vec<usize>,
    pub sidewalk: Vec<Polygon>,
    /// Walking line along the middle of the sidewalk, interior part only.
    pub sidewalk_path: Polyline,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }

    pub fn interior_length(&self) -> f64 {
        self.exit_s - self.entry_s
    }
}

#[derive(Debug, Clone)]
pub struct LaneQuad {
    pub lane: usize,
    pub polygon: Polygon,
    pub aabb: Aabb,
    pub dir: Vec2,
}

#[derive(Debug, Clone)]
pub struct Connector {
    pub from_lane: usize,
    pub to_lane: usize,
    pub node: usize,
    pub path: Polyline,
    /// Signed heading change, radians, positive to the left.
    pub angle: f64,
    pub command: Command,
}

#[derive(Debug, Clone)]
pub struct StaticObstacle {
    pub kind: ObstacleKind,
    pub polygon: Polygon,
    pub aabb: Aabb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ground {
    Off,
    Obstacle,
    Sidewalk,
    Junction,
    Lane(usize),
}

const G_OFF: u32 = 0;
const G_OBSTACLE: u32 = 1;
const G_SIDEWALK: u32 = 2;
const G_JUNCTION: u32 = 3;
const G_LANE0: u32 = 4;

#[derive(Debug, Clone)]
struct GroundGrid {
    origin: Vec2,
    nx: usize,
    ny: usize,
    cells: Vec<u32>,
}

impl GroundGrid {
    fn new(bounds: Aabb) -> Self {
        let nx = ((bounds.max.x - bounds.min.x) / GRID_RES).ceil() as usize + 1;
        let ny = ((bounds.max.y - bounds.min.y) / GRID_RES).ceil() as usize + 1;
        Self { origin: bounds.min, nx, ny, cells: vec![G_OFF; nx * ny] }
    }

    fn paint(&mut self, poly: &Polygon, code: u32) {
        let bb = poly.aabb();
        let i0 = ((bb.min.x - self.origin.x) / GRID_RES).floor().max(0.0) as usize;
        let j0 = ((bb.min.y - self.origin.y) / GRID_RES).floor().max(0.0) as usize;
        let i1 = (((bb.max.x - self.origin.x) / GRID_RES).ceil() as usize).min(self.nx - 1);
        let j1 = (((bb.max.y - self.origin.y) / GRID_RES).ceil() as usize).min(self.ny - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let c = Vec2::new(
                    self.origin.x + (i as f64 + 0.5) * GRID_RES,
                    self.origin.y + (j as f64 + 0.5) * GRID_RES,
                );
                if poly.contains(c) {
                    self.cells[j * self.nx + i] = code;
                }
            }
        }
    }

    fn at(&self, p: Vec2) -> u32 {
        let fx = (p.x - self.origin.x) / GRID_RES;
        let fy = (p.y - self.origin.y) / GRID_RES;
        if fx < 0.0 || fy < 0.0 {
            return G_OFF;
        }
        let (i, j) = (fx as usize, fy as usize);
        if i >= self.nx || j >= self.ny {
            return G_OFF;
        }
        self.cells[j * self.nx + i]
    }
}

#[derive(Debug, Clone)]
pub struct TownMap {
    pub name: String,
    pub lane_width: f64,
    pub sidewalk_width: f64,
    pub junction_half_size: f64,
    pub nodes: Vec<Vec2>,
    pub lanes: Vec<Lane>,
    pub quads: Vec<LaneQuad>,
    pub sidewalks: Vec<(Polygon, Aabb)>,
    pub junctions: Vec<Polygon>,
    pub obstacles: Vec<StaticObstacle>,
    pub connectors: Vec<Connector>,
    /// Connector ids leaving the end of each lane.
    pub successors: Vec<Vec<usize>>,
    pub bounds: Aabb,
    ground: GroundGrid,
    file: MapFile,
}

impl TownMap {
    pub fn from_file(file: MapFile) -> Result<Self> {
        validate_file(&file)?;
        let lw = file.lane_width;
        let sw = file.sidewalk_width;
        let jh = file.junction_half_size;
        let nodes: Vec<Vec2> = file.nodes.iter().map(|p| Vec2::new(p[0], p[1])).collect();

        let mut lanes = Vec::with_capacity(file.roads.len() * 2);
        let mut quads = Vec::new();
        let mut sidewalks = Vec::new();
        for (r, road) in file.roads.iter().enumerate() {
            let mut axis: Vec<Vec2> = vec![nodes[road.from]];
            axis.extend(road.via.iter().map(|p| Vec2::new(p[0], p[1])));
            axis.push(nodes[road.to]);
            for (dir, (from, to)) in [(road.from, road.to), (road.to, road.from)].into_iter().enumerate() {
                let mut pts = axis.clone();
                if dir == 1 {
                    pts.reverse();
                }
                let axis_line = Polyline::new(pts);
                let centerline = axis_line.offset(lw / 2.0);
                let len = centerline.length();
                let (entry_s, exit_s) = (jh, len - jh);
                if exit_s - entry_s < 1.0 {
                    return Err(SimError::InvalidMap(format!("road {r} is too short for its junctions")));
                }
                let id = lanes.len();
                let interior = centerline.slice(entry_s, exit_s);
                let mut lane_quads = Vec::new();
                let mut lane_sidewalk = Vec::new();
                for w in interior.windows(2) {
                    if w[0].dist(w[1]) < 1e-9 {
                        continue;
                    }
                    let polygon = Polygon::strip(w[0], w[1], -lw / 2.0, lw / 2.0);
                    let aabb = polygon.aabb();
                    lane_quads.push(quads.len());
                    quads.push(LaneQuad { lane: id, polygon, aabb, dir: (w[1] - w[0]).normalized() });
                    let side = Polygon::strip(w[0], w[1], lw / 2.0, lw / 2.0 + sw);
                    sidewalks.push((side.clone(), side.aabb()));
                    lane_sidewalk.push(side);
                }
                let sidewalk_path = Polyline::new(interior).offset((lw + sw) / 2.0);
                lanes.push(Lane {
                    id,
                    road: r,
                    from_node: from,
                    to_node: to,
                    opposite: id ^ 1,
                    centerline,
                    entry_s,
                    exit_s,
                    quads: lane_quads,
                    sidewalk: lane_sidewalk,
                    sidewalk_path,
                });
            }
        }

        let mut connectors = Vec::new();
        let mut successors = vec![Vec::new(); lanes.len()];
        for a in &lanes {
            for b in &lanes {
                if b.from_node != a.to_node || b.id == a.opposite {
                    continue;
                }
                let p0 = a.centerline.point_at(a.exit_s);
                let d0 = a.centerline.direction_at(a.exit_s);
                let p3 = b.centerline.point_at(b.entry_s);
                let d3 = b.centerline.direction_at(b.entry_s);
                let angle = normalize_angle(d3.angle() - d0.angle());
                let command = classify_turn(angle);
                successors[a.id].push(connectors.len());
                connectors.push(Connector {
                    from_lane: a.id,
                    to_lane: b.id,
                    node: a.to_node,
                    path: Polyline::new(bezier_connector(p0, d0, p3, d3, CONNECTOR_SAMPLES)),
                    angle,
                    command,
                });
            }
        }

        let junctions: Vec<Polygon> = nodes
            .iter()
            .map(|n| Polygon::axis_rect(*n - Vec2::new(jh, jh), *n + Vec2::new(jh, jh)))
            .collect();
        let obstacles: Vec<StaticObstacle> = file
            .obstacles
            .iter()
            .map(|o| {
                let polygon = Polygon::new(o.points.iter().map(|p| Vec2::new(p[0], p[1])).collect());
                let aabb = polygon.aabb();
                StaticObstacle { kind: o.kind, polygon, aabb }
            })
            .collect();

        let mut all_pts: Vec<Vec2> = nodes.clone();
        for o in &obstacles {
            all_pts.extend(o.polygon.points.iter().copied());
        }
        let bounds = Aabb::of_points(&all_pts).inflate(jh + sw + 5.0);
        let mut ground = GroundGrid::new(bounds);
        for (s, _) in &sidewalks {
            ground.paint(s, G_SIDEWALK);
        }
        for (q, quad) in quads.iter().enumerate() {
            ground.paint(&quad.polygon, G_LANE0 + q as u32);
        }
        for j in &junctions {
            ground.paint(j, G_JUNCTION);
        }
        for o in &obstacles {
            ground.paint(&o.polygon, G_OBSTACLE);
        }

        let map = Self {
            name: file.name.clone(),
            lane_width: lw,
            sidewalk_width: sw,
            junction_half_size: jh,
            nodes,
            lanes,
            quads,
            sidewalks,
            junctions,
            obstacles,
            connectors,
            successors,
            bounds,
            ground,
            file,
        };
        map.check_connectivity()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(MapFile::load(path)?)
    }

    pub fn file(&self) -> &MapFile {
        &self.file
    }

    /// Lane graph where edges are allowed (non-U-turn) lane transitions.
    pub fn lane_graph(&self) -> DiGraph<usize, usize> {
        let mut g = DiGraph::new();
        let idx: Vec<_> = self.lanes.iter().map(|l| g.add_node(l.id)).collect();
        for (c, conn) in self.connectors.iter().enumerate() {
            g.add_edge(idx[conn.from_lane], idx[conn.to_lane], c);
        }
        g
    }

    fn check_connectivity(&self) -> Result<()> {
        let sccs = kosaraju_scc(&self.lane_graph());
        if sccs.len() != 1 {
            return Err(SimError::InvalidMap(format!(
                "lane graph is not strongly connected ({} components)",
                sccs.len()
            )));
        }
        Ok(())
    }

    pub fn connector_between(&self, from: usize, to: usize) -> Option<&Connector> {
        self.successors[from]
            .iter()
            .map(|&c| &self.connectors[c])
            .find(|c| c.to_lane == to)
    }

    /// World pose at a lane position.
    pub fn lane_pose(&self, pos: LanePos) -> (Vec2, f64) {
        let lane = &self.lanes[pos.lane];
        (lane.centerline.point_at(pos.s), lane.centerline.direction_at(pos.s).angle())
    }

    pub fn ground_at(&self, p: Vec2) -> Ground {
        match self.ground.at(p) {
            G_OFF => Ground::Off,
            G_OBSTACLE => Ground::Obstacle,
            G_SIDEWALK => Ground::Sidewalk,
            G_JUNCTION => Ground::Junction,
            q => Ground::Lane((q - G_LANE0) as usize),
        }
    }

    /// Degree (number of roads) at each node.
    pub fn node_degree(&self, node: usize) -> usize {
        self.lanes.iter().filter(|l| l.from_node == node).count()
    }
}

pub fn classify_turn(angle: f64) -> Command {
    if angle.abs() < STRAIGHT_TOLERANCE_DEG.to_radians() {
        Command::Straight
    } else if angle > 0.0 {
        Command::TurnLeft
    } else {
        Command::TurnRight
    }
}

fn validate_file(file: &MapFile) -> Result<()> {
    let bad = |m: String| Err(SimError::InvalidMap(m));
    if file.version != MAP_VERSION {
        return bad(format!("unsupported map version {}", file.version));
    }
    if !(file.lane_width > 0.0 && file.sidewalk_width >= 0.0 && file.junction_half_size > 0.0) {
        return bad("widths must be positive".into());
    }
    if file.nodes.len() < 2 {
        return bad("need at least two nodes".into());
    }
    if file.nodes.iter().flatten().any(|v| !v.is_finite()) {
        return bad("non-finite node coordinate".into());
    }
    for (i, r) in file.roads.iter().enumerate() {
        if r.from >= file.nodes.len() || r.to >= file.nodes.len() {
            return bad(format!("road {i} references a missing node"));
        }
        if r.from == r.to {
            return bad(format!("road {i} is a self-loop"));
        }
    }
    for (i, o) in file.obstacles.iter().enumerate() {
        if o.points.len() < 3 {
            return bad(format!("obstacle {i} has fewer than three points"));
        }
    }
    Ok(())
}

fn rect(kind: ObstacleKind, x0: f64, y0: f64, x1: f64, y1: f64) -> ObstacleDef {
    ObstacleDef { kind, points: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]] }
}

const LANE_WIDTH: f64 = 3.5;
const SIDEWALK_WIDTH: f64 = 3.5;
const JUNCTION_HALF: f64 = 7.0;

/// Builds a town from nodes, roads and block rectangles. Buildings fill each
/// block inset to the sidewalk edge, walls enclose the outer ring, and a pole
/// stands on the sidewalk midway along every third road.
fn build_town(name: &str, nodes: Vec<[f64; 2]>, roads: &[(usize, usize)], blocks: &[[f64; 4]]) -> MapFile {
    let edge = LANE_WIDTH + SIDEWALK_WIDTH;
    let mut obstacles = Vec::new();
    for b in blocks {
        obstacles.push(rect(ObstacleKind::Building, b[0] + edge, b[1] + edge, b[2] - edge, b[3] - edge));
    }
    let xs = nodes.iter().map(|p| p[0]);
    let ys = nodes.iter().map(|p| p[1]);
    let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min) - edge, xs.fold(f64::NEG_INFINITY, f64::max) + edge);
    let (y0, y1) = (ys.clone().fold(f64::INFINITY, f64::min) - edge, ys.fold(f64::NEG_INFINITY, f64::max) + edge);
    let t = 2.0;
    obstacles.push(rect(ObstacleKind::Wall, x0 - t, y0 - t, x1 + t, y0));
    obstacles.push(rect(ObstacleKind::Wall, x0 - t, y1, x1 + t, y1 + t));
    obstacles.push(rect(ObstacleKind::Wall, x0 - t, y0, x0, y1));
    obstacles.push(rect(ObstacleKind::Wall, x1, y0, x1 + t, y1));
    for (i, &(a, b)) in roads.iter().enumerate() {
        if i % 3 != 0 {
            continue;
        }
        let (pa, pb) = (Vec2::new(nodes[a][0], nodes[a][1]), Vec2::new(nodes[b][0], nodes[b][1]));
        let mid = (pa + pb) * 0.5;
        let c = mid + (pb - pa).normalized().right() * (LANE_WIDTH + 0.6);
        obstacles.push(rect(ObstacleKind::Pole, c.x - 0.2, c.y - 0.2, c.x + 0.2, c.y + 0.2));
    }
    MapFile {
        version: MAP_VERSION,
        name: name.to_string(),
        lane_width: LANE_WIDTH,
        sidewalk_width: SIDEWALK_WIDTH,
        junction_half_size: JUNCTION_HALF,
        nodes,
        roads: roads.iter().map(|&(from, to)| RoadDef { from, to, via: Vec::new() }).collect(),
        obstacles,
    }
}

/// Training town: a regular 4×4 grid of four-way, T and corner junctions.
pub fn town_a_file() -> MapFile {
    let xs = [0.0, 60.0, 120.0, 180.0];
    let ys = [0.0, 55.0, 110.0, 165.0];
    let mut nodes = Vec::new();
    for y in ys {
        for x in xs {
            nodes.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * xs.len() + i;
    let mut roads = Vec::new();
    for j in 0..ys.len() {
        for i in 0..xs.len() - 1 {
            roads.push((id(i, j), id(i + 1, j)));
        }
    }
    for i in 0..xs.len() {
        for j in 0..ys.len() - 1 {
            roads.push((id(i, j), id(i, j + 1)));
        }
    }
    let mut blocks = Vec::new();
    for j in 0..ys.len() - 1 {
        for i in 0..xs.len() - 1 {
            blocks.push([xs[i], ys[j], xs[i + 1], ys[j + 1]]);
        }
    }
    build_town("town-a", nodes, &roads, &blocks)
}

/// Held-out town: irregular blocks, mostly T junctions, one four-way.
pub fn town_b_file() -> MapFile {
    let nodes = vec![
        [0.0, 0.0],
        [55.0, 0.0],
        [105.0, 0.0],
        [215.0, 0.0],
        [0.0, 60.0],
        [55.0, 60.0],
        [105.0, 60.0],
        [160.0, 60.0],
        [215.0, 60.0],
        [0.0, 125.0],
        [105.0, 125.0],
        [160.0, 125.0],
        [215.0, 125.0],
    ];
    let roads = [
        (0, 1),
        (1, 2),
        (2, 3),
        (4, 5),
        (5, 6),
        (6, 7),
        (7, 8),
        (9, 10),
        (10, 11),
        (11, 12),
        (0, 4),
        (4, 9),
        (1, 5),
        (2, 6),
        (6, 10),
        (3, 8),
        (8, 12),
        (7, 11),
    ];
    let blocks = [
        [0.0, 0.0, 55.0, 60.0],
        [55.0, 0.0, 105.0, 60.0],
        [105.0, 0.0, 215.0, 60.0],
        [0.0, 60.0, 105.0, 125.0],
        [105.0, 60.0, 160.0, 125.0],
        [160.0, 60.0, 215.0, 125.0],
    ];
    build_town("town-b", nodes, &roads, &blocks)
}

pub fn bundled_map_file(name: &str) -> Option<MapFile> {
    match name {
        "town-a" => Some(town_a_file()),
        "town-b" => Some(town_b_file()),
        _ => None,
    }
}

pub fn bundled_map(name: &str) -> Result<TownMap> {
    let file = bundled_map_file(name).ok_or_else(|| SimError::InvalidMap(format!("unknown bundled map {name:?}")))?;
    TownMap::from_file(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_maps_build() {
        let a = bundled_map("town-a").unwrap();
        assert_eq!(a.lanes.len(), 48);
        let b = bundled_map("town-b").unwrap();
        assert_eq!(b.lanes.len(), 36);
        assert!((0..b.nodes.len()).any(|n| b.node_degree(n) == 3));
    }

    #[test]
    fn opposite_pairing_symmetric_and_disjoint() {
        for name in ["town-a", "town-b"] {
            let m = bundled_map(name).unwrap();
            for l in &m.lanes {
                let o = &m.lanes[l.opposite];
                assert_eq!(o.opposite, l.id);
                for &qa in &l.quads {
                    for &qb in &o.quads {
                        let area = m.quads[qa].polygon.intersection_area(&m.quads[qb].polygon);
                        assert!(area < 1e-9, "{name}: lanes {} and {} overlap by {area}", l.id, o.id);
                    }
                }
            }
        }
    }

    #[test]
    fn lane_keeps_right() {
        let m = bundled_map("town-a").unwrap();
        // Lane 0 runs east along y = 0; keeping right puts it south of the axis.
        let (p, h) = m.lane_pose(LanePos::new(0, 20.0));
        assert!((p.y + 1.75).abs() < 1e-12);
        assert!(h.abs() < 1e-12);
        assert_eq!(m.ground_at(p), Ground::Lane(m.lanes[0].quads[0]));
        assert_eq!(m.ground_at(Vec2::new(20.0, -5.25)), Ground::Sidewalk);
        assert_eq!(m.ground_at(Vec2::new(0.0, 0.0)), Ground::Junction);
        assert_eq!(m.ground_at(Vec2::new(30.0, 30.0)), Ground::Obstacle);
    }

    #[test]
    fn turn_classification() {
        let m = bundled_map("town-a").unwrap();
        // Eastbound lane 0 ends at node 1, an edge node with roads west, east and north.
        let cmds: Vec<Command> = m.successors[0].iter().map(|&c| m.connectors[c].command).collect();
        assert!(cmds.contains(&Command::Straight));
        assert!(cmds.contains(&Command::TurnLeft));
        assert!(!cmds.contains(&Command::TurnRight));
    }

    #[test]
    fn toml_round_trip() {
        let f = town_b_file();
        let text = f.to_toml().unwrap();
        assert_eq!(MapFile::from_toml(&text).unwrap(), f);
        let bumped = text.replacen("version = 1", "version = 9", 1);
        assert!(MapFile::from_toml(&bumped).is_err());
    }

    #[test]
    fn dead_end_rejected() {
        let mut f = town_a_file();
        f.nodes.push([400.0, 0.0]);
        f.roads.push(RoadDef { from: 3, to: 16, via: Vec::new() });
        assert!(matches!(TownMap::from_file(f), Err(SimError::InvalidMap(_))));
    }
}
