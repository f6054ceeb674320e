use serde::{Deserialize, Serialize};

use crate::agents::DynamicObstacle;
use crate::map::TownMap;
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CollisionKind {
    #[default]
    None,
    VehicleOrPedestrian,
    Other,
}

/// Simulator measurements after a step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurements {
    pub speed_kmh: f64,
    pub collision_kind: CollisionKind,
    /// Fraction of the footprint area over sidewalks.
    pub sidewalk_overlap: f64,
    /// Fraction of the footprint area over lanes running against the heading.
    pub opposite_overlap: f64,
    pub distance_to_goal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Infractions {
    pub collision_kind: CollisionKind,
    pub sidewalk_overlap: f64,
    pub opposite_overlap: f64,
}

/// Overlap fractions by exact polygon clipping; collisions checked against
/// dynamic obstacles first, then static ones.
pub fn detect_infractions(map: &TownMap, vehicle: &VehicleState, obstacles: &[DynamicObstacle]) -> Infractions {
    let fp = vehicle.footprint();
    let bb = fp.aabb();
    let area = fp.area();
    let fwd = vehicle.forward();

    let mut sidewalk = 0.0;
    for (poly, pbb) in &map.sidewalks {
        if pbb.overlaps(&bb) {
            sidewalk += fp.intersection_area(poly);
        }
    }
    let mut opposite = 0.0;
    for q in &map.quads {
        if q.dir.dot(fwd) < 0.0 && q.aabb.overlaps(&bb) {
            opposite += fp.intersection_area(&q.polygon);
        }
    }

    let collision_kind = if obstacles.iter().any(|o| o.intersects(&fp)) {
        CollisionKind::VehicleOrPedestrian
    } else if map.obstacles.iter().any(|o| o.aabb.overlaps(&bb) && o.polygon.intersects(&fp)) {
        CollisionKind::Other
    } else {
        CollisionKind::None
    };

    Infractions {
        collision_kind,
        sidewalk_overlap: (sidewalk / area).clamp(0.0, 1.0),
        opposite_overlap: (opposite / area).clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::VehicleParams;
    use crate::geometry::Vec2;
    use crate::map::bundled_map;

    fn car(x: f64, y: f64, heading: f64) -> VehicleState {
        VehicleState::new(Vec2::new(x, y), heading, 0.0, &VehicleParams::default())
    }

    #[test]
    fn inside_own_lane_is_clean() {
        let map = bundled_map("town-a").unwrap();
        let inf = detect_infractions(&map, &car(30.0, -1.75, 0.0), &[]);
        assert_eq!(inf, Infractions::default());
    }

    #[test]
    fn half_on_sidewalk() {
        let map = bundled_map("town-a").unwrap();
        // The eastbound lane's sidewalk edge is at y = -3.5; width 1.8 m.
        let inf = detect_infractions(&map, &car(30.0, -3.5, 0.0), &[]);
        assert!((inf.sidewalk_overlap - 0.5).abs() < 1e-9, "{}", inf.sidewalk_overlap);
        assert_eq!(inf.opposite_overlap, 0.0);
    }

    #[test]
    fn straddling_centerline() {
        let map = bundled_map("town-a").unwrap();
        let inf = detect_infractions(&map, &car(30.0, 0.0, 0.0), &[]);
        assert!((inf.opposite_overlap - 0.5).abs() < 1e-9);
        // Same spot facing west: the other half now counts.
        let inf = detect_infractions(&map, &car(30.0, 0.0, std::f64::consts::PI), &[]);
        assert!((inf.opposite_overlap - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pedestrian_collision() {
        let map = bundled_map("town-a").unwrap();
        let ped = DynamicObstacle::Pedestrian { center: Vec2::new(32.2, -1.75), radius: 0.35 };
        let inf = detect_infractions(&map, &car(30.0, -1.75, 0.0), &[ped]);
        assert_eq!(inf.collision_kind, CollisionKind::VehicleOrPedestrian);
        let far = DynamicObstacle::Pedestrian { center: Vec2::new(32.5, -1.75), radius: 0.35 };
        let inf = detect_infractions(&map, &car(30.0, -1.75, 0.0), &[far]);
        assert_eq!(inf.collision_kind, CollisionKind::None);
    }

    #[test]
    fn building_collision_is_other() {
        let map = bundled_map("town-a").unwrap();
        let inf = detect_infractions(&map, &car(30.0, 7.5, 0.0), &[]);
        assert_eq!(inf.collision_kind, CollisionKind::Other);
    }
}
