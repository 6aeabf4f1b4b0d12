use serde::{Deserialize, Serialize};

use super::geometry::Vec2;
use super::scene::Route;
use super::world::{heading_error, WorldState, MAX_TICKS, PEDESTRIAN_RADIUS};

/// Maximum number of lane-invasion incidents tolerated.
pub const MAX_LANE_INVASIONS: u32 = 5;
/// Radius around the goal that counts as reaching the end point.
pub const GOAL_RADIUS: f64 = 2.0;
pub const END_HEADING_TOLERANCE_DEG: f64 = 15.0;
pub const END_OFFSET_TOLERANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TerminalEvent {
    Collision,
    LaneInvasion,
    PoorEndPose,
    Timeout,
    Success,
}

impl TerminalEvent {
    pub const ALL: [TerminalEvent; 5] = [
        TerminalEvent::Success,
        TerminalEvent::PoorEndPose,
        TerminalEvent::Timeout,
        TerminalEvent::LaneInvasion,
        TerminalEvent::Collision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TerminalEvent::Collision => "Collision",
            TerminalEvent::LaneInvasion => "LaneInvasion",
            TerminalEvent::PoorEndPose => "PoorEndPose",
            TerminalEvent::Timeout => "Timeout",
            TerminalEvent::Success => "Success",
        }
    }
}

pub fn collides(world: &WorldState) -> bool {
    let bbox = world.ego.bbox();
    if world
        .pedestrians
        .iter()
        .any(|p| bbox.distance_to(p.pose.position) < PEDESTRIAN_RADIUS)
    {
        return true;
    }
    let b = world.scene.building_offset();
    let far = b + 1.0e3;
    [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
        .iter()
        .any(|&(sx, sy)| {
            let (x0, x1) = if sx > 0.0 { (b, far) } else { (-far, -b) };
            let (y0, y1) = if sy > 0.0 { (b, far) } else { (-far, -b) };
            bbox.intersects_aabb(Vec2::new(x0, y0), Vec2::new(x1, y1))
        })
}

/// Heading error (degrees) and lateral offset (m) from the goal lane.
pub fn end_pose_error(world: &WorldState, route: &Route) -> (f64, f64) {
    let pose = world.ego.pose;
    let heading_deg = heading_error(pose.heading, route.goal_lane_direction).to_degrees();
    let offset = (pose.position - route.goal)
        .dot(Vec2::right_of(route.goal_lane_direction))
        .abs();
    (heading_deg, offset)
}

/// Terminal event for the current state, if any. Precedence:
/// Collision > LaneInvasion > PoorEndPose/Success > Timeout.
pub fn detect_terminal(world: &WorldState, route: &Route) -> Option<TerminalEvent> {
    if collides(world) {
        return Some(TerminalEvent::Collision);
    }
    if world.lane_invasion_count > MAX_LANE_INVASIONS {
        return Some(TerminalEvent::LaneInvasion);
    }
    if world.ego.pose.position.distance(route.goal) <= GOAL_RADIUS {
        let (heading_deg, offset) = end_pose_error(world, route);
        return Some(
            if heading_deg > END_HEADING_TOLERANCE_DEG || offset > END_OFFSET_TOLERANCE {
                TerminalEvent::PoorEndPose
            } else {
                TerminalEvent::Success
            },
        );
    }
    if world.tick >= MAX_TICKS {
        return Some(TerminalEvent::Timeout);
    }
    None
}
