//! Rule-based high-level commands.
//!
//! Lateral: follow the lane outside the intersection area, announce the
//! route's turn inside it. Longitudinal: hold 20 km/h unless a pedestrian
//! occupies the stretch of route just ahead of the front bumper.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::geometry::{Obb, Vec2};
use crate::sim::scene::{Mission, Route};
use crate::sim::world::{WorldState, PEDESTRIAN_RADIUS};

pub const TARGET_SPEED: f64 = 5.56;
pub const SPEED_MARGIN: f64 = 1.0;
pub const CONFLICT_LOOKAHEAD: f64 = 12.0;
pub const CONFLICT_HALF_WIDTH: f64 = 2.5;
pub const MAX_ROUTE_DISTANCE: f64 = 10.0;
/// Extra clearance for tracking error when deciding a waiting pedestrian is
/// out of the way.
const SWEPT_PATH_MARGIN: f64 = 0.6;
const SWEEP_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LatCmd {
    FollowLane = 0,
    GoStraight = 1,
    TurnLeft = 2,
    TurnRight = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LonCmd {
    Decelerate = 0,
    Maintain = 1,
    Accelerate = 2,
}

impl LatCmd {
    pub const ALL: [LatCmd; 4] = [LatCmd::FollowLane, LatCmd::GoStraight, LatCmd::TurnLeft, LatCmd::TurnRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: i64) -> Result<Self> {
        usize::try_from(i)
            .ok()
            .and_then(|i| Self::ALL.get(i).copied())
            .ok_or_else(|| Error::InvalidCommand(format!("lateral command {i}")))
    }

    pub fn for_mission(m: Mission) -> Self {
        match m {
            Mission::LeftTurn => LatCmd::TurnLeft,
            Mission::GoStraight => LatCmd::GoStraight,
            Mission::RightTurn => LatCmd::TurnRight,
        }
    }
}

impl LonCmd {
    pub const ALL: [LonCmd; 3] = [LonCmd::Decelerate, LonCmd::Maintain, LonCmd::Accelerate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: i64) -> Result<Self> {
        usize::try_from(i)
            .ok()
            .and_then(|i| Self::ALL.get(i).copied())
            .ok_or_else(|| Error::InvalidCommand(format!("longitudinal command {i}")))
    }
}

macro_rules! name_impls {
    ($t:ty, $($v:ident),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $(Self::$v => f.write_str(stringify!($v)),)+
                }
            }
        }

        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $(stringify!($v) => Ok(Self::$v),)+
                    other => Err(Error::InvalidCommand(other.to_string())),
                }
            }
        }
    };
}

name_impls!(LatCmd, FollowLane, GoStraight, TurnLeft, TurnRight);
name_impls!(LonCmd, Decelerate, Maintain, Accelerate);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommandPair {
    pub lat: LatCmd,
    pub lon: LonCmd,
}

impl CommandPair {
    pub fn new(lat: LatCmd, lon: LonCmd) -> Self {
        Self { lat, lon }
    }

    /// All twelve combinations.
    pub fn all() -> impl Iterator<Item = CommandPair> {
        LatCmd::ALL
            .into_iter()
            .flat_map(|lat| LonCmd::ALL.into_iter().map(move |lon| CommandPair { lat, lon }))
    }
}

pub fn lateral_command(world: &WorldState, route: &Route) -> Result<LatCmd> {
    let p = world.ego.pose.position;
    let loc = route.locate(p);
    if loc.distance > MAX_ROUTE_DISTANCE {
        return Err(Error::OffRoute { distance: loc.distance });
    }
    Ok(if world.scene.in_intersection(p) {
        LatCmd::for_mission(route.mission)
    } else {
        LatCmd::FollowLane
    })
}

/// Smallest distance from `p` to the ego box slid along the route over the
/// look-ahead window starting at arc length `s_from`.
pub fn swept_clearance(route: &Route, arc: &[f64], s_from: f64, half_extents: Vec2, p: Vec2) -> f64 {
    let steps = (CONFLICT_LOOKAHEAD / SWEEP_STEP).ceil() as usize;
    (0..=steps)
        .map(|k| {
            let s = s_from + k as f64 * SWEEP_STEP;
            let a = route.point_at(s - 0.25, arc);
            let b = route.point_at(s + 0.25, arc);
            Obb {
                center: route.point_at(s, arc),
                heading: (b - a).angle(),
                half: half_extents,
            }
            .distance_to(p)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Route distance from the front bumper to the nearest pedestrian inside the
/// conflict zone, if any. A pedestrian already holding still for the ego and
/// standing well clear of its swept path does not count: the ego goes first.
pub fn conflict_gap(world: &WorldState, route: &Route, arc: &[f64]) -> Option<f64> {
    let s_ego = route.locate_with(world.ego.pose.position, arc).s;
    let s_front = s_ego + world.ego.half_extents.x;
    world
        .pedestrians
        .iter()
        .filter_map(|ped| {
            let loc = route.locate_with(ped.pose.position, arc);
            let gap = loc.s - s_front;
            let in_zone = loc.distance <= CONFLICT_HALF_WIDTH && (0.0..=CONFLICT_LOOKAHEAD).contains(&gap);
            if !in_zone {
                return None;
            }
            let waiting_aside = ped.disrupted
                && swept_clearance(route, arc, s_ego, world.ego.half_extents, ped.pose.position)
                    > PEDESTRIAN_RADIUS + SWEPT_PATH_MARGIN;
            (!waiting_aside).then_some(gap)
        })
        .min_by(f64::total_cmp)
}

pub fn longitudinal_command(world: &WorldState, route: &Route) -> LonCmd {
    longitudinal_with(world, route, &route.arc_lengths())
}

pub fn longitudinal_with(world: &WorldState, route: &Route, arc: &[f64]) -> LonCmd {
    let v = world.ego.speed;
    if conflict_gap(world, route, arc).is_some() || v > TARGET_SPEED + SPEED_MARGIN {
        LonCmd::Decelerate
    } else if v < TARGET_SPEED - SPEED_MARGIN {
        LonCmd::Accelerate
    } else {
        LonCmd::Maintain
    }
}

pub fn decide(world: &WorldState, route: &Route) -> Result<CommandPair> {
    decide_with(world, route, &route.arc_lengths())
}

pub fn decide_with(world: &WorldState, route: &Route, arc: &[f64]) -> Result<CommandPair> {
    Ok(CommandPair {
        lat: lateral_command(world, route)?,
        lon: longitudinal_with(world, route, arc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::Pose2D;
    use crate::sim::scene::{build_scene, Weather};
    use crate::sim::world::{spawn_episode, EgoState};

    fn world_for(mission: Mission) -> WorldState {
        let scene = build_scene(0).unwrap();
        let route = scene.routes.iter().find(|r| r.mission == mission).unwrap().route_id;
        let mut w = spawn_episode(&scene, route, Weather::ClearNoon, 11).unwrap();
        w.pedestrians.clear();
        w
    }

    fn place(w: &mut WorldState, s: f64, speed: f64) {
        let arc = w.route.arc_lengths();
        let p = w.route.point_at(s, &arc);
        let q = w.route.point_at(s + 0.5, &arc);
        w.ego = EgoState::new(Pose2D::new(p, (q - p).angle()), speed);
    }

    /// Arc length where the route enters the intersection area.
    fn entry_s(w: &WorldState) -> f64 {
        let arc = w.route.arc_lengths();
        let i = w.route.waypoints.iter().position(|wp| w.scene.in_intersection(wp.position)).unwrap();
        arc[i]
    }

    #[test]
    fn lateral_follows_lane_outside_and_turns_inside() {
        let mut w = world_for(Mission::LeftTurn);
        let route = w.route.clone();
        let entry = entry_s(&w);
        place(&mut w, entry - 15.0, 3.0);
        assert_eq!(lateral_command(&w, &route).unwrap(), LatCmd::FollowLane);
        place(&mut w, entry + 3.0, 3.0);
        assert_eq!(lateral_command(&w, &route).unwrap(), LatCmd::TurnLeft);

        let mut w = world_for(Mission::RightTurn);
        let route = w.route.clone();
        place(&mut w, route.length() - 3.0, 3.0);
        assert_eq!(lateral_command(&w, &route).unwrap(), LatCmd::FollowLane);
    }

    #[test]
    fn far_off_route_is_an_error() {
        let mut w = world_for(Mission::GoStraight);
        let route = w.route.clone();
        w.ego.pose.position = w.ego.pose.position + Vec2::right_of(w.ego.pose.heading) * 12.0;
        assert!(matches!(lateral_command(&w, &route), Err(Error::OffRoute { .. })));
    }

    #[test]
    fn longitudinal_speed_bands() {
        let mut w = world_for(Mission::GoStraight);
        let route = w.route.clone();
        place(&mut w, 5.0, 7.0);
        assert_eq!(longitudinal_command(&w, &route), LonCmd::Decelerate);
        place(&mut w, 5.0, 5.5);
        assert_eq!(longitudinal_command(&w, &route), LonCmd::Maintain);
        place(&mut w, 5.0, 2.0);
        assert_eq!(longitudinal_command(&w, &route), LonCmd::Accelerate);
    }

    #[test]
    fn pedestrian_in_corridor_forces_deceleration() {
        let scene = build_scene(0).unwrap();
        let mut w = spawn_episode(&scene, 0, Weather::ClearNoon, 11).unwrap();
        w.pedestrians.truncate(1);
        let route = w.route.clone();
        place(&mut w, 5.0, 5.5);
        let ahead = w.ego.pose.to_world(8.0, 0.5);
        w.pedestrians[0].pose.position = ahead;
        assert_eq!(longitudinal_command(&w, &route), LonCmd::Decelerate);
        let gap = conflict_gap(&w, &route, &route.arc_lengths()).unwrap();
        assert!((gap - (8.0 - 2.25)).abs() < 0.05, "{gap}");
        // Behind the bumper or beyond the look-ahead does not count.
        w.pedestrians[0].pose.position = w.ego.pose.to_world(15.0, 0.0);
        assert_eq!(longitudinal_command(&w, &route), LonCmd::Maintain);
        w.pedestrians[0].pose.position = w.ego.pose.to_world(8.0, 3.0);
        assert_eq!(longitudinal_command(&w, &route), LonCmd::Maintain);
    }

    #[test]
    fn command_encodings_are_fixed() {
        assert_eq!(LatCmd::TurnRight.index(), 3);
        assert_eq!(LonCmd::Accelerate.index(), 2);
        assert_eq!(LatCmd::from_index(2).unwrap(), LatCmd::TurnLeft);
        assert!(LatCmd::from_index(4).is_err());
        assert!(LonCmd::from_index(-1).is_err());
        assert_eq!("Maintain".parse::<LonCmd>().unwrap(), LonCmd::Maintain);
        assert_eq!(CommandPair::all().count(), 12);
    }
}
