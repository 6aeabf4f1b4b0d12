//! Scripted demonstrator: pure pursuit on the route plus a speed controller
//! that stops short of pedestrians in the conflict zone.

use crate::decision::{conflict_gap, TARGET_SPEED};
use crate::error::{Error, Result};
use crate::sim::geometry::Vec2;
use crate::sim::scene::Route;
use crate::sim::world::{Action, WorldState, ACCEL_MAX, ACCEL_MIN, MAX_STEER_ANGLE};

const LOOKAHEAD_BASE: f64 = 4.0;
const LOOKAHEAD_GAIN: f64 = 0.3;
const SPEED_GAIN: f64 = 0.5;
/// Commands saturate here, just inside the harsh-action threshold.
pub const COMMAND_LIMIT: f64 = 0.9;
const STOP_MARGIN: f64 = 2.0;
const MIN_BRAKE: f64 = 2.0;
const BRAKE_SAFETY: f64 = 1.2;
/// Beyond this distance from the route the expert refuses to drive.
pub const MAX_OFF_ROUTE: f64 = 10.0;

pub fn expert_action(world: &WorldState, route: &Route) -> Result<Action> {
    expert_action_with(world, route, &route.arc_lengths())
}

pub fn expert_action_with(world: &WorldState, route: &Route, arc: &[f64]) -> Result<Action> {
    let ego = &world.ego;
    let loc = route.locate_with(ego.pose.position, arc);
    if loc.distance > MAX_OFF_ROUTE {
        return Err(Error::OffRoute { distance: loc.distance });
    }
    let v = ego.speed;

    let lookahead = LOOKAHEAD_BASE + LOOKAHEAD_GAIN * v;
    let target = route.point_at(loc.s + lookahead, arc);
    let to_target = target - ego.pose.position;
    let dist = to_target.norm().max(1e-6);
    let dir = Vec2::from_heading(ego.pose.heading);
    let alpha = dir.cross(to_target).atan2(dir.dot(to_target));
    let delta = (2.0 * ego.wheelbase * alpha.sin() / dist).atan();
    let steer = (delta / MAX_STEER_ANGLE).clamp(-COMMAND_LIMIT, COMMAND_LIMIT);

    let accel = match conflict_gap(world, route, arc) {
        Some(gap) => {
            let d_stop = gap - STOP_MARGIN;
            let required = if d_stop > 0.05 { v * v / (2.0 * d_stop) } else { f64::INFINITY };
            let decel = (BRAKE_SAFETY * required).max(MIN_BRAKE);
            command_for(-decel)
        }
        None => SPEED_GAIN * (TARGET_SPEED - v),
    }
    .clamp(-COMMAND_LIMIT, COMMAND_LIMIT);
    Ok(Action::new(steer, accel))
}

fn command_for(accel: f64) -> f64 {
    if accel.is_infinite() {
        return if accel > 0.0 { 1.0 } else { -1.0 };
    }
    (accel - ACCEL_MIN) / (0.5 * (ACCEL_MAX - ACCEL_MIN)) - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::Pose2D;
    use crate::sim::scene::{build_scene, Mission, Weather};
    use crate::sim::world::{accel_map, spawn_episode, EgoState};

    fn straight_world() -> WorldState {
        let scene = build_scene(0).unwrap();
        let id = scene.routes.iter().find(|r| r.mission == Mission::GoStraight).unwrap().route_id;
        let mut w = spawn_episode(&scene, id, Weather::ClearNoon, 2).unwrap();
        w.pedestrians.truncate(1);
        // Park the remaining pedestrian far away on the sidewalk.
        w.pedestrians[0].pose.position = Vec2::new(1.0e3, 1.0e3);
        let start = w.route.start_pose();
        w.ego = EgoState::new(Pose2D::new(w.route.waypoints[3].position, start.heading), TARGET_SPEED);
        w
    }

    #[test]
    fn aligned_on_straight_lane_at_target_speed_is_nearly_idle() {
        let w = straight_world();
        let a = expert_action(&w, &w.route).unwrap();
        assert!(a.steer.abs() < 0.05, "{a:?}");
        assert!(a.accel.abs() < 0.05, "{a:?}");
    }

    #[test]
    fn left_of_centerline_steers_right() {
        let mut w = straight_world();
        let h = w.ego.pose.heading;
        w.ego.pose.position = w.ego.pose.position - Vec2::right_of(h) * 0.5;
        let a = expert_action(&w, &w.route).unwrap();
        assert!(a.steer > 0.0, "{a:?}");
        w.ego.pose.position = w.ego.pose.position + Vec2::right_of(h) * 1.0;
        assert!(expert_action(&w, &w.route).unwrap().steer < 0.0);
    }

    #[test]
    fn brakes_hard_for_pedestrian_ahead_until_stopped() {
        let mut w = straight_world();
        let route = w.route.clone();
        let ped = w.ego.pose.to_world(6.0, 0.0);
        w.pedestrians[0].pose.position = ped;
        // Fixed obstacle: step only the ego under the expert's commands.
        let first = expert_action(&w, &route).unwrap();
        assert_eq!(first.accel, -COMMAND_LIMIT);
        for _ in 0..60 {
            let a = expert_action(&w, &route).unwrap();
            assert!(a.accel < 0.0 && accel_map(a.accel) <= -MIN_BRAKE + 1e-9, "{a:?}");
            w.ego = crate::sim::world::ego_step(&w.ego, a, 0.1).unwrap();
        }
        assert_eq!(w.ego.speed, 0.0);
        assert!(w.ego.bbox().distance_to(ped) > 0.35);
        assert!(accel_map(-COMMAND_LIMIT) < -5.0);
    }

    #[test]
    fn stays_within_harsh_threshold() {
        let w = straight_world();
        let mut w2 = w.clone();
        w2.ego.speed = 0.0;
        w2.ego.pose.heading += 0.8;
        let a = expert_action(&w2, &w2.route).unwrap();
        assert_eq!(a.steer, -COMMAND_LIMIT);
        assert_eq!(a.accel, COMMAND_LIMIT);
    }

    #[test]
    fn refuses_far_off_route() {
        let mut w = straight_world();
        w.ego.pose.position = w.ego.pose.position + Vec2::right_of(w.ego.pose.heading) * 11.0;
        assert!(expert_action(&w, &w.route.clone()).is_err());
    }
}
