use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::geometry::{project_on_segment, wrap_angle, Obb, Pose2D, Vec2};
use super::scene::{Route, SceneSpec, Weather};
use super::SimRng;
use crate::error::{Error, Result};

/// Simulation step in seconds.
pub const DT: f64 = 0.1;
pub const MAX_TICKS: u32 = 1000;
pub const MAX_STEER_ANGLE: f64 = 0.5;
pub const ACCEL_MIN: f64 = -6.0;
pub const ACCEL_MAX: f64 = 3.0;
pub const SPEED_MAX: f64 = 15.0;
pub const WHEELBASE: f64 = 2.5;
pub const EGO_HALF_EXTENTS: Vec2 = Vec2::new(2.25, 0.9);
pub const PEDESTRIAN_RADIUS: f64 = 0.35;
pub const PEDESTRIAN_MAX_SPEED: f64 = 2.0;
/// Pedestrians react to the ego inside this distance from its box.
pub const INTERACTION_RADIUS: f64 = 3.0;
pub const LANE_INVASION_REFRACTORY: u32 = 10;

const YIELD_DECEL: f64 = 3.0;
const RESUME_ACCEL: f64 = 1.5;
const DISRUPT_BASE_SPEED: f64 = 0.5;
const DISRUPT_WALK_SPEED: f64 = 0.2;
/// Slack beyond the pedestrian disc when checking whether the ego blocks the
/// walking path.
const PATH_CLEARANCE: f64 = 0.05;
/// Route distance from the front bumper within which an approaching car makes
/// pedestrians hold back from the corridor.
const COURTESY_DISTANCE: f64 = 8.0;
/// Distance from the route where courteous pedestrians hold, just outside the
/// corridor the driver watches.
const HOLD_LINE: f64 = 2.6;

/// Steering and acceleration commands, nominally in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub steer: f64,
    pub accel: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        steer: 0.0,
        accel: 0.0,
    };

    pub fn new(steer: f64, accel: f64) -> Self {
        Self { steer, accel }
    }

    /// Both components clipped to [-1, 1].
    pub fn clipped(self) -> Self {
        Self {
            steer: self.steer.clamp(-1.0, 1.0),
            accel: self.accel.clamp(-1.0, 1.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.steer.is_finite() && self.accel.is_finite()
    }
}

/// Maps an acceleration command in [-1, 1] linearly onto [-6, +3] m/s².
pub fn accel_map(a: f64) -> f64 {
    ACCEL_MIN + (a + 1.0) * 0.5 * (ACCEL_MAX - ACCEL_MIN)
}

/// Inverse of [`accel_map`].
pub fn accel_command_for(accel: f64) -> f64 {
    (accel - ACCEL_MIN) / (0.5 * (ACCEL_MAX - ACCEL_MIN)) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose2D,
    pub speed: f64,
    pub wheelbase: f64,
    pub half_extents: Vec2,
}

impl EgoState {
    pub fn new(pose: Pose2D, speed: f64) -> Self {
        Self {
            pose,
            speed,
            wheelbase: WHEELBASE,
            half_extents: EGO_HALF_EXTENTS,
        }
    }

    pub fn bbox(&self) -> Obb {
        Obb {
            center: self.pose.position,
            heading: self.pose.heading,
            half: self.half_extents,
        }
    }
}

/// Kinematic bicycle update. The position advances along the pre-update
/// heading at the pre-update speed.
pub fn ego_step(ego: &EgoState, action: Action, dt: f64) -> Result<EgoState> {
    if !(action.is_finite() && dt.is_finite() && ego.speed.is_finite() && ego.pose.position.is_finite() && ego.pose.heading.is_finite()) {
        return Err(Error::NonFinite("ego_step input".into()));
    }
    if dt <= 0.0 {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let v = ego.speed;
    let heading = ego.pose.heading;
    let position = ego.pose.position + Vec2::from_heading(heading) * (v * dt);
    let yaw_rate = v / ego.wheelbase * (MAX_STEER_ANGLE * action.steer).tan();
    let speed = (v + accel_map(action.accel) * dt).clamp(0.0, SPEED_MAX);
    Ok(EgoState {
        pose: Pose2D::new(position, heading + yaw_rate * dt),
        speed,
        ..*ego
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub id: u32,
    pub pose: Pose2D,
    pub walk_speed: f64,
    pub crosswalk_id: u32,
    /// Fraction of the crossing completed.
    pub progress: f64,
    pub disrupted: bool,
    pub base_speed: f64,
    /// Seconds left waiting on the curb before stepping off.
    pub delay: f64,
    /// Walks from the crosswalk's `end` to its `start`.
    pub reversed: bool,
}

impl PedestrianState {
    /// Walking (off the curb and not yet across).
    pub fn is_crossing(&self) -> bool {
        self.delay <= 0.0 && self.progress < 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub scene: SceneSpec,
    pub route: Route,
    pub weather: Weather,
    pub ego: EgoState,
    pub pedestrians: Vec<PedestrianState>,
    pub tick: u32,
    pub rng_seed: u64,
    pub lane_invasion_count: u32,
    pub last_invasion_tick: Option<u32>,
    /// Number of pedestrian disruption onsets so far.
    pub disruption_events: u32,
}

/// Where a point sits relative to a route polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteLocation {
    /// Index of the nearest waypoint.
    pub nearest: usize,
    /// Arc length of the projection onto the polyline.
    pub s: f64,
    /// Distance from the polyline.
    pub distance: f64,
}

impl Route {
    pub fn locate(&self, p: Vec2) -> RouteLocation {
        self.locate_with(p, &self.arc_lengths())
    }

    pub fn locate_with(&self, p: Vec2, arc: &[f64]) -> RouteLocation {
        let wps = &self.waypoints;
        let nearest = wps
            .iter()
            .enumerate()
            .map(|(i, w)| (i, w.position.distance(p)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        let mut best = (f64::INFINITY, arc[nearest]);
        for i in [nearest.saturating_sub(1), nearest] {
            if i + 1 >= wps.len() {
                continue;
            }
            let (q, t) = project_on_segment(p, wps[i].position, wps[i + 1].position);
            let d = q.distance(p);
            if d < best.0 {
                best = (d, arc[i] + t * (arc[i + 1] - arc[i]));
            }
        }
        if !best.0.is_finite() {
            best = (wps[nearest].position.distance(p), arc[nearest]);
        }
        RouteLocation {
            nearest,
            s: best.1,
            distance: best.0,
        }
    }

    /// Point at arc length `s` (clamped to the route).
    pub fn point_at(&self, s: f64, arc: &[f64]) -> Vec2 {
        let wps = &self.waypoints;
        let last = wps.len() - 1;
        if s <= 0.0 {
            return wps[0].position;
        }
        if s >= arc[last] {
            return wps[last].position;
        }
        let i = arc.partition_point(|&a| a <= s).saturating_sub(1).min(last - 1);
        let seg = arc[i + 1] - arc[i];
        let t = if seg > 0.0 { (s - arc[i]) / seg } else { 0.0 };
        wps[i].position + (wps[i + 1].position - wps[i].position) * t
    }
}

fn crosswalk_endpoints(scene: &SceneSpec, ped: &PedestrianState) -> (Vec2, Vec2) {
    let cw = &scene.crosswalks[ped.crosswalk_id as usize];
    if ped.reversed {
        (cw.end, cw.start)
    } else {
        (cw.start, cw.end)
    }
}

fn place_pedestrian(scene: &SceneSpec, ped: &mut PedestrianState) {
    let (a, b) = crosswalk_endpoints(scene, ped);
    ped.pose = Pose2D::new(a + (b - a) * ped.progress, (b - a).angle());
}

/// Spawns an episode: ego at the route start with zero speed and 20–30
/// pedestrians drawn from `seed`. One pedestrian is timed to reach the ego's
/// lane on the exit crosswalk roughly when the ego gets there.
pub fn spawn_episode(scene: &SceneSpec, route_id: u32, weather: Weather, seed: u64) -> Result<WorldState> {
    let route = scene.route(route_id)?.clone();
    let mut rng = SimRng::seed_from_u64(seed);
    let count = rng.random_range(20..=30u32);
    let arc = route.arc_lengths();

    // Crossings the route passes, with the route arc length and the lateral
    // coordinate (along start->end) of the ego lane on that crossing.
    let mut on_route: Vec<(u32, f64, f64)> = Vec::new();
    for cw in &scene.crosswalks {
        let hit = route
            .waypoints
            .iter()
            .zip(&arc)
            .find(|(w, _)| cw.contains(w.position, scene.half_width()));
        if let Some((w, &s)) = hit {
            let axis = cw.end - cw.start;
            let across = (w.position - cw.start).dot(axis) / axis.dot(axis);
            on_route.push((cw.id, s, across));
        }
    }

    let mut pedestrians = Vec::with_capacity(count as usize);
    for id in 0..count {
        let base_speed = rng.random_range(0.9..1.6);
        let mut ped = PedestrianState {
            id,
            pose: Pose2D::default(),
            walk_speed: base_speed,
            crosswalk_id: rng.random_range(0..4u32),
            progress: 0.0,
            disrupted: false,
            base_speed,
            delay: 0.0,
            reversed: rng.random_bool(0.5),
        };
        let timed = (id as usize) < on_route.len();
        if timed {
            // Guaranteed encounters, the exit crossing first.
            let (cw_id, s, across) = on_route[on_route.len() - 1 - id as usize];
            ped.crosswalk_id = cw_id;
            let cw = &scene.crosswalks[cw_id as usize];
            let length = cw.start.distance(cw.end);
            let to_lane = if ped.reversed { 1.0 - across } else { across } * length;
            let ego_arrival = 2.0 + s / 4.9;
            let jitter = rng.random_range(-1.5..1.5);
            ped.delay = (ego_arrival - to_lane / base_speed + jitter).max(0.0);
        } else if rng.random_bool(0.25) {
            ped.progress = rng.random_range(0.0..0.9);
        } else {
            ped.delay = rng.random_range(0.0..50.0);
        }
        place_pedestrian(scene, &mut ped);
        pedestrians.push(ped);
    }

    Ok(WorldState {
        scene: scene.clone(),
        ego: EgoState::new(route.start_pose(), 0.0),
        route,
        weather,
        pedestrians,
        tick: 0,
        rng_seed: seed,
        lane_invasion_count: 0,
        last_invasion_tick: None,
        disruption_events: 0,
    })
}

fn should_yield(ped: &PedestrianState, ego: &EgoState) -> bool {
    let bbox = ego.bbox();
    if bbox.distance_to(ped.pose.position) >= INTERACTION_RADIUS {
        return false;
    }
    // A moving ego bearing down on the pedestrian.
    let local = ego.pose.to_local(ped.pose.position);
    if ego.speed > 0.5 && local.x > 0.0 && local.y.abs() < ego.half_extents.y + 1.5 {
        return true;
    }
    // The ego blocks the next two meters of the walking path.
    let dir = Vec2::from_heading(ped.pose.heading);
    (1..=4).any(|k| {
        let p = ped.pose.position + dir * (0.5 * k as f64);
        bbox.distance_to(p) < PEDESTRIAN_RADIUS + PATH_CLEARANCE
    })
}

/// A pedestrian about to step into the route corridor ahead of an
/// approaching car lets it pass first. This is a voluntary pause, not a
/// forced stop, and it happens before the pedestrian enters the corridor.
fn waits_for_ego(ped: &PedestrianState, ego: &EgoState, route: &Route, arc: &[f64], s_front: f64) -> bool {
    if ego.speed <= 0.5 {
        return false;
    }
    let loc = route.locate_with(ped.pose.position, arc);
    if !(HOLD_LINE..HOLD_LINE + 1.0).contains(&loc.distance) {
        return false;
    }
    let gap = loc.s - s_front;
    if !(-1.0..=COURTESY_DISTANCE).contains(&gap) {
        return false;
    }
    let next = ped.pose.position + Vec2::from_heading(ped.pose.heading) * 0.3;
    route.locate_with(next, arc).distance < loc.distance
}

/// Advances every pedestrian along its crossing. Pedestrians close to the ego
/// slow toward a stop; a stop forced on a normally walking pedestrian sets
/// `disrupted` and counts one disruption event at its onset.
pub fn pedestrians_step(world: &mut WorldState, dt: f64) {
    let ego = world.ego;
    let arc = world.route.arc_lengths();
    let s_front = world.route.locate_with(ego.pose.position, &arc).s + ego.half_extents.x;
    for i in 0..world.pedestrians.len() {
        let ped = &mut world.pedestrians[i];
        if ped.delay > 0.0 {
            ped.delay = (ped.delay - dt).max(0.0);
            ped.disrupted = false;
            continue;
        }
        if ped.progress >= 1.0 {
            ped.disrupted = false;
            continue;
        }
        let yielding = should_yield(ped, &ego);
        ped.walk_speed = if yielding || waits_for_ego(ped, &ego, &world.route, &arc, s_front) {
            (ped.walk_speed - YIELD_DECEL * dt).max(0.0)
        } else {
            (ped.walk_speed + RESUME_ACCEL * dt).min(ped.base_speed)
        }
        .clamp(0.0, PEDESTRIAN_MAX_SPEED);
        let cw = &world.scene.crosswalks[ped.crosswalk_id as usize];
        let length = cw.start.distance(cw.end);
        ped.progress = (ped.progress + ped.walk_speed * dt / length).min(1.0);
        let disrupted = yielding && ped.base_speed >= DISRUPT_BASE_SPEED && ped.walk_speed < DISRUPT_WALK_SPEED;
        if disrupted && !ped.disrupted {
            world.disruption_events += 1;
        }
        ped.disrupted = disrupted;
        let mut p = ped.clone();
        place_pedestrian(&world.scene, &mut p);
        world.pedestrians[i] = p;
    }
}

/// Whether `p` lies where the ego may legally drive on this route: its own
/// carriageway on the approach and exit arms, or the intersection area.
pub fn in_route_lanes(scene: &SceneSpec, route: &Route, p: Vec2) -> bool {
    if scene.in_intersection(p) {
        return true;
    }
    let w = scene.half_width();
    let reach = w + super::scene::ARM_LENGTH;
    let entry = {
        let along = p.dot(Vec2::from_heading(route.entry_heading));
        let lat = p.dot(Vec2::right_of(route.entry_heading));
        along <= -w && along >= -reach && (0.0..=w).contains(&lat)
    };
    let exit = {
        let along = p.dot(Vec2::from_heading(route.exit_heading));
        let lat = p.dot(Vec2::right_of(route.exit_heading));
        along >= w && along <= reach && (0.0..=w).contains(&lat)
    };
    entry || exit
}

fn update_lane_invasion(world: &mut WorldState) {
    let invading = world
        .ego
        .bbox()
        .corners()
        .iter()
        .any(|&c| !in_route_lanes(&world.scene, &world.route, c));
    if !invading {
        return;
    }
    let ready = match world.last_invasion_tick {
        None => true,
        Some(t) => world.tick - t >= LANE_INVASION_REFRACTORY,
    };
    if ready {
        world.lane_invasion_count += 1;
        world.last_invasion_tick = Some(world.tick);
    }
}

/// One simulation tick: ego, pedestrians, tick counter and lane bookkeeping.
pub fn step_world(world: &mut WorldState, action: Action) -> Result<()> {
    world.ego = ego_step(&world.ego, action.clipped(), DT)?;
    pedestrians_step(world, DT);
    world.tick = (world.tick + 1).min(MAX_TICKS);
    update_lane_invasion(world);
    Ok(())
}

/// Absolute heading difference folded into [0, π].
pub fn heading_error(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::build_scene;

    fn ego_at(x: f64, y: f64, heading: f64, speed: f64) -> EgoState {
        EgoState::new(Pose2D::new(Vec2::new(x, y), heading), speed)
    }

    #[test]
    fn straight_step_advances_one_meter() {
        let e = ego_step(&ego_at(0.0, 0.0, 0.0, 10.0), Action::ZERO, 0.1).unwrap();
        assert!((e.pose.position.x - 1.0).abs() < 1e-12);
        assert_eq!(e.pose.position.y, 0.0);
        assert_eq!(e.pose.heading, 0.0);
    }

    #[test]
    fn full_right_steer_heading_rate() {
        let e = ego_step(&ego_at(0.0, 0.0, 0.0, 5.0), Action::new(1.0, 0.0), 0.1).unwrap();
        // (5 / 2.5) * tan(0.5) * 0.1
        assert!((e.pose.heading - 0.109_260_497_1).abs() < 1e-9);
    }

    #[test]
    fn no_reverse_from_standstill() {
        let e = ego_step(&ego_at(0.0, 0.0, 0.0, 0.0), Action::new(0.0, -1.0), 0.1).unwrap();
        assert_eq!(e.speed, 0.0);
    }

    #[test]
    fn accel_map_endpoints() {
        assert_eq!(accel_map(-1.0), -6.0);
        assert_eq!(accel_map(1.0), 3.0);
        assert!((accel_command_for(accel_map(0.3)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn non_finite_action_rejected() {
        let r = ego_step(&ego_at(0.0, 0.0, 0.0, 1.0), Action::new(f64::NAN, 0.0), 0.1);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn spawn_is_deterministic_and_seed_sensitive() {
        let scene = build_scene(0).unwrap();
        let a = spawn_episode(&scene, 0, Weather::ClearNoon, 7).unwrap();
        let b = spawn_episode(&scene, 0, Weather::ClearNoon, 7).unwrap();
        let c = spawn_episode(&scene, 0, Weather::ClearNoon, 8).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(
            serde_json::to_string(&a.pedestrians).unwrap(),
            serde_json::to_string(&c.pedestrians).unwrap()
        );
        assert_eq!(a.ego.speed, 0.0);
        assert_eq!(a.ego.pose, a.route.start_pose());
    }

    #[test]
    fn unknown_route_rejected() {
        let scene = build_scene(0).unwrap();
        assert!(matches!(
            spawn_episode(&scene, 99, Weather::ClearNoon, 1),
            Err(Error::UnknownRoute { scene: 0, route: 99 })
        ));
    }

    #[test]
    fn distant_pedestrian_unaffected() {
        let scene = build_scene(0).unwrap();
        let mut w = spawn_episode(&scene, 0, Weather::ClearNoon, 3).unwrap();
        w.pedestrians.truncate(1);
        let p = &mut w.pedestrians[0];
        p.delay = 0.0;
        p.progress = 0.5;
        p.base_speed = 1.2;
        p.walk_speed = 1.2;
        place_pedestrian(&w.scene, p);
        // 10 m straight toward the pedestrian, moving.
        let ped = w.pedestrians[0].pose.position;
        let heading = (ped - Vec2::new(ped.x + 10.0, ped.y)).angle();
        w.ego = ego_at(ped.x + 10.0 + EGO_HALF_EXTENTS.x, ped.y, heading, 5.0);
        pedestrians_step(&mut w, DT);
        assert_eq!(w.pedestrians[0].walk_speed, 1.2);
        assert!(!w.pedestrians[0].disrupted);
    }

    #[test]
    fn pedestrian_ahead_of_moving_ego_yields_and_is_disrupted() {
        let scene = build_scene(0).unwrap();
        let mut w = spawn_episode(&scene, 0, Weather::ClearNoon, 3).unwrap();
        let cw = w.scene.crosswalks[0];
        // Pedestrian in the middle of crossing 0; ego 2 m short of it
        // (measured from the front bumper), driving toward it.
        w.pedestrians.truncate(1);
        let p = &mut w.pedestrians[0];
        p.crosswalk_id = 0;
        p.delay = 0.0;
        p.progress = 0.5;
        p.base_speed = 1.2;
        p.walk_speed = 1.2;
        p.reversed = false;
        place_pedestrian(&w.scene, p);
        let ped_pos = w.pedestrians[0].pose.position;
        let toward = cw.arm_heading + std::f64::consts::PI;
        let back = Vec2::from_heading(toward) * -(2.0 + EGO_HALF_EXTENTS.x);
        w.ego = ego_at(ped_pos.x + back.x, ped_pos.y + back.y, toward, 4.0);
        let mut flagged = false;
        for _ in 0..10 {
            pedestrians_step(&mut w, DT);
            flagged |= w.pedestrians[0].disrupted;
        }
        assert!(w.pedestrians[0].walk_speed < 0.2);
        assert!(flagged);
        assert_eq!(w.disruption_events, 1);
    }

    #[test]
    fn parked_far_ego_never_disrupts() {
        let scene = build_scene(1).unwrap();
        let mut w = spawn_episode(&scene, 2, Weather::ClearNoon, 11).unwrap();
        w.ego = ego_at(50.0, 50.0, 0.0, 0.0);
        for _ in 0..MAX_TICKS {
            pedestrians_step(&mut w, DT);
            assert!(w.pedestrians.iter().all(|p| !p.disrupted));
        }
        assert_eq!(w.disruption_events, 0);
        // Everybody eventually crossed, monotonically.
        assert!(w.pedestrians.iter().all(|p| p.progress == 1.0));
    }

    #[test]
    fn locate_and_point_at_agree() {
        let scene = build_scene(0).unwrap();
        let r = &scene.routes[0];
        let arc = r.arc_lengths();
        for s in [0.0, 3.3, 17.25, r.length() - 0.1] {
            let p = r.point_at(s, &arc);
            let loc = r.locate_with(p, &arc);
            assert!(loc.distance < 1e-9);
            assert!((loc.s - s).abs() < 1e-9, "{s} vs {}", loc.s);
        }
    }

    #[test]
    fn sustained_invasion_counts_every_ten_ticks() {
        let scene = build_scene(0).unwrap();
        let mut w = spawn_episode(&scene, 0, Weather::ClearNoon, 1).unwrap();
        w.pedestrians.clear();
        // Drive on the opposite carriageway of the approach arm.
        let r = w.route.clone();
        let start = r.start_pose();
        let wrong = start.position - Vec2::right_of(start.heading) * scene.lane_width;
        w.ego = EgoState::new(Pose2D::new(wrong, start.heading), 0.0);
        for _ in 0..25 {
            step_world(&mut w, Action::ZERO).unwrap();
        }
        // Ticks 1, 11, 21.
        assert_eq!(w.lane_invasion_count, 3);
    }
}
