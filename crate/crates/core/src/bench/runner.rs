use log::warn;
use serde::{Deserialize, Serialize};

use crate::decision::CommandPair;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::expert::expert_action_with;
use crate::sim::geometry::{Pose2D, Vec2};
use crate::sim::render::Observation;
use crate::sim::scene::{SceneSpec, Weather};
use crate::sim::terminal::TerminalEvent;
use crate::sim::world::Action;

/// Anything that can drive an episode one tick at a time.
pub trait Driver {
    /// Whether [`Driver::act`] reads the rendered observation. Drivers that
    /// return `false` receive `None` and the episode skips rendering.
    fn needs_observation(&self) -> bool {
        true
    }

    fn act(&mut self, episode: &Episode, obs: Option<&Observation>, cmds: CommandPair) -> Result<Action>;
}

/// The scripted expert, reading the privileged world state.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertDriver;

impl Driver for ExpertDriver {
    fn needs_observation(&self) -> bool {
        false
    }

    fn act(&mut self, episode: &Episode, _: Option<&Observation>, _: CommandPair) -> Result<Action> {
        expert_action_with(&episode.world, &episode.world.route, episode.arc_lengths())
    }
}

/// Always outputs `(0, 0)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDriver;

impl Driver for ZeroDriver {
    fn needs_observation(&self) -> bool {
        false
    }

    fn act(&mut self, _: &Episode, _: Option<&Observation>, _: CommandPair) -> Result<Action> {
        Ok(Action::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene_id: u32,
    pub route_id: u32,
    pub weather: Weather,
    pub seed: u64,
    pub terminal: TerminalEvent,
    pub steps: u32,
    /// Executed (clipped) action per step.
    pub actions: Vec<Action>,
    /// Ego pose after each step.
    pub poses: Vec<Pose2D>,
    /// Nearest and next route waypoint for each logged pose.
    pub waypoints: Vec<(Vec2, Vec2)>,
    pub disruption_events: u32,
    pub final_pose: Pose2D,
    pub goal: Vec2,
    pub goal_lane_direction: f64,
    /// Set when the driver failed and the episode was scored as a collision.
    pub fault: Option<String>,
}

/// Nearest waypoint and its successor (the last two when at the end).
pub fn waypoint_pair(route_points: &[Vec2], nearest: usize) -> (Vec2, Vec2) {
    let last = route_points.len() - 1;
    if nearest >= last {
        (route_points[last.saturating_sub(1)], route_points[last])
    } else {
        (route_points[nearest], route_points[nearest + 1])
    }
}

/// Runs one closed-loop episode until its terminal event.
///
/// A driver error or non-finite action ends the episode as a collision with
/// the reason kept in `fault`; leaving the route corridor entirely (more than
/// 10 m away) ends it as a lane invasion.
pub fn run_episode<D: Driver + ?Sized>(
    driver: &mut D,
    scene: &SceneSpec,
    route_id: u32,
    weather: Weather,
    seed: u64,
) -> Result<EpisodeResult> {
    let mut ep = Episode::in_scene(scene, route_id, weather, seed)?;
    let points: Vec<Vec2> = ep.world.route.waypoints.iter().map(|w| w.position).collect();
    let mut actions = Vec::new();
    let mut poses = Vec::new();
    let mut waypoints = Vec::new();
    let mut fault = None;

    while !ep.is_done() {
        let cmds = match ep.commands() {
            Ok(c) => c,
            Err(Error::OffRoute { distance }) => {
                warn!("scene {} route {route_id} seed {seed}: ego {distance:.1} m off route", scene.scene_id);
                ep.force_terminal(TerminalEvent::LaneInvasion);
                break;
            }
            Err(e) => return Err(e),
        };
        let obs = driver.needs_observation().then(|| ep.observe());
        let action = match driver.act(&ep, obs.as_ref(), cmds) {
            Ok(a) if a.is_finite() => a.clipped(),
            Ok(a) => {
                fault = Some(format!("non-finite action {a:?} at tick {}", ep.world.tick));
                ep.force_terminal(TerminalEvent::Collision);
                break;
            }
            Err(e) => {
                fault = Some(format!("driver error at tick {}: {e}", ep.world.tick));
                ep.force_terminal(TerminalEvent::Collision);
                break;
            }
        };
        ep.step(action)?;
        let pose = ep.world.ego.pose;
        let nearest = ep.world.route.locate_with(pose.position, ep.arc_lengths()).nearest;
        actions.push(action);
        poses.push(pose);
        waypoints.push(waypoint_pair(&points, nearest));
    }
    if let Some(f) = &fault {
        warn!("scene {} route {route_id} seed {seed}: {f}", scene.scene_id);
    }

    let route = &ep.world.route;
    Ok(EpisodeResult {
        scene_id: scene.scene_id,
        route_id,
        weather,
        seed,
        terminal: ep.terminal().expect("loop exits on a terminal event"),
        steps: actions.len() as u32,
        actions,
        poses,
        waypoints,
        disruption_events: ep.world.disruption_events,
        final_pose: ep.world.ego.pose,
        goal: route.goal,
        goal_lane_direction: route.goal_lane_direction,
        fault,
    })
}
