//! Closed-loop demonstration recording with steering noise and the quality
//! gate.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::controller::expert_action_with;
use super::dataset::{DataSplit, Dataset, Sample, SampleMeta, Trajectory, TrajectoryQuality};
use super::noise::inject_noise;
use crate::bench::metrics::{episode_waypoint_deviation, harsh_actions};
use crate::bench::runner::{waypoint_pair, EpisodeResult};
use crate::decision::CommandPair;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::sim::geometry::{Pose2D, Vec2};
use crate::sim::render::Observation;
use crate::sim::scene::{build_scene, Mission, Split, Weather};
use crate::sim::terminal::TerminalEvent;
use crate::sim::world::Action;
use crate::sim::{derive_seed, SimRng};

pub const DEFAULT_NOISE_P: f64 = 0.1;
/// Stored trajectories must keep their mean waypoint deviation within this.
pub const MAX_DEV_WAYPOINT: f64 = 0.8;
/// Below this per-scene expert success rate collection aborts.
pub const MIN_EXPERT_SUCCESS: f64 = 0.5;
/// One trajectory in six from train scenes goes to validation.
const VAL_SHARE: f64 = 1.0 / 6.0;

const STREAM_EPISODE: u64 = 0xc011;
pub(crate) const STREAM_NOISE: u64 = 0x4015e;
const STREAM_SPLIT: u64 = 0x5b1;

/// Accumulates the samples and pose log of one episode as it is driven.
#[derive(Debug, Clone)]
pub struct Recorder {
    scene_id: u32,
    route_id: u32,
    mission: Mission,
    seed: u64,
    points: Vec<Vec2>,
    samples: Vec<Sample>,
    poses: Vec<Pose2D>,
    waypoints: Vec<(Vec2, Vec2)>,
}

impl Recorder {
    pub fn new(ep: &Episode, route_id: u32, seed: u64) -> Self {
        let route = &ep.world.route;
        Self {
            scene_id: ep.world.scene.scene_id,
            route_id,
            mission: route.mission,
            seed,
            points: route.waypoints.iter().map(|w| w.position).collect(),
            samples: Vec::new(),
            poses: Vec::new(),
            waypoints: Vec::new(),
        }
    }

    /// Records `(obs, label, cmds)`, applies steering noise with probability
    /// `noise_p` and advances the episode with the executed action.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        ep: &mut Episode,
        obs: Observation,
        cmds: CommandPair,
        label: Action,
        rng: &mut R,
        noise_p: f64,
    ) -> Result<Option<TerminalEvent>> {
        let label = label.clipped();
        let (executed, _) = inject_noise(label, rng, noise_p);
        self.samples.push(Sample {
            obs,
            action: label,
            executed,
            cmds,
            meta: SampleMeta {
                scene_id: self.scene_id,
                route_id: self.route_id,
                weather: ep.world.weather,
                tick: ep.world.tick,
                seed: self.seed,
            },
        });
        let terminal = ep.step(executed)?;
        let pose = ep.world.ego.pose;
        let nearest = ep.world.route.locate_with(pose.position, ep.arc_lengths()).nearest;
        self.poses.push(pose);
        self.waypoints.push(waypoint_pair(&self.points, nearest));
        Ok(terminal)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Closes the recording. The returned result logs executed actions; the
    /// trajectory's quality scores the labels.
    pub fn finish(self, ep: &Episode) -> (Trajectory, EpisodeResult) {
        let terminal = ep.terminal().unwrap_or(TerminalEvent::Timeout);
        let route = &ep.world.route;
        let mut result = EpisodeResult {
            scene_id: self.scene_id,
            route_id: self.route_id,
            weather: ep.world.weather,
            seed: self.seed,
            terminal,
            steps: self.samples.len() as u32,
            actions: self.samples.iter().map(|s| s.action).collect(),
            poses: self.poses,
            waypoints: self.waypoints,
            disruption_events: ep.world.disruption_events,
            final_pose: ep.world.ego.pose,
            goal: route.goal,
            goal_lane_direction: route.goal_lane_direction,
            fault: None,
        };
        let quality = TrajectoryQuality {
            ego_jerk: harsh_actions(&result) as f64,
            dev_waypoint: episode_waypoint_deviation(&result),
            disruption_events: result.disruption_events,
            steps: result.steps,
        };
        result.actions = self.samples.iter().map(|s| s.executed).collect();
        let traj = Trajectory {
            scene_id: self.scene_id,
            route_id: self.route_id,
            mission: self.mission,
            weather: ep.world.weather,
            seed: self.seed,
            split: DataSplit::Train,
            terminal,
            quality,
            samples: self.samples,
        };
        (traj, result)
    }
}

/// Only successful, smooth, on-center trajectories are stored.
pub fn passes_quality_gate(t: &Trajectory) -> bool {
    t.terminal == TerminalEvent::Success && t.quality.ego_jerk == 0.0 && t.quality.dev_waypoint <= MAX_DEV_WAYPOINT
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectConfig {
    pub scenes: Vec<u32>,
    pub episodes_per_route: u32,
    pub noise_p: f64,
    pub seed: u64,
}

/// Per-scene tallies of a collection run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SceneTally {
    pub scene_id: u32,
    pub episodes: usize,
    pub successes: usize,
    pub kept: usize,
}

/// Drives the expert once with steering noise and records every frame.
/// Episodes where the expert loses the route come back as `None`.
pub fn record_expert_episode(scene_id: u32, route_id: u32, weather: Weather, seed: u64, noise_p: f64) -> Result<Option<Trajectory>> {
    let mut ep = Episode::new(scene_id, route_id, weather, seed)?;
    let mut rec = Recorder::new(&ep, route_id, seed);
    let mut rng = SimRng::seed_from_u64(derive_seed(seed, &[STREAM_NOISE]));
    while !ep.is_done() {
        let (cmds, label) = match (ep.commands(), expert_action_with(&ep.world, &ep.world.route, ep.arc_lengths())) {
            (Ok(c), Ok(a)) => (c, a),
            (Err(Error::OffRoute { .. }), _) | (_, Err(Error::OffRoute { .. })) => return Ok(None),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let obs = ep.observe();
        rec.step(&mut ep, obs, cmds, label, &mut rng, noise_p)?;
    }
    Ok(Some(rec.finish(&ep).0))
}

/// Collects expert demonstrations over `scenes`, keeping only trajectories
/// that pass the quality gate. Weather is drawn uniformly from the train
/// profiles. Trajectories from train scenes are split 5:1 into train and
/// validation; those from test scenes are tagged test.
pub fn collect(cfg: &CollectConfig) -> Result<(Dataset, Vec<SceneTally>)> {
    if cfg.scenes.is_empty() {
        return Err(Error::Config("collect needs at least one scene".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise_p) {
        return Err(Error::Config(format!("noise probability {} outside [0, 1]", cfg.noise_p)));
    }
    let mut scenes = cfg.scenes.clone();
    scenes.sort_unstable();
    scenes.dedup();
    let mut jobs = Vec::new();
    for &scene_id in &scenes {
        let scene = build_scene(scene_id)?;
        for route in &scene.routes {
            for k in 0..cfg.episodes_per_route {
                let seed = derive_seed(cfg.seed, &[STREAM_EPISODE, scene_id as u64, route.route_id as u64, k as u64]);
                let weather = *Weather::TRAIN
                    .choose(&mut SimRng::seed_from_u64(seed))
                    .expect("non-empty weather set");
                jobs.push((scene_id, route.route_id, weather, seed, scene.split));
            }
        }
    }
    let outcomes: Vec<Option<Trajectory>> = jobs
        .par_iter()
        .map(|&(s, r, w, seed, _)| record_expert_episode(s, r, w, seed, cfg.noise_p))
        .collect::<Result<_>>()?;

    let mut tallies: Vec<SceneTally> = scenes
        .iter()
        .map(|&scene_id| SceneTally {
            scene_id,
            ..Default::default()
        })
        .collect();
    let mut kept: Vec<(Split, Trajectory)> = Vec::new();
    for ((scene_id, _, _, _, split), outcome) in jobs.iter().zip(outcomes) {
        let tally = tallies.iter_mut().find(|t| t.scene_id == *scene_id).expect("scene tallied");
        tally.episodes += 1;
        let Some(traj) = outcome else { continue };
        if traj.terminal == TerminalEvent::Success {
            tally.successes += 1;
        }
        if passes_quality_gate(&traj) {
            tally.kept += 1;
            kept.push((*split, traj));
        }
    }
    for t in &tallies {
        let rate = t.successes as f64 / t.episodes.max(1) as f64;
        if t.episodes > 0 && rate < MIN_EXPERT_SUCCESS {
            return Err(Error::ExpertQuality {
                scene: t.scene_id,
                success_rate: rate,
            });
        }
    }

    let train_idx: Vec<usize> = (0..kept.len()).filter(|&i| kept[i].0 == Split::Train).collect();
    let mut order = train_idx.clone();
    order.shuffle(&mut SimRng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_SPLIT])));
    let n_val = (train_idx.len() as f64 * VAL_SHARE).round() as usize;
    let val: Vec<usize> = order[..n_val].to_vec();

    let trajectories = kept
        .into_iter()
        .enumerate()
        .map(|(i, (split, mut t))| {
            t.split = match split {
                Split::Test => DataSplit::Test,
                Split::Train if val.contains(&i) => DataSplit::Val,
                Split::Train => DataSplit::Train,
            };
            t
        })
        .collect();
    Ok((Dataset { trajectories }, tallies))
}
