//! Closed-loop episode stepping shared by collection, evaluation, the session
//! server and the C API.

use rand::SeedableRng;

use crate::decision::{decide_with, CommandPair};
use crate::error::Result;
use crate::sim::render::{render_observation, Observation};
use crate::sim::scene::{build_scene, SceneSpec, Weather, WeatherProfile};
use crate::sim::terminal::{detect_terminal, TerminalEvent};
use crate::sim::world::{spawn_episode, step_world, Action, WorldState};
use crate::sim::SimRng;

/// Offsets the observation stream from the spawn stream.
const OBS_SEED_SALT: u64 = 0x6f62_735f_6e6f_6973;

#[derive(Debug, Clone)]
pub struct Episode {
    pub world: WorldState,
    pub weather: WeatherProfile,
    arc: Vec<f64>,
    obs_rng: SimRng,
    terminal: Option<TerminalEvent>,
}

impl Episode {
    pub fn new(scene_id: u32, route_id: u32, weather: Weather, seed: u64) -> Result<Self> {
        Self::in_scene(&build_scene(scene_id)?, route_id, weather, seed)
    }

    pub fn in_scene(scene: &SceneSpec, route_id: u32, weather: Weather, seed: u64) -> Result<Self> {
        let world = spawn_episode(scene, route_id, weather, seed)?;
        Ok(Self::from_world(world, seed))
    }

    pub fn from_world(world: WorldState, seed: u64) -> Self {
        Self {
            arc: world.route.arc_lengths(),
            weather: world.weather.profile(),
            obs_rng: SimRng::seed_from_u64(seed ^ OBS_SEED_SALT),
            terminal: None,
            world,
        }
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc
    }

    pub fn observe(&mut self) -> Observation {
        render_observation(&self.world, &self.weather, &mut self.obs_rng)
    }

    pub fn commands(&self) -> Result<CommandPair> {
        decide_with(&self.world, &self.world.route, &self.arc)
    }

    /// Advances one tick with `action` (clipped) and returns the terminal
    /// event if the episode just ended. Stepping a finished episode is a no-op.
    pub fn step(&mut self, action: Action) -> Result<Option<TerminalEvent>> {
        if self.terminal.is_some() {
            return Ok(self.terminal);
        }
        step_world(&mut self.world, action)?;
        self.terminal = detect_terminal(&self.world, &self.world.route);
        Ok(self.terminal)
    }

    /// Ends the episode with `event` (used when the loop cannot continue).
    pub fn force_terminal(&mut self, event: TerminalEvent) {
        self.terminal.get_or_insert(event);
    }

    pub fn terminal(&self) -> Option<TerminalEvent> {
        self.terminal
    }

    pub fn is_done(&self) -> bool {
        self.terminal.is_some()
    }
}
