use std::sync::Arc;

use super::model::Policy;
use crate::bench::Driver;
use crate::decision::CommandPair;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::sim::render::Observation;
use crate::sim::world::Action;

/// Drives an episode from the rendered observation with a trained policy.
#[derive(Debug, Clone)]
pub struct PolicyDriver {
    policy: Arc<Policy>,
}

impl PolicyDriver {
    pub fn new(policy: Arc<Policy>) -> Self {
        Self { policy }
    }
}

impl Driver for PolicyDriver {
    fn act(&mut self, _: &Episode, obs: Option<&Observation>, cmds: CommandPair) -> Result<Action> {
        let obs = obs.ok_or_else(|| Error::Config("policy driver needs an observation".into()))?;
        self.policy.act(obs, cmds)
    }
}
