//! Closed-loop benchmark: episodes, metrics and reports.

pub mod metrics;
pub mod report;
pub mod runner;

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::scene::{build_scene, Split, Weather, NUM_SCENES};
use crate::sim::{derive_seed, SimRng};

pub use metrics::{quality, rates, QualityMetrics, Rates};
pub use report::{render_report, BenchmarkReport};
pub use runner::{run_episode, Driver, EpisodeResult, ExpertDriver, ZeroDriver};

/// Scene split and weather split of an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Train scenes, train weathers.
    #[serde(rename = "TT")]
    TrainTrain,
    /// Test scenes, train weathers.
    #[serde(rename = "tT")]
    TestTrain,
    /// Test scenes, test weathers.
    #[serde(rename = "tt")]
    TestTest,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::TrainTrain, Condition::TestTrain, Condition::TestTest];

    pub fn scenes(self) -> Vec<u32> {
        let split = match self {
            Condition::TrainTrain => Split::Train,
            _ => Split::Test,
        };
        (0..NUM_SCENES)
            .filter(|&id| build_scene(id).map(|s| s.split == split).unwrap_or(false))
            .collect()
    }

    pub fn weathers(self) -> &'static [Weather] {
        match self {
            Condition::TestTest => &Weather::TEST,
            _ => &Weather::TRAIN,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Condition::TrainTrain => "TT",
            Condition::TestTrain => "tT",
            Condition::TestTest => "tt",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::TrainTrain => "train-scene/train-weather",
            Condition::TestTrain => "test-scene/train-weather",
            Condition::TestTest => "test-scene/test-weather",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TT" => Ok(Condition::TrainTrain),
            "tT" => Ok(Condition::TestTrain),
            "tt" => Ok(Condition::TestTest),
            other => Err(Error::Config(format!("unknown condition `{other}` (expected TT, tT or tt)"))),
        }
    }
}

/// One scheduled evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub scene_id: u32,
    pub route_id: u32,
    pub weather: Weather,
    pub seed: u64,
}

/// Episodes of a condition in (scene, route, repetition) order. The weather
/// of each episode is drawn uniformly from the condition's weathers.
pub fn schedule(condition: Condition, episodes_per_route: u32, seed: u64) -> Result<Vec<EpisodeSpec>> {
    let mut out = Vec::new();
    for scene_id in condition.scenes() {
        let scene = build_scene(scene_id)?;
        for route in &scene.routes {
            for k in 0..episodes_per_route {
                let ep_seed = derive_seed(seed, &[scene_id as u64, route.route_id as u64, k as u64]);
                let mut rng = SimRng::seed_from_u64(ep_seed);
                let weather = *condition.weathers().choose(&mut rng).expect("non-empty weather set");
                out.push(EpisodeSpec {
                    scene_id,
                    route_id: route.route_id,
                    weather,
                    seed: ep_seed,
                });
            }
        }
    }
    Ok(out)
}

/// Runs every scheduled episode, in parallel, with a fresh driver each.
/// Results come back in schedule order.
pub fn run_schedule<D, F>(make_driver: F, specs: &[EpisodeSpec]) -> Result<Vec<EpisodeResult>>
where
    D: Driver,
    F: Fn() -> Result<D> + Sync,
{
    let scenes: Vec<_> = (0..NUM_SCENES).map(build_scene).collect::<Result<_>>()?;
    specs
        .par_iter()
        .map(|s| {
            let mut driver = make_driver()?;
            run_episode(&mut driver, &scenes[s.scene_id as usize], s.route_id, s.weather, s.seed)
        })
        .collect()
}

pub fn evaluate<D, F>(
    make_driver: F,
    model_tag: &str,
    condition: Condition,
    episodes_per_route: u32,
    seed: u64,
) -> Result<(BenchmarkReport, Vec<EpisodeResult>)>
where
    D: Driver,
    F: Fn() -> Result<D> + Sync,
{
    let specs = schedule(condition, episodes_per_route, seed)?;
    let results = run_schedule(make_driver, &specs)?;
    let report = BenchmarkReport::from_results(model_tag, condition, &results)?;
    Ok((report, results))
}
