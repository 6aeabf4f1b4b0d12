//! Deterministic 2D intersection world.

pub mod geometry;
pub mod render;
pub mod scene;
pub mod terminal;
pub mod world;

pub use geometry::{wrap_angle, Obb, Pose2D, Vec2};
pub use render::{render_observation, Observation};
pub use scene::{build_scene, Catalog, Mission, Route, SceneSpec, Split, Weather, WeatherProfile};
pub use terminal::{detect_terminal, TerminalEvent};
pub use world::{ego_step, pedestrians_step, spawn_episode, step_world, Action, EgoState, PedestrianState, WorldState};

/// Generator used for every seeded draw in the simulator.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Mixes `parts` into `base` (SplitMix64 finalizer per part) to give
/// independent, order-sensitive seeds for sub-streams.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p.wrapping_mul(0xd134_2543_de82_ef95));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}
