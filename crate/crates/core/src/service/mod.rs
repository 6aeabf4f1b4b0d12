//! Session server streaming world state to a teleop client and recording
//! human demonstrations.

pub mod protocol;
pub mod server;

pub use protocol::{ClientMsg, CmdsView, EgoView, PedestrianView, ServerMsg, StartSpec};
pub use server::{ServeConfig, Server, DEFAULT_TICK};
