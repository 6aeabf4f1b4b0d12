pub mod bench;
pub mod decision;
pub mod episode;
pub mod expert;
pub mod nn;
pub mod policy;
pub mod service;
pub mod error;
pub mod sim;

pub use error::{Error, Result};
