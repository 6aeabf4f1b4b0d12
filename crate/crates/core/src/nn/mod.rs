//! Minimal reverse-mode autodiff: tensors, a tape of ops, Adam, checkpoints
//! and a gradient checker.

pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod schedule;
pub mod tape;
pub mod tensor;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use gradcheck::{grad_check, grad_check_with, Coverage, GradCheckReport};
pub use params::{Checkpoint, Gradients, ParamStore};
pub use schedule::{lr_schedule, PlateauSchedule};
pub use tape::{KinkPattern, Tape, Var};
pub use tensor::Tensor;

/// He-normal initialization for a weight with `fan_in` inputs.
pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let sd = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, sd).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("length matches shape")
}
