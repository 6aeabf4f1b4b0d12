use rand::Rng;

use crate::sim::world::Action;

pub const NOISE_AMPLITUDE: f64 = 0.2;

/// Perturbs the steering of `intended` with probability `p` by a uniform draw
/// in ±0.2; acceleration is never touched. Returns the action to execute and
/// whether it was perturbed.
pub fn inject_noise<R: Rng + ?Sized>(intended: Action, rng: &mut R, p: f64) -> (Action, bool) {
    if p <= 0.0 || !rng.random_bool(p.min(1.0)) {
        return (intended, false);
    }
    let offset = rng.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
    let steer = (intended.steer + offset).clamp(-1.0, 1.0);
    (Action::new(steer, intended.accel), true)
}
