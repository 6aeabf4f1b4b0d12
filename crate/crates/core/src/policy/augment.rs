//! Photometric augmentation on normalized rasters.

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const NOISE_STD: f64 = 0.02;
pub const CELL_DROPOUT: f64 = 0.05;
pub const BRIGHTNESS: f64 = 0.1;
pub const CONTRAST: f64 = 0.1;

/// Perturbs one image in place: additive Gaussian noise, random cell
/// dropout, a brightness offset and a contrast scale about the image mean,
/// then clips to [0, 1].
pub fn augment_image<R: Rng + ?Sized>(img: &mut [f64], rng: &mut R) {
    if img.is_empty() {
        return;
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let bias = rng.random_range(-BRIGHTNESS..=BRIGHTNESS);
    let gain = rng.random_range(1.0 - CONTRAST..=1.0 + CONTRAST);
    let mean = img.iter().sum::<f64>() / img.len() as f64;
    for v in img.iter_mut() {
        let x = if rng.random::<f64>() < CELL_DROPOUT {
            0.0
        } else {
            *v + noise.sample(rng)
        };
        *v = ((x - mean) * gain + mean + bias).clamp(0.0, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimRng;
    use rand::SeedableRng;

    #[test]
    fn stays_in_range_and_moves_pixels() {
        let mut rng = SimRng::seed_from_u64(1);
        let orig: Vec<f64> = (0..2000).map(|i| (i % 3) as f64 / 2.0).collect();
        let mut img = orig.clone();
        augment_image(&mut img, &mut rng);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        let changed = img.iter().zip(&orig).filter(|(a, b)| a != b).count();
        assert!(changed > 1000);
        let mean_shift = (img.iter().sum::<f64>() - orig.iter().sum::<f64>()).abs() / 2000.0;
        assert!(mean_shift < 0.2);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let base: Vec<f64> = (0..500).map(|i| (i % 7) as f64 / 6.0).collect();
        let run = |seed| {
            let mut img = base.clone();
            augment_image(&mut img, &mut SimRng::seed_from_u64(seed));
            img
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }
}
