//! Ego-centric semantic raster.
//!
//! Cells are 0.5 m; the grid covers 24 m ahead of the ego and 12 m to each
//! side, ego at bottom-center facing up. Row 0 is the far edge. Cell values
//! are stored as 8-bit levels of 1/255 so large demonstration sets fit in
//! memory; [`Observation::value`] returns the float in [0, 1].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{Pose2D, Vec2};
use super::scene::WeatherProfile;
use super::world::WorldState;

pub const RASTER_CHANNELS: usize = 5;
pub const RASTER_SIZE: usize = 48;
pub const RASTER_LEN: usize = RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE;
pub const CELL_SIZE: f64 = 0.5;

pub const CH_DRIVABLE: usize = 0;
pub const CH_MARKINGS: usize = 1;
pub const CH_CROSSWALKS: usize = 2;
pub const CH_PEDESTRIANS: usize = 3;
pub const CH_ROUTE: usize = 4;

const PEDESTRIAN_SPLAT: f64 = 0.6;
const ROUTE_HALF_WIDTH: f64 = 0.5;
const MARKING_HALF_WIDTH: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Channel-major `[5][48][48]` levels.
    pub raster: Vec<u8>,
    pub ego_speed: f64,
}

impl Observation {
    pub fn index(channel: usize, row: usize, col: usize) -> usize {
        (channel * RASTER_SIZE + row) * RASTER_SIZE + col
    }

    pub fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.raster[Self::index(channel, row, col)] as f64 / 255.0
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.raster.iter().map(|&b| b as f64 / 255.0)
    }

    /// Cell containing the ego-frame point `(forward, right)`, if on the grid.
    pub fn cell_of(forward: f64, right: f64) -> Option<(usize, usize)> {
        let row = RASTER_SIZE as f64 - forward / CELL_SIZE;
        let col = right / CELL_SIZE + RASTER_SIZE as f64 / 2.0;
        if row < 0.0 || col < 0.0 || row >= RASTER_SIZE as f64 || col >= RASTER_SIZE as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Ego-frame `(forward, right)` of a cell center.
    pub fn cell_center(row: usize, col: usize) -> (f64, f64) {
        (
            (RASTER_SIZE as f64 - row as f64 - 0.5) * CELL_SIZE,
            (col as f64 + 0.5 - RASTER_SIZE as f64 / 2.0) * CELL_SIZE,
        )
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn near_marking(lat: f64, lane_width: f64, lanes: u32) -> bool {
    let lat = lat.abs();
    (0..=lanes).any(|k| (lat - k as f64 * lane_width).abs() <= MARKING_HALF_WIDTH)
}

/// Noise-free raster of the world as seen from the ego.
pub fn render_clean(world: &WorldState) -> Vec<f64> {
    let scene = &world.scene;
    let pose = world.ego.pose;
    let w = scene.half_width();
    let mut raster = vec![0.0; RASTER_LEN];

    for row in 0..RASTER_SIZE {
        for col in 0..RASTER_SIZE {
            let (f, r) = Observation::cell_center(row, col);
            let p = pose.to_world(f, r);
            if scene.on_road(p) {
                raster[Observation::index(CH_DRIVABLE, row, col)] = 1.0;
            }
            let in_box = p.x.abs() < w && p.y.abs() < w;
            if !in_box {
                let marking = (p.y.abs() <= w + MARKING_HALF_WIDTH
                    && p.x.abs() >= w
                    && near_marking(p.y, scene.lane_width, scene.lanes_per_direction))
                    || (p.x.abs() <= w + MARKING_HALF_WIDTH
                        && p.y.abs() >= w
                        && near_marking(p.x, scene.lane_width, scene.lanes_per_direction));
                if marking && p.x.abs().max(p.y.abs()) <= w + super::scene::ARM_LENGTH {
                    raster[Observation::index(CH_MARKINGS, row, col)] = 1.0;
                }
            }
            if scene.crosswalks.iter().any(|cw| cw.contains(p, w)) {
                raster[Observation::index(CH_CROSSWALKS, row, col)] = 1.0;
            }
        }
    }

    let reach = RASTER_SIZE as f64 * CELL_SIZE * 1.2;
    for ped in &world.pedestrians {
        if ped.pose.position.distance(pose.position) > reach + 1.0 {
            continue;
        }
        splat(&mut raster, CH_PEDESTRIANS, &pose, ped.pose.position, ped.pose.position, PEDESTRIAN_SPLAT);
    }

    // Remaining route from the nearest waypoint on.
    let route = &world.route;
    let from = route.locate(pose.position).nearest.saturating_sub(1);
    for seg in route.waypoints[from..].windows(2) {
        let (a, b) = (seg[0].position, seg[1].position);
        if a.distance(pose.position) > reach + 2.0 {
            continue;
        }
        splat(&mut raster, CH_ROUTE, &pose, a, b, ROUTE_HALF_WIDTH);
    }
    raster
}

/// Marks cells within `radius` of segment `ab` (a point when `a == b`).
fn splat(raster: &mut [f64], channel: usize, pose: &Pose2D, a: Vec2, b: Vec2, radius: f64) {
    let la = pose.to_local(a);
    let lb = pose.to_local(b);
    let lo = Vec2::new(la.x.min(lb.x) - radius, la.y.min(lb.y) - radius);
    let hi = Vec2::new(la.x.max(lb.x) + radius, la.y.max(lb.y) + radius);
    let size = RASTER_SIZE as f64;
    let row_lo = (size - hi.x / CELL_SIZE).floor().max(0.0) as usize;
    let row_hi = (size - lo.x / CELL_SIZE).ceil().min(size) as usize;
    let col_lo = (lo.y / CELL_SIZE + size / 2.0).floor().max(0.0) as usize;
    let col_hi = (hi.y / CELL_SIZE + size / 2.0).ceil().min(size) as usize;
    for row in row_lo..row_hi {
        for col in col_lo..col_hi {
            let (f, r) = Observation::cell_center(row, col);
            let (q, _) = super::geometry::project_on_segment(Vec2::new(f, r), la, lb);
            if q.distance(Vec2::new(f, r)) <= radius {
                raster[Observation::index(channel, row, col)] = 1.0;
            }
        }
    }
}

/// Renders the observation and applies the weather's perturbations: additive
/// Gaussian noise, per-cell dropout and a brightness bias, re-clipped to
/// [0, 1].
pub fn render_observation<R: Rng + ?Sized>(world: &WorldState, weather: &WeatherProfile, rng: &mut R) -> Observation {
    let clean = render_clean(world);
    let raster = if weather.is_identity() {
        clean.iter().map(|&v| quantize(v)).collect()
    } else {
        let noise = Normal::new(0.0, weather.noise_sigma.max(0.0)).expect("valid sigma");
        clean
            .iter()
            .map(|&v| {
                let mut x = v;
                if weather.noise_sigma > 0.0 {
                    x += noise.sample(rng);
                }
                if weather.channel_dropout_p > 0.0 && rng.random_bool(weather.channel_dropout_p) {
                    x = 0.0;
                }
                quantize(x + weather.brightness_bias)
            })
            .collect()
    };
    Observation {
        raster,
        ego_speed: world.ego.speed,
    }
}
