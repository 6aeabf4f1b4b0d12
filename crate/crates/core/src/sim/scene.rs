//! Procedural four-way intersections, their reference routes and the weather
//! catalog.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::geometry::{Pose2D, Vec2};
use crate::error::{Error, Result};

pub const NUM_SCENES: u32 = 6;
pub const TOTAL_ROUTES: usize = 40;
pub const SIDEWALK_WIDTH: f64 = 4.0;
pub const CROSSWALK_WIDTH: f64 = 3.0;
/// How far each arm extends past the intersection box.
pub const ARM_LENGTH: f64 = 45.0;
pub const CATALOG_VERSION: u32 = 1;

const RIGHT_TURN_RADIUS: f64 = 6.5;
const LEFT_TURN_EXTRA: f64 = 2.0;
const WAYPOINT_SPACING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mission {
    LeftTurn,
    GoStraight,
    RightTurn,
}

impl Mission {
    pub const ALL: [Mission; 3] = [Mission::LeftTurn, Mission::GoStraight, Mission::RightTurn];

    /// Heading change of the maneuver (positive = right).
    fn turn(self) -> f64 {
        match self {
            Mission::LeftTurn => -FRAC_PI_2,
            Mission::GoStraight => 0.0,
            Mission::RightTurn => FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Vec2,
    /// Lane direction at this waypoint.
    pub direction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub route_id: u32,
    pub mission: Mission,
    pub waypoints: Vec<Waypoint>,
    pub goal: Vec2,
    pub goal_lane_direction: f64,
    /// Travel heading on the approach arm.
    pub entry_heading: f64,
    /// Travel heading on the exit arm.
    pub exit_heading: f64,
}

impl Route {
    pub fn start_pose(&self) -> Pose2D {
        let w = &self.waypoints[0];
        Pose2D::new(w.position, w.direction)
    }

    /// Cumulative arc length at each waypoint.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.waypoints.len());
        out.push(0.0);
        for w in self.waypoints.windows(2) {
            acc += w[0].position.distance(w[1].position);
            out.push(acc);
        }
        out
    }

    pub fn length(&self) -> f64 {
        *self.arc_lengths().last().unwrap_or(&0.0)
    }
}

/// A zebra crossing across one arm, from sidewalk to sidewalk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crosswalk {
    pub id: u32,
    /// Waiting spot on one sidewalk.
    pub start: Vec2,
    /// Waiting spot on the opposite sidewalk.
    pub end: Vec2,
    pub width: f64,
    /// Distance from the intersection center to the crosswalk's near edge.
    pub near_edge: f64,
    /// Outward direction of the arm this crosswalk spans.
    pub arm_heading: f64,
}

impl Crosswalk {
    pub fn center_distance(&self) -> f64 {
        self.near_edge + self.width / 2.0
    }

    /// Whether `p` is on the painted crossing (roadway part included).
    pub fn contains(&self, p: Vec2, road_half_width: f64) -> bool {
        let along = p.dot(Vec2::from_heading(self.arm_heading));
        let across = p.dot(Vec2::right_of(self.arm_heading));
        along >= self.near_edge
            && along <= self.near_edge + self.width
            && across.abs() <= road_half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: u32,
    pub lane_width: f64,
    pub lanes_per_direction: u32,
    pub crosswalks: Vec<Crosswalk>,
    pub routes: Vec<Route>,
    pub split: Split,
}

struct SceneParams {
    lane_width: f64,
    lanes: u32,
    crosswalk_gap: f64,
    routes: u32,
}

const SCENE_PARAMS: [SceneParams; 6] = [
    SceneParams { lane_width: 3.5, lanes: 1, crosswalk_gap: 0.5, routes: 7 },
    SceneParams { lane_width: 3.3, lanes: 2, crosswalk_gap: 0.8, routes: 7 },
    SceneParams { lane_width: 3.6, lanes: 1, crosswalk_gap: 0.6, routes: 6 },
    SceneParams { lane_width: 3.4, lanes: 1, crosswalk_gap: 0.4, routes: 7 },
    SceneParams { lane_width: 3.7, lanes: 2, crosswalk_gap: 0.6, routes: 7 },
    SceneParams { lane_width: 3.4, lanes: 2, crosswalk_gap: 0.7, routes: 6 },
];

impl SceneSpec {
    /// Half width of each road (all lanes, both directions).
    pub fn half_width(&self) -> f64 {
        self.lane_width * self.lanes_per_direction as f64
    }

    pub fn route(&self, route_id: u32) -> Result<&Route> {
        self.routes
            .iter()
            .find(|r| r.route_id == route_id)
            .ok_or(Error::UnknownRoute {
                scene: self.scene_id,
                route: route_id,
            })
    }

    /// The crossing area inflated by 2 m.
    pub fn intersection_half_extent(&self) -> f64 {
        self.half_width() + 2.0
    }

    pub fn in_intersection(&self, p: Vec2) -> bool {
        let e = self.intersection_half_extent();
        p.x.abs() <= e && p.y.abs() <= e
    }

    pub fn on_road(&self, p: Vec2) -> bool {
        let w = self.half_width();
        let reach = w + ARM_LENGTH;
        (p.x.abs() <= w && p.y.abs() <= reach) || (p.y.abs() <= w && p.x.abs() <= reach)
    }

    /// Corner blocks beyond the sidewalks.
    pub fn in_building(&self, p: Vec2) -> bool {
        let b = self.building_offset();
        p.x.abs() > b && p.y.abs() > b
    }

    pub fn building_offset(&self) -> f64 {
        self.half_width() + SIDEWALK_WIDTH
    }
}

/// Builds the deterministic geometry for `scene_id`.
pub fn build_scene(scene_id: u32) -> Result<SceneSpec> {
    let p = SCENE_PARAMS
        .get(scene_id as usize)
        .ok_or(Error::InvalidScene(scene_id))?;
    let half_width = p.lane_width * p.lanes as f64;
    let split = match scene_id {
        2 | 5 => Split::Test,
        _ => Split::Train,
    };

    let crosswalks = (0..4)
        .map(|arm| {
            let arm_heading = arm as f64 * FRAC_PI_2;
            let near_edge = half_width + p.crosswalk_gap;
            let along = near_edge + CROSSWALK_WIDTH / 2.0;
            let reach = half_width + SIDEWALK_WIDTH - 1.0;
            let axis = Vec2::from_heading(arm_heading) * along;
            let across = Vec2::right_of(arm_heading);
            Crosswalk {
                id: arm,
                start: axis - across * reach,
                end: axis + across * reach,
                width: CROSSWALK_WIDTH,
                near_edge,
                arm_heading,
            }
        })
        .collect();

    let combos: Vec<(u32, Mission)> = Mission::ALL
        .iter()
        .flat_map(|&m| (0..4u32).map(move |arm| (arm, m)))
        .collect();
    let routes = (0..p.routes)
        .map(|k| {
            let (arm, mission) = combos[((k * 5 + scene_id * 7) % 12) as usize];
            let lane = match mission {
                Mission::LeftTurn => 0,
                Mission::RightTurn => p.lanes - 1,
                Mission::GoStraight => k % p.lanes,
            };
            let approach = 20.0 + ((k * 3 + scene_id) % 7) as f64;
            let exit = 16.0 + ((k + scene_id) % 4) as f64 * 1.5;
            build_route(k, arm, mission, lane, p.lane_width, half_width, approach, exit)
        })
        .collect();

    Ok(SceneSpec {
        scene_id,
        lane_width: p.lane_width,
        lanes_per_direction: p.lanes,
        crosswalks,
        routes,
        split,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_route(
    route_id: u32,
    arm: u32,
    mission: Mission,
    lane: u32,
    lane_width: f64,
    half_width: f64,
    approach: f64,
    exit: f64,
) -> Route {
    // Arm `arm` lies at outward heading arm·π/2; vehicles on it travel inward.
    let entry_heading = super::geometry::wrap_angle(arm as f64 * FRAC_PI_2 + std::f64::consts::PI);
    let exit_heading = super::geometry::wrap_angle(entry_heading + mission.turn());
    let offset = (lane as f64 + 0.5) * lane_width;
    let d1 = Vec2::from_heading(entry_heading);
    let n1 = Vec2::right_of(entry_heading);
    let d2 = Vec2::from_heading(exit_heading);
    let n2 = Vec2::right_of(exit_heading);

    let start = n1 * offset - d1 * (half_width + approach);
    let goal = n2 * offset + d2 * (half_width + exit);

    let mut pts: Vec<Waypoint> = Vec::new();
    match mission {
        Mission::GoStraight => {
            push_line(&mut pts, start, goal, entry_heading);
        }
        Mission::RightTurn | Mission::LeftTurn => {
            let sign = if mission == Mission::RightTurn { 1.0 } else { -1.0 };
            let radius = if sign > 0.0 {
                RIGHT_TURN_RADIUS.max(half_width - offset)
            } else {
                half_width + offset + LEFT_TURN_EXTRA
            };
            let center = n1 * (offset + sign * radius) + n2 * (offset + sign * radius);
            let t1 = center - n1 * (sign * radius);
            let t2 = center - n2 * (sign * radius);
            push_line(&mut pts, start, t1, entry_heading);
            let sweep = mission.turn();
            let steps = ((radius * sweep.abs()) / WAYPOINT_SPACING).ceil().max(1.0) as usize;
            for i in 1..=steps {
                let h = entry_heading + sweep * i as f64 / steps as f64;
                let pos = center - Vec2::right_of(h) * (sign * radius);
                pts.push(Waypoint {
                    position: pos,
                    direction: super::geometry::wrap_angle(h),
                });
            }
            let last = pts.pop().expect("arc has points");
            debug_assert!(last.position.distance(t2) < 1e-9);
            push_line(&mut pts, t2, goal, exit_heading);
        }
    }

    Route {
        route_id,
        mission,
        waypoints: pts,
        goal,
        goal_lane_direction: exit_heading,
        entry_heading,
        exit_heading,
    }
}

/// Appends evenly spaced points from `a` (inclusive) to `b` (inclusive).
fn push_line(pts: &mut Vec<Waypoint>, a: Vec2, b: Vec2, heading: f64) {
    let len = a.distance(b);
    let n = (len / WAYPOINT_SPACING).ceil().max(1.0) as usize;
    for i in 0..=n {
        pts.push(Waypoint {
            position: a + (b - a) * (i as f64 / n as f64),
            direction: heading,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Weather {
    ClearNoon,
    CloudyNoon,
    WetNoon,
    HardRainNoon,
    ClearSunset,
    CloudySunset,
    WetSunset,
    HardRainSunset,
}

impl Weather {
    pub const ALL: [Weather; 8] = [
        Weather::ClearNoon,
        Weather::CloudyNoon,
        Weather::WetNoon,
        Weather::HardRainNoon,
        Weather::ClearSunset,
        Weather::CloudySunset,
        Weather::WetSunset,
        Weather::HardRainSunset,
    ];
    pub const TRAIN: [Weather; 4] = [
        Weather::ClearNoon,
        Weather::CloudyNoon,
        Weather::WetNoon,
        Weather::HardRainNoon,
    ];
    pub const TEST: [Weather; 4] = [
        Weather::ClearSunset,
        Weather::CloudySunset,
        Weather::WetSunset,
        Weather::HardRainSunset,
    ];

    pub fn index(self) -> usize {
        Weather::ALL.iter().position(|&w| w == self).unwrap()
    }

    pub fn profile(self) -> WeatherProfile {
        // (noise sigma, dropout p, brightness bias); each Sunset entry is
        // strictly harsher than its Noon counterpart on every component.
        let (noise_sigma, channel_dropout_p, brightness_bias) = match self {
            Weather::ClearNoon => (0.0, 0.0, 0.0),
            Weather::CloudyNoon => (0.02, 0.005, -0.03),
            Weather::WetNoon => (0.04, 0.01, -0.05),
            Weather::HardRainNoon => (0.06, 0.02, -0.08),
            Weather::ClearSunset => (0.03, 0.01, -0.06),
            Weather::CloudySunset => (0.05, 0.015, -0.09),
            Weather::WetSunset => (0.07, 0.025, -0.12),
            Weather::HardRainSunset => (0.09, 0.035, -0.15),
        };
        WeatherProfile {
            name: self,
            noise_sigma,
            channel_dropout_p,
            brightness_bias,
            split: if self.index() < 4 { Split::Train } else { Split::Test },
        }
    }
}

impl fmt::Display for Weather {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Weather {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Weather::ALL
            .iter()
            .copied()
            .find(|w| format!("{w:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownWeather(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherProfile {
    pub name: Weather,
    pub noise_sigma: f64,
    pub channel_dropout_p: f64,
    pub brightness_bias: f64,
    pub split: Split,
}

impl WeatherProfile {
    pub fn is_identity(&self) -> bool {
        self.noise_sigma == 0.0 && self.channel_dropout_p == 0.0 && self.brightness_bias == 0.0
    }
}

/// The versioned protocol document shared by the CLI and the teleop client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub version: u32,
    pub scenes: Vec<SceneSpec>,
    pub weathers: Vec<WeatherProfile>,
}

impl Catalog {
    pub fn build() -> Self {
        Catalog {
            version: CATALOG_VERSION,
            scenes: (0..NUM_SCENES)
                .map(|id| build_scene(id).expect("catalog ids are valid"))
                .collect(),
            weathers: Weather::ALL.iter().map(|w| w.profile()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("catalog serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
