//! JSON text frames exchanged with the teleop client.

use serde::{Deserialize, Serialize};

use crate::bench::QualityMetrics;
use crate::decision::CommandPair;
use crate::error::{Error, Result};
use crate::sim::terminal::TerminalEvent;
use crate::sim::world::{Action, WorldState};
use crate::sim::Weather;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoView {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianView {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub disrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmdsView {
    pub lat: String,
    pub lon: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    State {
        tick: u32,
        ego: EgoView,
        pedestrians: Vec<PedestrianView>,
        cmds: CmdsView,
        route: Vec<[f64; 2]>,
    },
    EpisodeEnd {
        terminal: TerminalEvent,
        metrics: QualityMetrics,
        /// Whether the trajectory was appended to the demo file.
        recorded: bool,
    },
    /// Sent to a second client while a session is active, before closing.
    Busy { message: String },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Control { steer: f64, accel: f64 },
    Start { scene: u32, route: u32, weather: String, seed: u64 },
}

/// Episode parameters requested by a client or configured on the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StartSpec {
    pub scene: u32,
    pub route: u32,
    pub weather: Weather,
    pub seed: u64,
}

impl ServerMsg {
    pub fn state(world: &WorldState, cmds: CommandPair) -> Self {
        let p = world.ego.pose;
        ServerMsg::State {
            tick: world.tick,
            ego: EgoView {
                x: p.position.x,
                y: p.position.y,
                heading: p.heading,
                speed: world.ego.speed,
            },
            pedestrians: world
                .pedestrians
                .iter()
                .map(|q| PedestrianView {
                    id: q.id,
                    x: q.pose.position.x,
                    y: q.pose.position.y,
                    disrupted: q.disrupted,
                })
                .collect(),
            cmds: CmdsView {
                lat: cmds.lat.to_string(),
                lon: cmds.lon.to_string(),
            },
            route: world.route.waypoints.iter().map(|w| [w.position.x, w.position.y]).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

impl ClientMsg {
    /// Parses and validates one client frame. Controls come back clipped to
    /// the actuator range.
    pub fn parse(text: &str) -> Result<Self> {
        let msg: ClientMsg = serde_json::from_str(text).map_err(|e| Error::Protocol(e.to_string()))?;
        match msg {
            ClientMsg::Control { steer, accel } => {
                if !(steer.is_finite() && accel.is_finite()) {
                    return Err(Error::Protocol("control values must be finite".into()));
                }
                let a = Action::new(steer, accel).clipped();
                Ok(ClientMsg::Control {
                    steer: a.steer,
                    accel: a.accel,
                })
            }
            start @ ClientMsg::Start { .. } => Ok(start),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages serialize")
    }

    pub fn start_spec(&self) -> Result<Option<StartSpec>> {
        match self {
            ClientMsg::Start {
                scene,
                route,
                weather,
                seed,
            } => Ok(Some(StartSpec {
                scene: *scene,
                route: *route,
                weather: weather.parse()?,
                seed: *seed,
            })),
            ClientMsg::Control { .. } => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::Episode;

    #[test]
    fn control_is_clipped_and_checked() {
        let m = ClientMsg::parse(r#"{"type":"control","steer":1.7,"accel":-0.2}"#).unwrap();
        assert_eq!(m, ClientMsg::Control { steer: 1.0, accel: -0.2 });
        assert!(ClientMsg::parse(r#"{"type":"control","steer":1e400,"accel":0}"#).is_err());
        assert!(ClientMsg::parse(r#"{"type":"steer"}"#).is_err());
        assert!(ClientMsg::parse("not json").is_err());
    }

    #[test]
    fn start_round_trip() {
        let m = ClientMsg::Start {
            scene: 2,
            route: 1,
            weather: "WetSunset".into(),
            seed: 9,
        };
        let back = ClientMsg::parse(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.start_spec().unwrap().unwrap().weather, Weather::WetSunset);
        let bad = ClientMsg::Start {
            scene: 0,
            route: 0,
            weather: "Fog".into(),
            seed: 0,
        };
        assert!(bad.start_spec().is_err());
    }

    #[test]
    fn state_frame_has_the_documented_fields() {
        let ep = Episode::new(0, 0, Weather::ClearNoon, 3).unwrap();
        let msg = ServerMsg::state(&ep.world, ep.commands().unwrap());
        let v: serde_json::Value = serde_json::from_str(&msg.to_json()).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["tick"], 0);
        for k in ["x", "y", "heading", "speed"] {
            assert!(v["ego"][k].is_number(), "{k}");
        }
        assert!(v["cmds"]["lat"].is_string() && v["cmds"]["lon"].is_string());
        assert_eq!(v["route"][0].as_array().unwrap().len(), 2);
        let peds = v["pedestrians"].as_array().unwrap();
        assert!(!peds.is_empty());
        for k in ["id", "x", "y", "disrupted"] {
            assert!(!peds[0][k].is_null(), "{k}");
        }
    }

    #[test]
    fn episode_end_carries_metric_keys() {
        let msg = ServerMsg::EpisodeEnd {
            terminal: TerminalEvent::Success,
            metrics: QualityMetrics {
                ego_jerk: 0.0,
                other_jerk: 1.0,
                dev_waypoint: 0.1,
                dev_destination: 0.2,
                heading_dev: 3.0,
                total_steps: 200.0,
            },
            recorded: true,
        };
        let v: serde_json::Value = serde_json::from_str(&msg.to_json()).unwrap();
        assert_eq!(v["type"], "episode_end");
        assert_eq!(v["terminal"], "Success");
        for k in ["ego_jerk", "other_jerk", "dev_waypoint", "dev_destination", "heading_dev", "total_steps"] {
            assert!(v["metrics"][k].is_number(), "{k}");
        }
    }
}
