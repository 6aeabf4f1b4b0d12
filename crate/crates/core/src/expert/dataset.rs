//! Demonstration dataset and its JSON Lines file format.
//!
//! Line 1 is a header with the schema version and the catalog hash. Each
//! trajectory is a `trajectory` line followed by one `sample` line per frame;
//! rasters travel as base64.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::decision::{CommandPair, LatCmd, LonCmd};
use crate::error::{Error, Result};
use crate::sim::render::{Observation, RASTER_LEN};
use crate::sim::scene::{Catalog, Mission, Weather};
use crate::sim::terminal::TerminalEvent;
use crate::sim::world::Action;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSplit {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scene_id: u32,
    pub route_id: u32,
    pub weather: Weather,
    pub tick: u32,
    pub seed: u64,
}

/// One recorded frame: what the driver saw, the label, and what ran.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Observation,
    /// Pre-noise expert (or operator) action; the training target.
    pub action: Action,
    /// Action actually applied to the world, after any steering noise.
    pub executed: Action,
    pub cmds: CommandPair,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn perturbed(&self) -> bool {
        self.executed != self.action
    }
}

/// Control-quality summary of a stored trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryQuality {
    pub ego_jerk: f64,
    pub dev_waypoint: f64,
    pub disruption_events: u32,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scene_id: u32,
    pub route_id: u32,
    pub mission: Mission,
    pub weather: Weather,
    pub seed: u64,
    pub split: DataSplit,
    pub terminal: TerminalEvent,
    pub quality: TrajectoryQuality,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn num_frames(&self) -> usize {
        self.trajectories.iter().map(|t| t.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn in_split(&self, split: DataSplit) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(move |t| t.split == split)
    }

    pub fn frames(&self, split: DataSplit) -> impl Iterator<Item = &Sample> {
        self.in_split(split).flat_map(|t| &t.samples)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::file(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(BufReader::new(f))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = Line::Header {
            schema_version: DATASET_SCHEMA_VERSION,
            catalog_hash: Catalog::build().hash(),
            trajectories: self.trajectories.len(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for (id, t) in self.trajectories.iter().enumerate() {
            let line = Line::Trajectory {
                id,
                scene_id: t.scene_id,
                route_id: t.route_id,
                mission: t.mission,
                weather: t.weather,
                seed: t.seed,
                split: t.split,
                terminal: t.terminal,
                quality: t.quality,
                frames: t.samples.len(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
            for s in &t.samples {
                writeln!(w, "{}", serde_json::to_string(&SampleLine::from_sample(id, s))?)?;
            }
        }
        Ok(())
    }

    /// Parses a dataset, reporting the 1-based line of the first problem.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, message: String| Error::DatasetLine { line, message };
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (n, first) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let first = first?;
        let expected = match serde_json::from_str::<Line>(&first) {
            Ok(Line::Header {
                schema_version,
                catalog_hash,
                trajectories,
            }) => {
                if schema_version != DATASET_SCHEMA_VERSION {
                    return Err(Error::SchemaVersion {
                        found: schema_version,
                        expected: DATASET_SCHEMA_VERSION,
                    });
                }
                if catalog_hash != Catalog::build().hash() {
                    return Err(bad(n, "catalog hash does not match this build's scene catalog".into()));
                }
                trajectories
            }
            Ok(_) => return Err(bad(n, "first line must be the header".into())),
            Err(e) => return Err(bad(n, e.to_string())),
        };

        let mut ds = Dataset::default();
        let mut pending = 0usize;
        let mut last_line = n;
        for (n, text) in lines {
            let text = text?;
            last_line = n;
            if pending > 0 {
                let s: SampleLine = serde_json::from_str(&text).map_err(|e| bad(n, e.to_string()))?;
                let id = ds.trajectories.len() - 1;
                if s.traj != id {
                    return Err(bad(n, format!("sample belongs to trajectory {}, expected {id}", s.traj)));
                }
                let sample = s.into_sample(n)?;
                ds.trajectories[id].samples.push(sample);
                pending -= 1;
                continue;
            }
            match serde_json::from_str::<Line>(&text).map_err(|e| bad(n, e.to_string()))? {
                Line::Trajectory {
                    id,
                    scene_id,
                    route_id,
                    mission,
                    weather,
                    seed,
                    split,
                    terminal,
                    quality,
                    frames,
                } => {
                    if id != ds.trajectories.len() {
                        return Err(bad(n, format!("trajectory id {id} out of sequence")));
                    }
                    ds.trajectories.push(Trajectory {
                        scene_id,
                        route_id,
                        mission,
                        weather,
                        seed,
                        split,
                        terminal,
                        quality,
                        samples: Vec::with_capacity(frames),
                    });
                    pending = frames;
                }
                Line::Header { .. } => return Err(bad(n, "unexpected second header".into())),
            }
        }
        if pending > 0 {
            return Err(bad(last_line + 1, format!("file ends {pending} samples short of its trajectory")));
        }
        if ds.trajectories.len() != expected {
            return Err(bad(
                last_line + 1,
                format!("header announces {expected} trajectories, found {}", ds.trajectories.len()),
            ));
        }
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header {
        schema_version: u32,
        catalog_hash: String,
        trajectories: usize,
    },
    Trajectory {
        id: usize,
        scene_id: u32,
        route_id: u32,
        mission: Mission,
        weather: Weather,
        seed: u64,
        split: DataSplit,
        terminal: TerminalEvent,
        quality: TrajectoryQuality,
        frames: usize,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    kind: String,
    traj: usize,
    meta: SampleMeta,
    lat: LatCmd,
    lon: LonCmd,
    action: [f64; 2],
    executed: [f64; 2],
    speed: f64,
    raster: String,
}

impl SampleLine {
    fn from_sample(traj: usize, s: &Sample) -> Self {
        Self {
            kind: "sample".into(),
            traj,
            meta: s.meta,
            lat: s.cmds.lat,
            lon: s.cmds.lon,
            action: [s.action.steer, s.action.accel],
            executed: [s.executed.steer, s.executed.accel],
            speed: s.obs.ego_speed,
            raster: B64.encode(&s.obs.raster),
        }
    }

    fn into_sample(self, line: usize) -> Result<Sample> {
        let bad = |message: String| Error::DatasetLine { line, message };
        if self.kind != "sample" {
            return Err(bad(format!("expected a sample line, found `{}`", self.kind)));
        }
        let raster = B64.decode(&self.raster).map_err(|e| bad(format!("raster: {e}")))?;
        if raster.len() != RASTER_LEN {
            return Err(bad(format!("raster has {} cells, expected {RASTER_LEN}", raster.len())));
        }
        let finite = self.action.iter().chain(&self.executed).all(|v| v.is_finite()) && self.speed.is_finite();
        if !finite {
            return Err(bad("non-finite value".into()));
        }
        Ok(Sample {
            obs: Observation {
                raster,
                ego_speed: self.speed,
            },
            action: Action::new(self.action[0], self.action[1]),
            executed: Action::new(self.executed[0], self.executed[1]),
            cmds: CommandPair::new(self.lat, self.lon),
            meta: self.meta,
        })
    }
}

/// Frame and trajectory counts per category.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Summary {
    pub frames: usize,
    pub trajectories: usize,
    pub by_scene: BTreeMap<u32, Count>,
    pub by_mission: BTreeMap<Mission, Count>,
    pub by_lat: BTreeMap<LatCmd, Count>,
    pub by_lon: BTreeMap<LonCmd, Count>,
}

/// `frames` in the bucket and the number of trajectories contributing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Count {
    pub frames: usize,
    pub trajectories: usize,
}

pub fn summarize(ds: &Dataset) -> Summary {
    let mut s = Summary {
        frames: ds.num_frames(),
        trajectories: ds.trajectories.len(),
        ..Default::default()
    };
    for t in &ds.trajectories {
        let n = t.samples.len();
        let c = s.by_scene.entry(t.scene_id).or_default();
        c.frames += n;
        c.trajectories += 1;
        let c = s.by_mission.entry(t.mission).or_default();
        c.frames += n;
        c.trajectories += 1;

        let mut lat: BTreeMap<LatCmd, usize> = BTreeMap::new();
        let mut lon: BTreeMap<LonCmd, usize> = BTreeMap::new();
        for smp in &t.samples {
            *lat.entry(smp.cmds.lat).or_default() += 1;
            *lon.entry(smp.cmds.lon).or_default() += 1;
        }
        for (k, f) in lat {
            let c = s.by_lat.entry(k).or_default();
            c.frames += f;
            c.trajectories += 1;
        }
        for (k, f) in lon {
            let c = s.by_lon.entry(k).or_default();
            c.frames += f;
            c.trajectories += 1;
        }
    }
    s
}

impl Summary {
    /// Plain-text tables, one per grouping, as `frames (trajectories)`.
    pub fn render(&self) -> String {
        fn table<K: std::fmt::Display>(out: &mut String, title: &str, rows: impl Iterator<Item = (K, Count)>) {
            out.push_str(&format!("{title}\n"));
            for (k, c) in rows {
                out.push_str(&format!("  {:<12} {:>8} ({})\n", k.to_string(), c.frames, c.trajectories));
            }
        }
        let mut out = format!("total        {:>8} ({})\n", self.frames, self.trajectories);
        table(&mut out, "by scene", self.by_scene.iter().map(|(k, c)| (format!("scene {k}"), *c)));
        table(&mut out, "by mission", self.by_mission.iter().map(|(k, c)| (format!("{k:?}"), *c)));
        table(&mut out, "by lateral command", self.by_lat.iter().map(|(k, c)| (*k, *c)));
        table(&mut out, "by longitudinal command", self.by_lon.iter().map(|(k, c)| (*k, *c)));
        out
    }
}
