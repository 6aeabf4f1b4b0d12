//! Shared perception and measurement encoders feeding command-selected
//! control heads, plus an optional speed head on the image feature.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::config::{ControlMode, EncoderKind, ModelConfig};
use crate::decision::{CommandPair, LatCmd, LonCmd};
use crate::error::{Error, Result};
use crate::nn::{he_normal, ParamStore, Tape, Tensor, Var};
use crate::sim::render::{Observation, RASTER_CHANNELS, RASTER_SIZE};
use crate::sim::world::Action;
use crate::sim::SimRng;

pub const IMAGE_FEATURES: usize = 128;
pub const MEASUREMENT_FEATURES: usize = 16;
pub const FEATURES: usize = IMAGE_FEATURES + MEASUREMENT_FEATURES;
pub const HEAD_HIDDEN: usize = 64;
/// Speed enters the measurement encoder in units of 5 m/s.
pub const SPEED_INPUT_SCALE: f64 = 0.2;
pub const S_LAT: &str = "s_lat";
pub const S_LON: &str = "s_lon";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Raw (unclipped) network outputs for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedControls {
    pub steer: f64,
    pub accel: f64,
    pub speed_pred: Option<f64>,
}

/// A minibatch of network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[batch, 48, 48, 5]`, values in [0, 1].
    pub images: Tensor,
    /// `[batch, 1]` ego speed in m/s.
    pub speeds: Tensor,
    pub cmds: Vec<CommandPair>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.cmds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cmds.is_empty()
    }

    pub fn single(obs: &Observation, cmds: CommandPair) -> Self {
        let mut img = vec![0.0; IMAGE_LEN];
        image_into(obs, &mut img);
        Self {
            images: Tensor::new(vec![1, RASTER_SIZE, RASTER_SIZE, RASTER_CHANNELS], img).expect("image size"),
            speeds: Tensor::matrix(1, 1, vec![obs.ego_speed]).expect("scalar"),
            cmds: vec![cmds],
        }
    }
}

pub const IMAGE_LEN: usize = RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE;

/// Writes the channel-major raster into `out` in height-width-channel order.
pub fn image_into(obs: &Observation, out: &mut [f64]) {
    let plane = RASTER_SIZE * RASTER_SIZE;
    for (p, px) in out.chunks_exact_mut(RASTER_CHANNELS).enumerate() {
        for (c, v) in px.iter_mut().enumerate() {
            *v = obs.raster[c * plane + p] as f64 / 255.0;
        }
    }
}

/// Tape nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[batch, 144]` joint feature (before dropout).
    pub feature: Var,
    /// `[batch, 1]`
    pub steer: Var,
    /// `[batch, 1]`
    pub accel: Var,
    /// `[batch, 1]` predicted speed, when the speed head is enabled.
    pub speed: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: ModelConfig,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: ModelConfig,
    s_lat: f64,
    s_lon: f64,
}

fn conv_layers(config: &ModelConfig) -> Vec<(String, usize, usize, usize)> {
    let [c1, c2, c3] = config.channels;
    let c0 = RASTER_CHANNELS;
    match config.encoder {
        EncoderKind::Small => vec![
            ("enc.conv1".into(), c0, c1, 2),
            ("enc.conv2".into(), c1, c2, 2),
            ("enc.conv3".into(), c2, c3, 2),
        ],
        EncoderKind::Deep => vec![
            ("enc.conv1".into(), c0, c1, 2),
            ("enc.conv2".into(), c1, c1, 1),
            ("enc.conv3".into(), c1, c2, 2),
            ("enc.conv4".into(), c2, c2, 1),
            ("enc.conv5".into(), c2, c3, 2),
            ("enc.conv6".into(), c3, c3, 1),
        ],
    }
}

/// Side of the final feature map (48 halved three times).
const MAP_SIDE: usize = RASTER_SIZE / 8;

fn head_names(config: &ModelConfig) -> Vec<(String, usize)> {
    match config.control_mode {
        ControlMode::MultiTask => LatCmd::ALL
            .iter()
            .map(|c| (format!("lat{}", c.index()), 1))
            .chain(LonCmd::ALL.iter().map(|c| (format!("lon{}", c.index()), 1)))
            .collect(),
        ControlMode::SingleBranch => LatCmd::ALL.iter().map(|c| (format!("branch{}", c.index()), 2)).collect(),
    }
}

/// Every parameter with its shape and fan-in (0 for biases and log
/// variances).
pub fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let mut out = Vec::new();
    let dense = |name: &str, inp: usize, outp: usize, out: &mut Vec<_>| {
        out.push((format!("{name}.w"), vec![inp, outp], inp));
        out.push((format!("{name}.b"), vec![outp], 0));
    };
    for (name, cin, cout, _) in conv_layers(config) {
        out.push((format!("{name}.w"), vec![3, 3, cin, cout], 9 * cin));
        out.push((format!("{name}.b"), vec![cout], 0));
    }
    dense("enc.fc", MAP_SIDE * MAP_SIDE * config.channels[2], IMAGE_FEATURES, &mut out);
    dense("meas.fc1", 1, MEASUREMENT_FEATURES, &mut out);
    dense("meas.fc2", MEASUREMENT_FEATURES, MEASUREMENT_FEATURES, &mut out);
    dense("meas.fc3", MEASUREMENT_FEATURES, MEASUREMENT_FEATURES, &mut out);
    for (head, outputs) in head_names(config) {
        dense(&format!("{head}.fc1"), FEATURES, HEAD_HIDDEN, &mut out);
        dense(&format!("{head}.fc2"), HEAD_HIDDEN, HEAD_HIDDEN, &mut out);
        dense(&format!("{head}.out"), HEAD_HIDDEN, outputs, &mut out);
    }
    if config.speed_branch {
        dense("speed.fc", IMAGE_FEATURES, HEAD_HIDDEN, &mut out);
        dense("speed.out", HEAD_HIDDEN, 1, &mut out);
    }
    out.push((S_LAT.into(), vec![1], 0));
    out.push((S_LON.into(), vec![1], 0));
    out
}

/// Output layers start small so initial predictions sit near zero.
const OUTPUT_INIT_SCALE: f64 = 0.1;

impl Policy {
    /// He-initialized weights, zero biases, `s_lat = s_lon = 0`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SimRng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in param_layout(&config) {
            let mut t = if fan_in == 0 {
                Tensor::zeros(&shape)
            } else {
                he_normal(&shape, fan_in, &mut rng)
            };
            if name.ends_with(".out.w") {
                t.data_mut().iter_mut().for_each(|v| *v *= OUTPUT_INIT_SCALE);
            }
            params.insert(name, t);
        }
        Ok(Self { config, params })
    }

    /// All parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, _) in param_layout(&config) {
            params.insert(name, Tensor::zeros(&shape));
        }
        Ok(Self { config, params })
    }

    pub fn s_values(&self) -> (f64, f64) {
        let get = |n| self.params.get(n).map(Tensor::item).unwrap_or(0.0);
        (get(S_LAT), get(S_LON))
    }

    fn dense(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let w = tape.param(&self.params, &format!("{name}.w"))?;
        let b = tape.param(&self.params, &format!("{name}.b"))?;
        tape.linear(x, w, b)
    }

    fn dense_relu(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let y = self.dense(tape, name, x)?;
        tape.relu(y)
    }

    fn conv(&self, tape: &mut Tape, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = tape.param(&self.params, &format!("{name}.w"))?;
        let b = tape.param(&self.params, &format!("{name}.b"))?;
        tape.conv3x3(x, w, b, stride)
    }

    /// Image feature `[batch, 128]`.
    pub fn encode_image(&self, tape: &mut Tape, images: Var) -> Result<Var> {
        let layers = conv_layers(&self.config);
        let mut h = images;
        match self.config.encoder {
            EncoderKind::Small => {
                for (name, _, _, stride) in &layers {
                    let y = self.conv(tape, name, h, *stride)?;
                    h = tape.relu(y)?;
                }
            }
            EncoderKind::Deep => {
                for pair in layers.chunks(2) {
                    let (down, _, _, s1) = &pair[0];
                    let (same, _, _, s2) = &pair[1];
                    let y = self.conv(tape, down, h, *s1)?;
                    let a = tape.relu(y)?;
                    let y = self.conv(tape, same, a, *s2)?;
                    let skip = tape.add(y, a)?;
                    h = tape.relu(skip)?;
                }
            }
        }
        let flat = tape.flatten(h)?;
        self.dense_relu(tape, "enc.fc", flat)
    }

    /// Measurement feature `[batch, 16]`.
    pub fn encode_speed(&self, tape: &mut Tape, speeds: Var) -> Result<Var> {
        let v = tape.scale(speeds, SPEED_INPUT_SCALE)?;
        let h = self.dense_relu(tape, "meas.fc1", v)?;
        let h = self.dense_relu(tape, "meas.fc2", h)?;
        self.dense_relu(tape, "meas.fc3", h)
    }

    fn head(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let h = self.dense_relu(tape, &format!("{name}.fc1"), x)?;
        let h = self.dense_relu(tape, &format!("{name}.fc2"), h)?;
        self.dense(tape, &format!("{name}.out"), h)
    }

    /// Runs `head{k}` on the rows whose command index is `k` and reassembles
    /// the outputs in batch order. Heads with no rows stay off the tape.
    fn routed(&self, tape: &mut Tape, prefix: &str, x: Var, index: &[usize], heads: usize) -> Result<Var> {
        let total = index.len();
        let mut acc: Option<Var> = None;
        for k in 0..heads {
            let rows: Vec<usize> = (0..total).filter(|&i| index[i] == k).collect();
            if rows.is_empty() {
                continue;
            }
            let y = if rows.len() == total {
                self.head(tape, &format!("{prefix}{k}"), x)?
            } else {
                let xs = tape.gather_rows(x, &rows)?;
                let ys = self.head(tape, &format!("{prefix}{k}"), xs)?;
                tape.scatter_rows(ys, &rows, total)?
            };
            acc = Some(match acc {
                None => y,
                Some(a) => tape.add(a, y)?,
            });
        }
        acc.ok_or_else(|| Error::Config("empty batch".into()))
    }

    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape, batch: &Batch, mode: Mode, rng: &mut R) -> Result<Forward> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let images = tape.input(batch.images.clone())?;
        let speeds = tape.input(batch.speeds.clone())?;
        let img = self.encode_image(tape, images)?;
        let meas = self.encode_speed(tape, speeds)?;
        let feature = tape.concat(img, meas)?;
        let x = tape.dropout(feature, self.config.dropout_p, mode == Mode::Train, rng)?;

        let lat: Vec<usize> = batch.cmds.iter().map(|c| c.lat.index()).collect();
        let (steer, accel) = match self.config.control_mode {
            ControlMode::MultiTask => {
                let lon: Vec<usize> = batch.cmds.iter().map(|c| c.lon.index()).collect();
                let steer = self.routed(tape, "lat", x, &lat, LatCmd::ALL.len())?;
                let accel = self.routed(tape, "lon", x, &lon, LonCmd::ALL.len())?;
                (steer, accel)
            }
            ControlMode::SingleBranch => {
                let both = self.routed(tape, "branch", x, &lat, LatCmd::ALL.len())?;
                (tape.column(both, 0)?, tape.column(both, 1)?)
            }
        };
        let speed = if self.config.speed_branch {
            let h = self.dense_relu(tape, "speed.fc", img)?;
            Some(self.dense(tape, "speed.out", h)?)
        } else {
            None
        };
        Ok(Forward {
            feature,
            steer,
            accel,
            speed,
        })
    }

    /// Eval-mode prediction for one observation.
    pub fn predict(&self, obs: &Observation, cmds: CommandPair) -> Result<PredictedControls> {
        let mut tape = Tape::new();
        let mut rng = SimRng::seed_from_u64(0);
        let f = self.forward(&mut tape, &Batch::single(obs, cmds), Mode::Eval, &mut rng)?;
        Ok(PredictedControls {
            steer: tape.value(f.steer).item(),
            accel: tape.value(f.accel).item(),
            speed_pred: f.speed.map(|s| tape.value(s).item()),
        })
    }

    /// Prediction clipped to the actuator range.
    pub fn act(&self, obs: &Observation, cmds: CommandPair) -> Result<Action> {
        let p = self.predict(obs, cmds)?;
        Ok(clip_controls(&p))
    }

    /// Writes the parameter checkpoint to `path` and the configuration with
    /// the learned log variances to the sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        let (s_lat, s_lon) = self.s_values();
        let side = Sidecar {
            config: self.config.clone(),
            s_lat,
            s_lon,
        };
        let sp = sidecar_path(path);
        std::fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::file(sp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sp = sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::file(&sp, e))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", sp.display())))?;
        side.config.validate()?;
        let params = ParamStore::load(path)?;
        for (name, shape, _) in param_layout(&side.config) {
            let t = params
                .get(&name)
                .map_err(|_| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config: side.config,
            params,
        })
    }
}

pub fn clip_controls(p: &PredictedControls) -> Action {
    Action::new(p.steer, p.accel).clipped()
}

/// `model.json` → `model.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}
