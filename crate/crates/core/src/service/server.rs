//! Single-session WebSocket server for human demonstrations.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::SeedableRng;
use tungstenite::{Message, WebSocket};

use super::protocol::{ClientMsg, ServerMsg, StartSpec};
use crate::bench::quality;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::expert::collect::STREAM_NOISE;
use crate::expert::{passes_quality_gate, DataSplit, Dataset, Recorder};
use crate::sim::scene::Split;
use crate::sim::terminal::TerminalEvent;
use crate::sim::world::Action;
use crate::sim::{derive_seed, SimRng};

pub const DEFAULT_TICK: Duration = Duration::from_millis(100);
const ACCEPT_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// Episode spawned when a client connects without sending `start`.
    pub default_start: StartSpec,
    /// Demo file; kept trajectories are appended here.
    pub out: Option<PathBuf>,
    pub noise_p: f64,
    pub tick: Duration,
    /// Step only after a control message arrives for each state, instead of
    /// holding the last control on a fixed clock. Meant for scripted clients.
    pub lockstep: bool,
}

impl ServeConfig {
    pub fn new(default_start: StartSpec) -> Self {
        Self {
            default_start,
            out: None,
            noise_p: 0.0,
            tick: DEFAULT_TICK,
            lockstep: false,
        }
    }
}

pub struct Server {
    listener: TcpListener,
    config: Arc<ServeConfig>,
    busy: Arc<AtomicBool>,
    demos: Arc<Mutex<Dataset>>,
}

impl Server {
    /// Binds the listener and loads any existing demo file.
    pub fn bind(addr: impl ToSocketAddrs, config: ServeConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.noise_p) {
            return Err(Error::Config(format!("noise probability {} outside [0, 1]", config.noise_p)));
        }
        let demos = match &config.out {
            Some(p) if p.exists() => Dataset::read(p)?,
            _ => Dataset::default(),
        };
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            config: Arc::new(config),
            busy: Arc::new(AtomicBool::new(false)),
            demos: Arc::new(Mutex::new(demos)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts clients until `max_sessions` sessions have run (forever when
    /// `None`). A client arriving during an active session is told the
    /// server is busy and disconnected.
    pub fn run(&self, max_sessions: Option<usize>) -> Result<()> {
        self.listener.set_nonblocking(true)?;
        let mut sessions = Vec::new();
        loop {
            let limit_hit = max_sessions.is_some_and(|m| sessions.len() >= m);
            if limit_hit && !self.busy.load(Ordering::SeqCst) {
                break;
            }
            let stream = match self.listener.accept() {
                Ok((s, _)) => s,
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    thread::sleep(ACCEPT_POLL);
                    continue;
                }
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            stream.set_nonblocking(false)?;
            if limit_hit || self.busy.swap(true, Ordering::SeqCst) {
                thread::spawn(move || refuse(stream));
                continue;
            }
            let (config, busy, demos) = (self.config.clone(), self.busy.clone(), self.demos.clone());
            sessions.push(thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                match tungstenite::accept(stream) {
                    Ok(ws) => {
                        info!("session from {peer:?}");
                        if let Err(e) = Session::new(ws, &config, &demos).run() {
                            warn!("session from {peer:?} ended with error: {e}");
                        }
                    }
                    Err(e) => warn!("handshake with {peer:?} failed: {e}"),
                }
                busy.store(false, Ordering::SeqCst);
            }));
        }
        for s in sessions {
            let _ = s.join();
        }
        Ok(())
    }

    /// Trajectories recorded so far (including any loaded at bind time).
    pub fn demos(&self) -> Dataset {
        self.demos.lock().expect("demo lock").clone()
    }
}

fn refuse(stream: TcpStream) {
    if let Ok(mut ws) = tungstenite::accept(stream) {
        let msg = ServerMsg::Busy {
            message: "another session is active".into(),
        };
        let _ = ws.send(Message::text(msg.to_json()));
        let _ = ws.close(None);
        let _ = ws.flush();
    }
}

enum Polled {
    Msg(ClientMsg),
    Timeout,
    Closed,
}

enum Outcome {
    Finished,
    Restart(StartSpec),
    Disconnected,
}

struct Session<'a> {
    ws: WebSocket<TcpStream>,
    config: &'a ServeConfig,
    demos: &'a Mutex<Dataset>,
}

impl<'a> Session<'a> {
    fn new(ws: WebSocket<TcpStream>, config: &'a ServeConfig, demos: &'a Mutex<Dataset>) -> Self {
        Self { ws, config, demos }
    }

    fn run(mut self) -> Result<()> {
        let mut next = Some(self.config.default_start);
        loop {
            let start = match next.take() {
                Some(s) => s,
                None => match self.wait_for_start()? {
                    Some(s) => s,
                    None => return Ok(()),
                },
            };
            match self.episode(start)? {
                Outcome::Finished => {}
                Outcome::Restart(s) => next = Some(s),
                Outcome::Disconnected => {
                    info!("client left; episode discarded");
                    return Ok(());
                }
            }
        }
    }

    fn send(&mut self, msg: &ServerMsg) -> bool {
        self.ws.send(Message::text(msg.to_json())).is_ok()
    }

    /// Reads one frame, waiting until `deadline` (forever when `None`).
    /// Malformed frames are answered with an error message and skipped.
    fn poll(&mut self, deadline: Option<Instant>) -> Result<Polled> {
        loop {
            let timeout = match deadline {
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Ok(Polled::Timeout);
                    }
                    Some(left)
                }
                None => None,
            };
            self.ws.get_ref().set_read_timeout(timeout)?;
            match self.ws.read() {
                Ok(Message::Text(t)) => match ClientMsg::parse(&t) {
                    Ok(m) => return Ok(Polled::Msg(m)),
                    Err(e) => {
                        if !self.send(&ServerMsg::Error { message: e.to_string() }) {
                            return Ok(Polled::Closed);
                        }
                    }
                },
                Ok(Message::Close(_)) => return Ok(Polled::Closed),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
                {
                    return Ok(Polled::Timeout)
                }
                Err(_) => return Ok(Polled::Closed),
            }
        }
    }

    fn wait_for_start(&mut self) -> Result<Option<StartSpec>> {
        loop {
            match self.poll(None)? {
                Polled::Msg(m) => match m.start_spec() {
                    Ok(Some(s)) => return Ok(Some(s)),
                    Ok(None) => {}
                    Err(e) => {
                        self.send(&ServerMsg::Error { message: e.to_string() });
                    }
                },
                Polled::Timeout => {}
                Polled::Closed => return Ok(None),
            }
        }
    }

    fn episode(&mut self, start: StartSpec) -> Result<Outcome> {
        let mut ep = match Episode::new(start.scene, start.route, start.weather, start.seed) {
            Ok(ep) => ep,
            Err(e) => {
                self.send(&ServerMsg::Error { message: e.to_string() });
                return Ok(Outcome::Finished);
            }
        };
        let mut rec = Recorder::new(&ep, start.route, start.seed);
        let mut rng = SimRng::seed_from_u64(derive_seed(start.seed, &[STREAM_NOISE]));
        let mut held = Action::ZERO;

        while !ep.is_done() {
            let cmds = match ep.commands() {
                Ok(c) => c,
                Err(Error::OffRoute { .. }) => {
                    ep.force_terminal(TerminalEvent::LaneInvasion);
                    break;
                }
                Err(e) => return Err(e),
            };
            if !self.send(&ServerMsg::state(&ep.world, cmds)) {
                return Ok(Outcome::Disconnected);
            }
            let deadline = Instant::now() + self.config.tick;
            loop {
                let wait = if self.config.lockstep { None } else { Some(deadline) };
                match self.poll(wait)? {
                    Polled::Msg(ClientMsg::Control { steer, accel }) => {
                        held = Action::new(steer, accel);
                        if self.config.lockstep {
                            break;
                        }
                    }
                    Polled::Msg(m @ ClientMsg::Start { .. }) => match m.start_spec() {
                        Ok(Some(s)) => return Ok(Outcome::Restart(s)),
                        Ok(None) => unreachable!("start message"),
                        Err(e) => {
                            self.send(&ServerMsg::Error { message: e.to_string() });
                        }
                    },
                    Polled::Timeout => break,
                    Polled::Closed => return Ok(Outcome::Disconnected),
                }
            }
            let obs = ep.observe();
            rec.step(&mut ep, obs, cmds, held, &mut rng, self.config.noise_p)?;
        }

        let (mut traj, result) = rec.finish(&ep);
        let metrics = quality(std::slice::from_ref(&result))?;
        let keep = self.config.out.is_some() && passes_quality_gate(&traj);
        if keep {
            traj.split = match ep.world.scene.split {
                Split::Train => DataSplit::Train,
                Split::Test => DataSplit::Test,
            };
            let mut demos = self.demos.lock().expect("demo lock");
            demos.trajectories.push(traj);
            if let Some(out) = &self.config.out {
                demos.write(out)?;
            }
            info!("kept demo; {} trajectories on file", demos.trajectories.len());
        }
        self.send(&ServerMsg::EpisodeEnd {
            terminal: result.terminal,
            metrics,
            recorded: keep,
        });
        Ok(Outcome::Finished)
    }
}
