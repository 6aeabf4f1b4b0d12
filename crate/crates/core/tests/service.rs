use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use mtcil::bench::{run_schedule, schedule, Condition, ExpertDriver};
use mtcil::episode::Episode;
use mtcil::expert::{expert_action, Dataset};
use mtcil::service::{ClientMsg, ServeConfig, ServerMsg, Server, StartSpec};
use mtcil::sim::{TerminalEvent, Weather};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn spawn(config: ServeConfig, sessions: usize) -> (String, thread::JoinHandle<Server>) {
    let server = Server::bind("127.0.0.1:0", config).unwrap();
    let url = format!("ws://{}", server.local_addr().unwrap());
    let h = thread::spawn(move || {
        server.run(Some(sessions)).unwrap();
        server
    });
    (url, h)
}

fn connect(url: &str) -> Client {
    tungstenite::connect(url).unwrap().0
}

fn recv(ws: &mut Client) -> ServerMsg {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Close(_) => panic!("server closed"),
            _ => {}
        }
    }
}

fn send(ws: &mut Client, msg: &ClientMsg) {
    ws.send(Message::text(msg.to_json())).unwrap();
}

fn start_msg(s: StartSpec) -> ClientMsg {
    ClientMsg::Start {
        scene: s.scene,
        route: s.route,
        weather: s.weather.to_string(),
        seed: s.seed,
    }
}

/// Drives one episode over the wire with the expert, mirroring the world
/// locally to compute each action. On a fresh connection the first frame
/// belongs to the server's default episode and is skipped.
fn drive_expert(ws: &mut Client, spec: StartSpec, fresh: bool) -> (TerminalEvent, bool, usize) {
    if fresh {
        assert!(matches!(recv(ws), ServerMsg::State { tick: 0, .. }));
    }
    send(ws, &start_msg(spec));
    let mut local = Episode::new(spec.scene, spec.route, spec.weather, spec.seed).unwrap();
    let mut states = 0;
    loop {
        match recv(ws) {
            ServerMsg::State { tick, ego, .. } => {
                assert_eq!(tick, local.world.tick);
                assert_eq!(ego.x, local.world.ego.pose.position.x);
                states += 1;
                let a = expert_action(&local.world, &local.world.route).unwrap();
                send(
                    ws,
                    &ClientMsg::Control {
                        steer: a.steer,
                        accel: a.accel,
                    },
                );
                local.step(a).unwrap();
            }
            ServerMsg::EpisodeEnd { terminal, recorded, .. } => return (terminal, recorded, states),
            other => panic!("unexpected {other:?}"),
        }
    }
}

fn lockstep(start: StartSpec) -> ServeConfig {
    ServeConfig {
        lockstep: true,
        ..ServeConfig::new(start)
    }
}

const START: StartSpec = StartSpec {
    scene: 0,
    route: 0,
    weather: Weather::ClearNoon,
    seed: 5,
};

#[test]
fn idle_client_times_out() {
    let (url, h) = spawn(
        ServeConfig {
            tick: Duration::ZERO,
            ..ServeConfig::new(START)
        },
        1,
    );
    let mut ws = connect(&url);
    let mut states = 0;
    let terminal = loop {
        match recv(&mut ws) {
            ServerMsg::State { ego, .. } => {
                assert_eq!(ego.speed, 0.0);
                states += 1;
            }
            ServerMsg::EpisodeEnd { terminal, recorded, .. } => {
                assert!(!recorded);
                break terminal;
            }
            other => panic!("unexpected {other:?}"),
        }
    };
    assert_eq!(terminal, TerminalEvent::Timeout);
    assert_eq!(states, 1000);
    drop(ws);
    h.join().unwrap();
}

#[test]
fn successful_demo_is_appended_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demos.jsonl");
    let (url, h) = spawn(
        ServeConfig {
            out: Some(out.clone()),
            ..lockstep(START)
        },
        1,
    );
    let mut ws = connect(&url);
    let (terminal, recorded, _) = drive_expert(&mut ws, START, true);
    assert_eq!(terminal, TerminalEvent::Success);
    assert!(recorded);
    ws.close(None).unwrap();
    let server = h.join().unwrap();
    let ds = Dataset::read(&out).unwrap();
    assert_eq!(ds.trajectories.len(), 1);
    assert_eq!(ds, server.demos());
    let t = &ds.trajectories[0];
    assert_eq!((t.scene_id, t.route_id, t.seed), (0, 0, 5));
    assert!(t.samples.iter().all(|s| !s.perturbed()));
}

#[test]
fn second_client_is_refused_while_busy() {
    let (url, h) = spawn(lockstep(START), 1);
    let mut first = connect(&url);
    assert!(matches!(recv(&mut first), ServerMsg::State { tick: 0, .. }));
    let mut second = connect(&url);
    assert!(matches!(recv(&mut second), ServerMsg::Busy { .. }));
    drop(first);
    h.join().unwrap();
}

#[test]
fn disconnect_discards_the_episode() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demos.jsonl");
    let (url, h) = spawn(
        ServeConfig {
            out: Some(out.clone()),
            ..lockstep(START)
        },
        1,
    );
    let mut ws = connect(&url);
    for _ in 0..5 {
        recv(&mut ws);
        send(&mut ws, &ClientMsg::Control { steer: 0.0, accel: 0.5 });
    }
    drop(ws);
    let server = h.join().unwrap();
    assert!(server.demos().trajectories.is_empty());
    assert!(!out.exists());
}

#[test]
fn malformed_frames_get_an_error_reply() {
    let (url, h) = spawn(lockstep(START), 1);
    let mut ws = connect(&url);
    recv(&mut ws);
    ws.send(Message::text("{\"type\":\"control\",\"steer\":\"left\"}")).unwrap();
    assert!(matches!(recv(&mut ws), ServerMsg::Error { .. }));
    send(&mut ws, &ClientMsg::Control { steer: 0.0, accel: 0.0 });
    assert!(matches!(recv(&mut ws), ServerMsg::State { tick: 1, .. }));
    drop(ws);
    h.join().unwrap();
}

#[test]
fn wire_expert_matches_in_process_success_rate() {
    let specs: Vec<_> = schedule(Condition::TrainTrain, 2, 21).unwrap().into_iter().take(50).collect();
    let local = run_schedule(|| Ok(ExpertDriver), &specs).unwrap();
    let local_sr = local.iter().filter(|r| r.terminal == TerminalEvent::Success).count() as f64 / 50.0;

    let (url, h) = spawn(lockstep(START), 1);
    let mut ws = connect(&url);
    let mut wins = 0;
    for (i, s) in specs.iter().enumerate() {
        let spec = StartSpec {
            scene: s.scene_id,
            route: s.route_id,
            weather: s.weather,
            seed: s.seed,
        };
        let (terminal, _, _) = drive_expert(&mut ws, spec, i == 0);
        wins += (terminal == TerminalEvent::Success) as usize;
    }
    drop(ws);
    h.join().unwrap();
    let wire_sr = wins as f64 / 50.0;
    assert!((wire_sr - local_sr).abs() <= 0.02, "wire {wire_sr} vs local {local_sr}");
}

#[test]
fn state_cadence_holds_ten_hertz() {
    let (url, h) = spawn(ServeConfig::new(START), 1);
    let mut ws = connect(&url);
    let mut stamps = Vec::new();
    while stamps.len() < 30 {
        if let ServerMsg::State { .. } = recv(&mut ws) {
            stamps.push(Instant::now());
            send(&mut ws, &ClientMsg::Control { steer: 0.0, accel: 0.0 });
        }
    }
    drop(ws);
    h.join().unwrap();
    let worst = stamps
        .windows(2)
        .map(|w| (w[1] - w[0]).as_secs_f64() - 0.1)
        .fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(worst < 0.02, "worst jitter {worst:.4}s");
}
