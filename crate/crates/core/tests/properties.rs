use proptest::prelude::*;

use mtcil::bench::{rates, EpisodeResult};
use mtcil::decision::{LatCmd, LonCmd};
use mtcil::expert::inject_noise;
use mtcil::nn::{ParamStore, Tape, Tensor};
use mtcil::policy::{hloss, uloss};
use mtcil::service::ClientMsg;
use mtcil::sim::world::{heading_error, SPEED_MAX};
use mtcil::sim::{ego_step, Action, EgoState, Pose2D, SimRng, TerminalEvent, Vec2, Weather};
use rand::SeedableRng;

fn residuals() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| {
        let col = || prop::collection::vec(-2.0f64..2.0, n);
        (col(), col(), col(), col())
    })
}

fn col(v: &[f64]) -> Tensor {
    Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// uloss value and its gradient with respect to (s_lat, s_lon).
fn uloss_at(r: &(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>), s: (f64, f64)) -> (f64, f64, f64) {
    let mut store = ParamStore::new();
    store.insert("s_lat", Tensor::new(vec![1], vec![s.0]).unwrap());
    store.insert("s_lon", Tensor::new(vec![1], vec![s.1]).unwrap());
    let mut tape = Tape::new();
    let x = [&r.0, &r.1, &r.2, &r.3].map(|v| tape.input(col(v)).unwrap());
    let sl = tape.param(&store, "s_lat").unwrap();
    let so = tape.param(&store, "s_lon").unwrap();
    let l = uloss(&mut tape, x[0], x[1], x[2], x[3], sl, so).unwrap();
    let v = tape.value(l).item();
    let g = tape.backward(l, &store).unwrap();
    (v, g.get("s_lat").unwrap().item(), g.get("s_lon").unwrap().item())
}

fn hloss_at(r: &(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>), w: (f64, f64)) -> f64 {
    let mut tape = Tape::new();
    let x = [&r.0, &r.1, &r.2, &r.3].map(|v| tape.input(col(v)).unwrap());
    let l = hloss(&mut tape, x[0], x[1], x[2], x[3], w.0, w.1).unwrap();
    tape.value(l).item()
}

fn log_with(terminal: TerminalEvent) -> EpisodeResult {
    EpisodeResult {
        scene_id: 0,
        route_id: 0,
        weather: Weather::ClearNoon,
        seed: 0,
        terminal,
        steps: 1,
        actions: vec![Action::ZERO],
        poses: vec![Pose2D::new(Vec2::new(0.0, 0.0), 0.0)],
        waypoints: vec![(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0))],
        disruption_events: 0,
        final_pose: Pose2D::new(Vec2::new(0.0, 0.0), 0.0),
        goal: Vec2::new(0.0, 0.0),
        goal_lane_direction: 0.0,
        fault: None,
    }
}

proptest! {
    #[test]
    fn uloss_at_zero_log_variance_is_half_weighted_hloss(r in residuals()) {
        let (u, _, _) = uloss_at(&r, (0.0, 0.0));
        prop_assert!((u - hloss_at(&r, (0.5, 0.5))).abs() <= 1e-12);
    }

    #[test]
    fn uloss_never_drops_below_its_closed_form_minimum(
        r in residuals(),
        s_lat in -6.0f64..6.0,
        s_lon in -6.0f64..6.0,
    ) {
        let (m_lat, m_lon) = (mean_sq(&r.0, &r.2), mean_sq(&r.1, &r.3));
        prop_assume!(m_lat > 1e-6 && m_lon > 1e-6);
        // Each task term is minimised at exp(s) = m with value ½(1 + ln m).
        let floor = 0.5 * (2.0 + m_lat.ln() + m_lon.ln());
        let (u, _, _) = uloss_at(&r, (s_lat, s_lon));
        prop_assert!(u >= floor - 1e-12, "{u} < {floor}");
    }

    #[test]
    fn log_variance_gradient_points_toward_mean_square(
        r in residuals(),
        s_lat in -6.0f64..6.0,
        s_lon in -6.0f64..6.0,
    ) {
        let (m_lat, m_lon) = (mean_sq(&r.0, &r.2), mean_sq(&r.1, &r.3));
        let (_, g_lat, g_lon) = uloss_at(&r, (s_lat, s_lon));
        prop_assert!((g_lat - 0.5 * (1.0 - m_lat * (-s_lat).exp())).abs() <= 1e-9 * (1.0 + m_lat * (-s_lat).exp()));
        prop_assert!((g_lon - 0.5 * (1.0 - m_lon * (-s_lon).exp())).abs() <= 1e-9 * (1.0 + m_lon * (-s_lon).exp()));
        if s_lat.exp() > m_lat * (1.0 + 1e-9) {
            prop_assert!(g_lat > 0.0);
        }
    }

    #[test]
    fn hloss_is_monotone_in_each_task_weight(
        r in residuals(),
        w in 0.0f64..2.0,
        dw in 0.0f64..2.0,
        other in 0.0f64..2.0,
    ) {
        prop_assert!(hloss_at(&r, (w + dw, other)) >= hloss_at(&r, (w, other)) - 1e-15);
        prop_assert!(hloss_at(&r, (other, w + dw)) >= hloss_at(&r, (other, w)) - 1e-15);
    }

    #[test]
    fn rates_partition_the_episodes(events in prop::collection::vec(0usize..5, 1..60)) {
        let logs: Vec<_> = events.iter().map(|&i| log_with(TerminalEvent::ALL[i])).collect();
        let r = rates(&logs).unwrap();
        for x in [r.sr, r.pr, r.tr, r.lr, r.cr] {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&x));
        }
        prop_assert_eq!(r.sr + r.pr + r.tr + r.lr + r.cr, 1.0);
        let collisions = events.iter().filter(|&&i| TerminalEvent::ALL[i] == TerminalEvent::Collision).count();
        prop_assert!((r.cr - collisions as f64 / events.len() as f64).abs() <= 1e-12);
    }

    #[test]
    fn heading_error_is_a_symmetric_angle(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let e = heading_error(a, b);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&e));
        prop_assert!((e - heading_error(b, a)).abs() <= 1e-9);
        prop_assert!((heading_error(a + std::f64::consts::TAU, b) - e).abs() <= 1e-9);
    }

    #[test]
    fn ego_speed_stays_in_range(
        speed in 0.0f64..SPEED_MAX,
        steer in -3.0f64..3.0,
        accel in -3.0f64..3.0,
        heading in -4.0f64..4.0,
    ) {
        let ego = EgoState::new(Pose2D::new(Vec2::new(1.0, -2.0), heading), speed);
        let next = ego_step(&ego, Action::new(steer, accel).clipped(), 0.1).unwrap();
        prop_assert!((0.0..=SPEED_MAX).contains(&next.speed));
        let moved = next.pose.position.distance(ego.pose.position);
        prop_assert!((moved - speed * 0.1).abs() <= 1e-9);
    }

    #[test]
    fn clipping_is_idempotent_and_bounded(steer in -1e6f64..1e6, accel in -1e6f64..1e6) {
        let a = Action::new(steer, accel).clipped();
        prop_assert!(a.steer.abs() <= 1.0 && a.accel.abs() <= 1.0);
        prop_assert_eq!(a.clipped(), a);
    }

    #[test]
    fn noise_only_touches_steering(seed in any::<u64>(), steer in -1.0f64..1.0, accel in -1.0f64..1.0) {
        let mut rng = SimRng::seed_from_u64(seed);
        let intended = Action::new(steer, accel);
        let (applied, perturbed) = inject_noise(intended, &mut rng, 1.0);
        prop_assert!(perturbed);
        prop_assert_eq!(applied.accel, accel);
        prop_assert!(applied.steer.abs() <= 1.0);
        prop_assert!((applied.steer - steer).abs() <= 0.2 + 1e-12);
        let (same, flag) = inject_noise(intended, &mut rng, 0.0);
        prop_assert!(!flag);
        prop_assert_eq!(same, intended);
    }

    #[test]
    fn command_indices_round_trip(i in -5i64..10) {
        match LatCmd::from_index(i) {
            Ok(c) => prop_assert_eq!(c.index() as i64, i),
            Err(_) => prop_assert!(!(0..4).contains(&i)),
        }
        match LonCmd::from_index(i) {
            Ok(c) => prop_assert_eq!(c.index() as i64, i),
            Err(_) => prop_assert!(!(0..3).contains(&i)),
        }
    }

    #[test]
    fn control_frames_are_clipped_on_parse(steer in -50.0f64..50.0, accel in -50.0f64..50.0) {
        let text = ClientMsg::Control { steer, accel }.to_json();
        match ClientMsg::parse(&text).unwrap() {
            ClientMsg::Control { steer: s, accel: a } => {
                prop_assert_eq!(s, steer.clamp(-1.0, 1.0));
                prop_assert_eq!(a, accel.clamp(-1.0, 1.0));
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }
}
