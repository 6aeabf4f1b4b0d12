//! Control-quality metrics and terminal-event rates over episode results.
//! Every metric is a mean over episodes.

use log::warn;
use serde::{Deserialize, Serialize};

use super::runner::EpisodeResult;
use crate::error::{Error, Result};
use crate::sim::world::heading_error;
use crate::sim::terminal::TerminalEvent;

/// Magnitude above which an action component counts as harsh.
pub const HARSH_ACTION: f64 = 0.9;

fn mean_over<F: Fn(&EpisodeResult) -> f64>(results: &[EpisodeResult], f: F) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::NoEpisodes);
    }
    Ok(results.iter().map(f).sum::<f64>() / results.len() as f64)
}

pub fn harsh_actions(r: &EpisodeResult) -> usize {
    r.actions
        .iter()
        .filter(|a| a.steer.abs() > HARSH_ACTION || a.accel.abs() > HARSH_ACTION)
        .count()
}

pub fn ego_jerk(results: &[EpisodeResult]) -> Result<f64> {
    mean_over(results, |r| harsh_actions(r) as f64)
}

pub fn other_jerk(results: &[EpisodeResult]) -> Result<f64> {
    mean_over(results, |r| r.disruption_events as f64)
}

/// Mean absolute distance from the line through the nearest and next
/// waypoint, for one episode. Degenerate pairs are skipped.
pub fn episode_waypoint_deviation(r: &EpisodeResult) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pose, &(c, next)) in r.poses.iter().zip(&r.waypoints) {
        let seg = next - c;
        let len = seg.norm();
        if len <= 1e-12 {
            warn!("degenerate waypoint pair at {c:?}; step skipped");
            continue;
        }
        sum += seg.cross(pose.position - c).abs() / len;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn dev_waypoint(results: &[EpisodeResult]) -> Result<f64> {
    mean_over(results, episode_waypoint_deviation)
}

pub fn dev_destination(results: &[EpisodeResult]) -> Result<f64> {
    mean_over(results, |r| r.final_pose.position.distance(r.goal))
}

/// Final heading deviation from the goal lane direction, in degrees.
pub fn heading_dev(results: &[EpisodeResult]) -> Result<f64> {
    mean_over(results, |r| heading_error(r.final_pose.heading, r.goal_lane_direction).to_degrees())
}

pub fn total_steps(results: &[EpisodeResult]) -> Result<f64> {
    mean_over(results, |r| r.steps as f64)
}

pub fn rate(results: &[EpisodeResult], event: TerminalEvent) -> Result<f64> {
    mean_over(results, |r| if r.terminal == event { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub sr: f64,
    pub pr: f64,
    pub tr: f64,
    pub lr: f64,
    pub cr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub ego_jerk: f64,
    pub other_jerk: f64,
    pub dev_waypoint: f64,
    pub dev_destination: f64,
    pub heading_dev: f64,
    pub total_steps: f64,
}

/// Event rates. Computed from integer counts so they sum to one.
pub fn rates(results: &[EpisodeResult]) -> Result<Rates> {
    if results.is_empty() {
        return Err(Error::NoEpisodes);
    }
    let n = results.len();
    let count = |e| results.iter().filter(|r| r.terminal == e).count();
    let (s, p, t, l) = (
        count(TerminalEvent::Success),
        count(TerminalEvent::PoorEndPose),
        count(TerminalEvent::Timeout),
        count(TerminalEvent::LaneInvasion),
    );
    let f = |k: usize| k as f64 / n as f64;
    let (sr, pr, tr, lr) = (f(s), f(p), f(t), f(l));
    // Collisions take the remainder so that sr + pr + tr + lr + cr is
    // exactly 1 when summed left to right.
    let cr = 1.0 - (sr + pr + tr + lr);
    Ok(Rates { sr, pr, tr, lr, cr })
}

pub fn quality(results: &[EpisodeResult]) -> Result<QualityMetrics> {
    Ok(QualityMetrics {
        ego_jerk: ego_jerk(results)?,
        other_jerk: other_jerk(results)?,
        dev_waypoint: dev_waypoint(results)?,
        dev_destination: dev_destination(results)?,
        heading_dev: heading_dev(results)?,
        total_steps: total_steps(results)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::{Pose2D, Vec2};
    use crate::sim::scene::Weather;
    use crate::sim::world::Action;

    fn episode(actions: &[(f64, f64)]) -> EpisodeResult {
        let n = actions.len();
        EpisodeResult {
            scene_id: 0,
            route_id: 0,
            weather: Weather::ClearNoon,
            seed: 0,
            terminal: TerminalEvent::Success,
            steps: n as u32,
            actions: actions.iter().map(|&(s, a)| Action::new(s, a)).collect(),
            poses: vec![Pose2D::new(Vec2::ZERO, 0.0); n],
            waypoints: vec![(Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0)); n],
            disruption_events: 0,
            final_pose: Pose2D::new(Vec2::ZERO, 0.0),
            goal: Vec2::ZERO,
            goal_lane_direction: 0.0,
            fault: None,
        }
    }

    #[test]
    fn ego_jerk_counts_strictly_above_threshold() {
        let r = episode(&[(0.95, 0.0), (0.5, 0.91), (0.2, 0.3)]);
        assert_eq!(ego_jerk(&[r]).unwrap(), 2.0);
        let r = episode(&[(0.9, -0.9), (-0.9, 0.0)]);
        assert_eq!(ego_jerk(&[r]).unwrap(), 0.0);
    }

    #[test]
    fn other_jerk_averages_events() {
        let mut a = episode(&[(0.0, 0.0)]);
        a.disruption_events = 4;
        let b = episode(&[(0.0, 0.0)]);
        assert_eq!(other_jerk(&[a.clone(), b]).unwrap(), 2.0);
        a.disruption_events = 3;
        assert_eq!(other_jerk(&[a]).unwrap(), 3.0);
    }

    #[test]
    fn waypoint_deviation_is_unsigned() {
        let mut r = episode(&[(0.0, 0.0)]);
        r.waypoints = vec![(Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0))];
        r.poses = vec![Pose2D::new(Vec2::new(1.0, 0.5), 0.0)];
        assert!((dev_waypoint(&[r.clone()]).unwrap() - 0.5).abs() < 1e-12);
        r.poses = vec![Pose2D::new(Vec2::new(1.0, -0.5), 0.0)];
        assert!((dev_waypoint(&[r.clone()]).unwrap() - 0.5).abs() < 1e-12);
        r.poses = vec![Pose2D::new(Vec2::new(1.7, 0.0), 0.0)];
        assert_eq!(dev_waypoint(&[r.clone()]).unwrap(), 0.0);
        // A degenerate pair is skipped rather than dividing by zero.
        r.waypoints = vec![(Vec2::ZERO, Vec2::ZERO)];
        assert_eq!(episode_waypoint_deviation(&r), 0.0);
    }

    #[test]
    fn destination_and_heading() {
        let mut a = episode(&[(0.0, 0.0)]);
        a.final_pose = Pose2D::new(Vec2::new(3.0, 4.0), 0.0);
        assert!((dev_destination(&[a.clone()]).unwrap() - 5.0).abs() < 1e-12);
        let mut b = a.clone();
        b.final_pose.position = Vec2::new(1.0, 0.0);
        assert!((dev_destination(&[a, b]).unwrap() - 3.0).abs() < 1e-12);

        let mut h = episode(&[(0.0, 0.0)]);
        h.final_pose = Pose2D::new(Vec2::ZERO, 100f64.to_radians());
        h.goal_lane_direction = 90f64.to_radians();
        assert!((heading_dev(&[h.clone()]).unwrap() - 10.0).abs() < 1e-9);
        h.final_pose = Pose2D::new(Vec2::ZERO, 359f64.to_radians());
        h.goal_lane_direction = 1f64.to_radians();
        assert!((heading_dev(&[h]).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn steps_and_rates() {
        let mut t = episode(&[]);
        t.steps = 1000;
        t.terminal = TerminalEvent::Timeout;
        assert_eq!(total_steps(&[t.clone()]).unwrap(), 1000.0);
        let mut a = episode(&[]);
        a.steps = 300;
        let mut b = episode(&[]);
        b.steps = 340;
        assert_eq!(total_steps(&[a.clone(), b]).unwrap(), 320.0);

        let mut c = a.clone();
        c.terminal = TerminalEvent::Collision;
        let r = rates(&[a, t, c]).unwrap();
        assert_eq!(r.sr + r.pr + r.tr + r.lr + r.cr, 1.0);
        assert!((r.cr - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(rates(&[]), Err(Error::NoEpisodes)));
        assert!(matches!(ego_jerk(&[]), Err(Error::NoEpisodes)));
    }
}
