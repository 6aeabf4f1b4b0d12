//! Imitation losses over a batch of predictions.

use super::config::LossMode;
use super::model::{Forward, Policy, S_LAT, S_LON};
use crate::error::Result;
use crate::nn::{Tape, Tensor, Var};

/// Weight of the speed-prediction term.
pub const SPEED_LOSS_WEIGHT: f64 = 0.05;

/// Per-sample regression targets, each `[batch, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub steer: Tensor,
    pub accel: Tensor,
    pub speed: Tensor,
}

fn mean_sq(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let r = tape.sub(pred, target)?;
    let sq = tape.square(r)?;
    tape.mean(sq)
}

/// `½e^{-s_lat}·mean r_lat² + ½e^{-s_lon}·mean r_lon² + ½(s_lat + s_lon)`.
pub fn uloss(tape: &mut Tape, steer: Var, accel: Var, t_steer: Var, t_accel: Var, s_lat: Var, s_lon: Var) -> Result<Var> {
    let mut terms = Vec::with_capacity(2);
    for (pred, target, s) in [(steer, t_steer, s_lat), (accel, t_accel, s_lon)] {
        let m = mean_sq(tape, pred, target)?;
        let neg = tape.scale(s, -1.0)?;
        let prec = tape.exp(neg)?;
        let weighted = tape.mul_scalar(m, prec)?;
        terms.push(tape.scale(weighted, 0.5)?);
    }
    let data = tape.add(terms[0], terms[1])?;
    let s_sum = tape.add(s_lat, s_lon)?;
    let s_sum = tape.sum(s_sum)?;
    let reg = tape.scale(s_sum, 0.5)?;
    tape.add(data, reg)
}

/// `w_lat·mean r_lat² + w_lon·mean r_lon²`.
pub fn hloss(tape: &mut Tape, steer: Var, accel: Var, t_steer: Var, t_accel: Var, w_lat: f64, w_lon: f64) -> Result<Var> {
    let lat = mean_sq(tape, steer, t_steer)?;
    let lat = tape.scale(lat, w_lat)?;
    let lon = mean_sq(tape, accel, t_accel)?;
    let lon = tape.scale(lon, w_lon)?;
    tape.add(lat, lon)
}

/// `λ_v·mean |v − v̂|`.
pub fn speed_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let r = tape.sub(pred, target)?;
    let a = tape.abs(r)?;
    let m = tape.mean(a)?;
    tape.scale(m, SPEED_LOSS_WEIGHT)
}

/// The configured training loss for one forward pass.
pub fn policy_loss(tape: &mut Tape, policy: &Policy, fwd: &Forward, targets: &Targets) -> Result<Var> {
    let t_steer = tape.input(targets.steer.clone())?;
    let t_accel = tape.input(targets.accel.clone())?;
    let base = match policy.config.loss_mode {
        LossMode::Uncertainty => {
            let s_lat = tape.param(&policy.params, S_LAT)?;
            let s_lon = tape.param(&policy.params, S_LON)?;
            uloss(tape, fwd.steer, fwd.accel, t_steer, t_accel, s_lat, s_lon)?
        }
        LossMode::Hard { w_lat, w_lon } => hloss(tape, fwd.steer, fwd.accel, t_steer, t_accel, w_lat, w_lon)?,
    };
    match fwd.speed {
        Some(v) => {
            let t_speed = tape.input(targets.speed.clone())?;
            let sp = speed_loss(tape, v, t_speed)?;
            tape.add(base, sp)
        }
        None => Ok(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    struct Fixture {
        tape: Tape,
        vars: [Var; 4],
    }

    fn fixture(pred: (&[f64], &[f64]), target: (&[f64], &[f64])) -> Fixture {
        let mut tape = Tape::new();
        let col = |v: &[f64]| Tensor::matrix(v.len(), 1, v.to_vec()).unwrap();
        let vars = [
            tape.input(col(pred.0)).unwrap(),
            tape.input(col(pred.1)).unwrap(),
            tape.input(col(target.0)).unwrap(),
            tape.input(col(target.1)).unwrap(),
        ];
        Fixture { tape, vars }
    }

    fn s_store(s_lat: f64, s_lon: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert(S_LAT, Tensor::new(vec![1], vec![s_lat]).unwrap());
        p.insert(S_LON, Tensor::new(vec![1], vec![s_lon]).unwrap());
        p
    }

    fn eval_uloss(pred: (&[f64], &[f64]), target: (&[f64], &[f64]), store: &ParamStore) -> (f64, crate::nn::Gradients) {
        let Fixture { mut tape, vars } = fixture(pred, target);
        let s_lat = tape.param(store, S_LAT).unwrap();
        let s_lon = tape.param(store, S_LON).unwrap();
        let l = uloss(&mut tape, vars[0], vars[1], vars[2], vars[3], s_lat, s_lon).unwrap();
        let v = tape.value(l).item();
        (v, tape.backward(l, store).unwrap())
    }

    fn eval_hloss(pred: (&[f64], &[f64]), target: (&[f64], &[f64]), w: (f64, f64)) -> f64 {
        let Fixture { mut tape, vars } = fixture(pred, target);
        let l = hloss(&mut tape, vars[0], vars[1], vars[2], vars[3], w.0, w.1).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn hand_evaluated_examples() {
        let (l, _) = eval_uloss((&[0.2], &[0.1]), (&[0.0], &[0.0]), &s_store(0.0, 0.0));
        assert_abs_diff_eq!(l, 0.025, epsilon = 1e-15);
        let (l, _) = eval_uloss((&[0.3], &[-0.4]), (&[0.3], &[-0.4]), &s_store(0.0, 0.0));
        assert_eq!(l, 0.0);
        assert_abs_diff_eq!(eval_hloss((&[0.2], &[0.1]), (&[0.0], &[0.0]), (0.5, 0.5)), 0.025, epsilon = 1e-15);
    }

    #[test]
    fn zero_weight_blocks_longitudinal_gradient() {
        let mut store = ParamStore::new();
        store.insert("steer", Tensor::matrix(2, 1, vec![0.2, 0.1]).unwrap());
        store.insert("accel", Tensor::matrix(2, 1, vec![0.5, -0.5]).unwrap());
        let mut tape = Tape::new();
        let steer = tape.param(&store, "steer").unwrap();
        let accel = tape.param(&store, "accel").unwrap();
        let zero = tape.input(Tensor::zeros(&[2, 1])).unwrap();
        let l = hloss(&mut tape, steer, accel, zero, zero, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(tape.value(l).item(), 0.025, epsilon = 1e-15);
        let g = tape.backward(l, &store).unwrap();
        assert_eq!(g.get("accel").unwrap().data(), &[0.0, 0.0]);
        assert_abs_diff_eq!(g.get("steer").unwrap().data()[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn hard_weights_from_s_match_uloss_minus_regularizer() {
        let mut rng = crate::sim::SimRng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..8);
            let mut v = || (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (ps, pa, ts, ta) = (v(), v(), v(), v());
            let (s1, s2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (u, _) = eval_uloss((&ps, &pa), (&ts, &ta), &s_store(s1, s2));
            let h = eval_hloss((&ps, &pa), (&ts, &ta), (0.5 * (-s1).exp(), 0.5 * (-s2).exp()));
            assert_abs_diff_eq!(u - 0.5 * (s1 + s2), h, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_in_s_vanishes_at_mean_squared_residual() {
        let pred = (&[0.3, -0.1, 0.2][..], &[0.05, 0.0, -0.02][..]);
        let target = (&[0.0, 0.0, 0.0][..], &[0.0, 0.0, 0.0][..]);
        let m_lat: f64 = (0.09 + 0.01 + 0.04) / 3.0;
        let m_lon: f64 = (0.0025 + 0.0 + 0.0004) / 3.0;
        let (_, g) = eval_uloss(pred, target, &s_store(m_lat.ln(), m_lon.ln()));
        assert_abs_diff_eq!(g.get(S_LAT).unwrap().item(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.get(S_LON).unwrap().item(), 0.0, epsilon = 1e-12);
        // Larger s means a smaller weight on the residual.
        let (_, g) = eval_uloss(pred, target, &s_store(m_lat.ln() + 1.0, 0.0));
        assert!(g.get(S_LAT).unwrap().item() > 0.0);
    }

    #[test]
    fn regularizer_alone_at_zero_residual() {
        let (l, _) = eval_uloss((&[0.4], &[0.2]), (&[0.4], &[0.2]), &s_store(-3.0, 1.0));
        assert_abs_diff_eq!(l, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn speed_term_is_weighted_absolute_error() {
        let mut tape = Tape::new();
        let p = tape.input(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap()).unwrap();
        let t = tape.input(Tensor::matrix(2, 1, vec![2.0, 2.0]).unwrap()).unwrap();
        let l = speed_loss(&mut tape, p, t).unwrap();
        assert_abs_diff_eq!(tape.value(l).item(), 0.05, epsilon = 1e-15);
    }
}
