//! Central-difference gradient checker.

use rand::seq::index::sample;
use rand::SeedableRng;

use super::params::{Gradients, ParamStore};
use crate::error::Result;
use crate::sim::SimRng;

/// Which coordinates to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// Every coordinate of tensors with at most `per_tensor` elements and a
    /// seeded random subset of that size from larger ones.
    Sampled { per_tensor: usize, seed: u64 },
}

/// Step refinements tried after the initial step, each a tenth of the last.
pub const REFINEMENTS: usize = 5;
/// Relative agreement at which two successive difference estimates are
/// taken as converged; a tenth of the usual pass tolerance.
const CONVERGED: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index where the error peaked.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose estimate only converged below the initial step,
    /// typically because a ReLU kink sat inside the first stencil.
    pub refined: usize,
    /// Coordinates whose estimates never converged; scored with the
    /// smallest step.
    pub unconverged: usize,
}

/// Central difference of coordinate `k` of `name` with step `h`.
fn central<F>(probe: &mut ParamStore, name: &str, k: usize, h: f64, f: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    let orig = probe.get(name)?.data()[k];
    probe.get_mut(name)?.data_mut()[k] = orig + h;
    let (up, _) = f(probe)?;
    probe.get_mut(name)?.data_mut()[k] = orig - h;
    let (down, _) = f(probe)?;
    probe.get_mut(name)?.data_mut()[k] = orig;
    Ok((up - down) / (2.0 * h))
}

/// Compares the analytic gradient returned by `f` with central differences
/// of its value. The error per coordinate is
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// Each coordinate is differenced at `h` and `h/10`; if the two disagree the
/// step keeps shrinking (up to [`REFINEMENTS`] times) until successive
/// estimates agree, and the finer one is scored. A stencil that straddles a
/// kink of a piecewise-linear op gives a meaningless estimate, while a wrong
/// analytic gradient is wrong at every step size.
pub fn grad_check_with<F>(params: &ParamStore, h: f64, coverage: Coverage, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = f(params)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        refined: 0,
        unconverged: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for (t, name) in names.iter().enumerate() {
        let n = params.get(name)?.len();
        let coords: Vec<usize> = match coverage {
            Coverage::Sampled { per_tensor, seed } if n > per_tensor => {
                let mut rng = SimRng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let mut idx = sample(&mut rng, n, per_tensor).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        let grad = analytic.get(name).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for k in coords {
            let mut step = h;
            let mut coarse = central(&mut probe, name, k, step, &mut f)?;
            let mut numeric = coarse;
            let mut converged = false;
            for level in 0..REFINEMENTS {
                step /= 10.0;
                numeric = central(&mut probe, name, k, step, &mut f)?;
                if (numeric - coarse).abs() <= CONVERGED * numeric.abs().max(1.0) {
                    converged = true;
                    report.refined += usize::from(level > 0);
                    break;
                }
                coarse = numeric;
            }
            report.unconverged += usize::from(!converged);
            let err = (grad[k] - numeric).abs() / grad[k].abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}

/// Maximum relative error over every coordinate.
pub fn grad_check<F>(params: &ParamStore, h: f64, f: F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    Ok(grad_check_with(params, h, Coverage::All, f)?.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Tape, Tensor};

    fn bowl(p: &ParamStore) -> Result<(f64, Gradients)> {
        let mut t = Tape::new();
        let x = t.param(p, "x")?;
        let c = t.input(Tensor::new(vec![3], vec![1.0, -2.0, 0.5])?)?;
        let d = t.sub(x, c)?;
        let sq = t.square(d)?;
        let l = t.sum(sq)?;
        let v = t.value(l).item();
        Ok((v, t.backward(l, p)?))
    }

    #[test]
    fn quadratic_bowl_is_exact() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![3], vec![0.3, 0.1, -4.0]).unwrap());
        let err = grad_check(&p, 1e-4, bowl).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let err = grad_check(&p, 1e-4, |p| Ok((7.0, Gradients::zeros_like(p)))).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![3], vec![0.3, 0.1, -4.0]).unwrap());
        let r = grad_check_with(&p, 1e-4, Coverage::All, |p| {
            let (v, mut g) = bowl(p)?;
            g.accumulate("x", &[0.0, 0.5, 0.0])?;
            Ok((v, g))
        })
        .unwrap();
        assert!(r.max_rel_error > 0.1);
        assert_eq!(r.worst, Some(("x".to_string(), 1)));
        assert_eq!(r.checked, 3);
        assert_eq!(r.unconverged, 0);
    }

    #[test]
    fn a_kink_inside_the_first_stencil_is_refined_away() {
        // |x - c| with x 3e-5 from the kink: the 1e-4 stencil straddles it.
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![1], vec![1.0 + 3e-5]).unwrap());
        let r = grad_check_with(&p, 1e-4, Coverage::All, |p| {
            let mut t = Tape::new();
            let x = t.param(p, "x")?;
            let c = t.input(Tensor::new(vec![1], vec![1.0])?)?;
            let d = t.sub(x, c)?;
            let a = t.abs(d)?;
            let l = t.sum(a)?;
            let v = t.value(l).item();
            Ok((v, t.backward(l, p)?))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!((r.refined, r.unconverged), (1, 0));
    }
}
