//! Central-difference gradient verification harness (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::array::Array;
use super::tape::{DiffArray, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Finite-difference step.
    pub step: f64,
    /// Check at most this many coordinates per input (sampled without
    /// replacement); `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Worst coordinate found by [`grad_check_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Max over checked coordinates of
/// `|analytic - central_difference| / max(1, |central_difference|)`.
pub fn grad_check<F>(f: F, inputs: &[Array<f64>], cfg: &GradCheck) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[DiffArray<'t, f64>]) -> Result<DiffArray<'t, f64>>,
{
    grad_check_report(f, inputs, cfg).map(|r| r.max_rel_err)
}

pub fn grad_check_report<F>(f: F, inputs: &[Array<f64>], cfg: &GradCheck) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[DiffArray<'t, f64>]) -> Result<DiffArray<'t, f64>>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let analytic: Vec<Array<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|a| tape.param(a.clone())).collect();
        let out = f(&tape, &vars)?;
        if out.value().numel() != 1 {
            return Err(Error::NonScalar(out.shape()));
        }
        tape.backward(out)?;
        vars.iter().map(|v| v.grad()).collect::<Result<_>>()?
    };

    let eval = |perturbed: &[Array<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<_> = perturbed.iter().map(|a| tape.constant(a.clone())).collect();
        f(&tape, &vars)?.item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        input: 0,
        coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Array<f64>> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let x = input.data()[c];
            work[idx].data_mut()[c] = x + cfg.step;
            let plus = eval(&work)?;
            work[idx].data_mut()[c] = x - cfg.step;
            let minus = eval(&work)?;
            work[idx].data_mut()[c] = x;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[idx].data()[c];
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_err || err.is_nan() {
                report = GradCheckReport {
                    max_rel_err: err,
                    input: idx,
                    coord: c,
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Array::from_f64([5], &[0.3, -1.2, 2.5, 0.0, 4.0]).unwrap();
        let err = grad_check(|_, v| Ok(v[0].square().sum()), &[x], &GradCheck::default()).unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn square_derivative_at_three() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Array::scalar(3.0));
        tape.backward(x.square()).unwrap();
        let analytic = x.grad().unwrap().item().unwrap();
        assert_eq!(analytic, 6.0);
        let h = 1e-5;
        let fd = ((3.0f64 + h).powi(2) - (3.0f64 - h).powi(2)) / (2.0 * h);
        assert!(((analytic - fd) / fd).abs() <= 1e-4);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let x = Array::from_f64([2], &[1.0, 2.0]).unwrap();
        let r = grad_check(|_, v| Ok(v[0].square()), &[x], &GradCheck::default());
        assert!(matches!(r, Err(Error::NonScalar(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at the kink uses the zero subgradient while the central
        // difference sees slope 1/2
        let x = Array::from_f64([1], &[0.0]).unwrap();
        let err = grad_check(|_, v| Ok(v[0].relu().sum()), &[x], &GradCheck::default()).unwrap();
        assert!((err - 0.5).abs() < 1e-9);
    }
}
