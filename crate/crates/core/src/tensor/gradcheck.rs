use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// (input index, element index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates_checked: usize,
}

/// Compares tape gradients of the scalar function `f` against central
/// differences with step `h`, over every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let all: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    check_coordinates(&f, inputs, h, &all)
}

/// Like [`grad_check`] but only on up to `per_input` evenly spaced
/// coordinates of each input. Meant for parameter sets too large to sweep.
pub fn grad_check_sampled<F>(f: F, inputs: &[Tensor<f64>], h: f64, per_input: usize) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let n = t.len();
            if n <= per_input {
                (0..n).collect()
            } else {
                let mut v: Vec<usize> = (0..per_input).map(|i| i * (n - 1) / (per_input - 1).max(1)).collect();
                v.dedup();
                v
            }
        })
        .collect();
    check_coordinates(&f, inputs, h, &picks)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let value = tape.with_value(out, |t| {
        if t.len() == 1 {
            Ok(t.data()[0])
        } else {
            Err(Error::Usage(format!(
                "gradient check needs a scalar function, got {:?}",
                t.shape()
            )))
        }
    })?;
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite function value during gradient check".into()));
    }
    Ok(value)
}

fn check_coordinates<F>(f: &F, inputs: &[Tensor<f64>], h: f64, coords: &[Vec<usize>]) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
        .collect();
    if analytic.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite analytic gradient".into()));
    }

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    for (i, picks) in coords.iter().enumerate() {
        for &j in picks {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = evaluate(f, &work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = evaluate(f, &work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_error() {
        let x = Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let r = grad_check(|tape, v| tape.sum(v[0]), &[x], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coordinates_checked, 3);
    }

    #[test]
    fn tanh_matches() {
        let x = Tensor::new(&[4], vec![-1.9, -0.2, 0.7, 1.5]).unwrap();
        let r = grad_check(|tape, v| tape.sum(tape.tanh(v[0])?), &[x], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn non_scalar_rejected() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        assert!(grad_check(|tape, v| tape.tanh(v[0]), &[x], 1e-5).is_err());
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        let r = grad_check(|tape, v| tape.sum(tape.scale(v[0], f64::INFINITY)?), &[x], 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
