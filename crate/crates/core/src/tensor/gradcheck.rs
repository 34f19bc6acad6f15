use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Errors below this magnitude are measured against it instead of the
/// gradient itself, so near-zero gradients do not inflate the ratio.
const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)`.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// `(input, coordinate)` of the worst relative error.
    pub worst: (usize, usize),
    pub coordinates: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares tape gradients of a scalar function against central differences.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, tolerance)
}

/// Multi-input form of [`grad_check`]; every input is perturbed in turn.
pub fn grad_check_inputs<F>(
    f: F,
    inputs: &[Tensor],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    // also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let eval = |xs: &[Tensor], track: bool| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs
            .iter()
            .map(|t| if track { tape.param(t) } else { tape.constant(t) })
            .collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::Shape {
                op: "grad_check",
                detail: format!("function output must be scalar, got {:?}", tape.shape(out)),
            });
        }
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = eval(inputs, true)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
        tolerance,
        passed: true,
    };
    let mut probe = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ci in 0..t.numel() {
            let orig = t.data()[ci];
            probe[ti].data_mut()[ci] = orig + step;
            let (tp, _, op) = eval(&probe, false)?;
            probe[ti].data_mut()[ci] = orig - step;
            let (tm, _, om) = eval(&probe, false)?;
            probe[ti].data_mut()[ci] = orig;
            let numeric = (tp.value(op).item() - tm.value(om).item()) / (2.0 * step);
            let a = analytic[ti][ci];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.coordinates += 1;
            report.max_absolute_error = report.max_absolute_error.max(abs);
            if rel > report.max_relative_error || rel.is_nan() {
                report.max_relative_error = rel;
                report.worst = (ti, ci);
            }
        }
    }
    report.passed = report.max_relative_error <= tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::from_fn(&[5], |i| i as f64 * 0.3 - 0.6);
        let r = grad_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn linear_is_machine_precision() {
        let x = Tensor::from_fn(&[4], |i| i as f64);
        let r = grad_check(
            |t, v| {
                let s = t.scale(v, 3.0);
                Ok(t.sum(s))
            },
            &x,
            1e-4,
            1e-9,
        )
        .unwrap();
        assert!(r.max_absolute_error < 1e-10, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // relu at an exact kink: tape says 0, central difference says 0.5
        let x = Tensor::from_fn(&[1], |_| 0.0);
        let r = grad_check(
            |t, v| {
                let r = t.relu(v);
                Ok(t.sum(r))
            },
            &x,
            1e-4,
            1e-4,
        );
        let r = r.unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_scalar_output_is_an_error() {
        let x = Tensor::zeros(&[3]);
        let r = grad_check(|t, v| Ok(t.relu(v)), &x, 1e-4, 1e-4);
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
