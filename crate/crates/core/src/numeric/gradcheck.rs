//! Central finite differences, used as the reference for analytic gradients.

use super::{NumericError, ParamSet};

/// Denominator floor for relative errors: gradient entries smaller than this
/// are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every scalar of `params`, in
/// enumeration order.
pub fn finite_difference_gradient<F>(mut loss_fn: F, params: &ParamSet, h: f64) -> Result<ParamSet, NumericError>
where
    F: FnMut(&ParamSet) -> f64,
{
    if !(h > 0.0) {
        return Err(NumericError::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    let n_entries = params.len();
    for e in 0..n_entries {
        let len = params.entries()[e].tensor.len();
        for i in 0..len {
            let orig = params.entries()[e].tensor.data()[i];
            set(&mut probe, e, i, orig + h);
            let up = loss_fn(&probe);
            set(&mut probe, e, i, orig - h);
            let down = loss_fn(&probe);
            set(&mut probe, e, i, orig);
            if !up.is_finite() || !down.is_finite() {
                return Err(NumericError::OracleFailure {
                    tensor: params.entries()[e].name.clone(),
                    index: i,
                });
            }
            set(&mut grads, e, i, (up - down) / (2.0 * h));
        }
    }
    Ok(grads)
}

fn set(p: &mut ParamSet, entry: usize, index: usize, v: f64) {
    p.iter_mut().nth(entry).expect("entry").tensor.data_mut()[index] = v;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub scalars_checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)` maximized over all scalars.
pub fn compare_gradients(analytic: &ParamSet, numeric: &ParamSet, floor: f64) -> Result<GradCheckReport, NumericError> {
    if !analytic.same_layout(numeric) {
        return Err(NumericError::InvalidArgument("gradient layouts differ".into()));
    }
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        scalars_checked: 0,
    };
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        for (i, (&x, &y)) in a.tensor.data().iter().zip(n.tensor.data()).enumerate() {
            report.scalars_checked += 1;
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(floor);
            if rel > report.max_relative_error || !rel.is_finite() {
                report.max_relative_error = rel;
                report.worst_tensor = a.name.clone();
                report.worst_index = i;
                report.analytic = x;
                report.numeric = y;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{GroupKind, Tensor};

    fn single(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("x", GroupKind::Linear, Tensor::scalar(x));
        p
    }

    #[test]
    fn square_derivative() {
        let g = finite_difference_gradient(|p| p.entries()[0].tensor.item().powi(2), &single(3.0), 1e-6).unwrap();
        assert!((g.entries()[0].tensor.item() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_zero_gradient() {
        let mut p = single(1.0);
        p.push("y", GroupKind::Head, Tensor::vector(vec![1.0, 2.0, 3.0]));
        let g = finite_difference_gradient(|_| 4.25, &p, 1e-6).unwrap();
        assert!(g.iter().all(|e| e.tensor.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn non_finite_loss_is_oracle_failure() {
        let err = finite_difference_gradient(|p| p.entries()[0].tensor.item().ln(), &single(0.0), 1e-3).unwrap_err();
        assert!(matches!(err, NumericError::OracleFailure { .. }));
        assert!(finite_difference_gradient(|_| 0.0, &single(0.0), 0.0).is_err());
    }
}
