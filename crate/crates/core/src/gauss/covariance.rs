use super::GaussError;
use crate::numeric::linalg::{cholesky, cholesky_solve, solve_spd, submatrix};
use crate::numeric::{apply_primitive, Primitive, RngStream, Tensor};

const MAX_JITTER_ESCALATIONS: usize = 3;

/// Random correlation matrix `Σ = D^-1/2 (G G^T + eps I) D^-1/2` where each
/// entry of the standard-normal factor `G` is zeroed with probability
/// `sparsity` and `eps = 1e-3 d`.
pub fn sample_covariance(d: usize, sparsity: f64, rng: &mut RngStream) -> Result<Tensor, GaussError> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(GaussError::Spec(format!("sparsity must lie in [0, 1), got {sparsity}")));
    }
    let g = Tensor::from_fn2(d, d, |_, _| {
        let z = rng.normal();
        if rng.bernoulli(sparsity) {
            0.0
        } else {
            z
        }
    });
    let ggt = apply_primitive(&Primitive::MatMulTransB, &[&g, &g])?;
    let mut eps = 1e-3 * d as f64;
    let mut last_err = None;
    for _ in 0..=MAX_JITTER_ESCALATIONS {
        let sigma = correlation(&ggt, eps);
        match cholesky(&sigma) {
            Ok(_) => return Ok(sigma),
            Err(e) => last_err = Some(e),
        }
        eps *= 10.0;
    }
    Err(GaussError::Generation(last_err.expect("at least one attempt")))
}

fn correlation(ggt: &Tensor, eps: f64) -> Tensor {
    let d = ggt.rows();
    let diag: Vec<f64> = (0..d).map(|i| (ggt.get2(i, i) + eps).sqrt()).collect();
    let mut s = Tensor::zeros(&[d, d]);
    for i in 0..d {
        s.set2(i, i, 1.0);
        for j in 0..i {
            // lower triangle only, mirrored, so the result is exactly symmetric
            let v = ggt.get2(i, j) / (diag[i] * diag[j]);
            s.set2(i, j, v);
            s.set2(j, i, v);
        }
    }
    s
}

fn check_indices(d: usize, k: usize, unobserved: &[usize]) -> Result<(), GaussError> {
    if k == 0 {
        return Err(GaussError::Spec("at least one observed variable is required".into()));
    }
    if k > d {
        return Err(GaussError::Spec(format!("{k} observed variables exceed dimension {d}")));
    }
    if let Some(&bad) = unobserved.iter().find(|&&i| i < k || i >= d) {
        return Err(GaussError::Spec(format!(
            "unobserved index {bad} must lie outside the observed prefix 0..{k} and below {d}"
        )));
    }
    Ok(())
}

/// `E[y | x_0..x_{k-1}] = Σ_yo Σ_oo^-1 x` for a zero-mean Gaussian whose
/// observed variables are the first `x_obs.len()` coordinates.
pub fn conditional_expectation(sigma: &Tensor, x_obs: &[f64], unobserved: &[usize]) -> Result<Vec<f64>, GaussError> {
    let k = x_obs.len();
    check_indices(sigma.rows(), k, unobserved)?;
    let prefix: Vec<usize> = (0..k).collect();
    let s_oo = submatrix(sigma, &prefix, &prefix);
    let a = solve_spd(&s_oo, &Tensor::vector(x_obs.to_vec()))?;
    let s_yo = submatrix(sigma, unobserved, &prefix);
    Ok(apply_primitive(&Primitive::MatMul, &[&s_yo, &a])?.into_data())
}

/// Gain `K = Σ_yo Σ_oo^-1` (`d_y x k`), so `E[y | x_prefix] = K x_prefix`.
pub fn gain_matrix(sigma: &Tensor, k: usize, unobserved: &[usize]) -> Result<Tensor, GaussError> {
    check_indices(sigma.rows(), k, unobserved)?;
    let prefix: Vec<usize> = (0..k).collect();
    let l = cholesky(&submatrix(sigma, &prefix, &prefix))?;
    gain_with_factor(sigma, &l, unobserved)
}

/// Same as [`gain_matrix`] given the Cholesky factor of the observed
/// prefix block. A leading block of a larger factor works too.
pub(crate) fn gain_with_factor(sigma: &Tensor, l_oo: &Tensor, unobserved: &[usize]) -> Result<Tensor, GaussError> {
    let prefix: Vec<usize> = (0..l_oo.rows()).collect();
    let s_oy = submatrix(sigma, &prefix, unobserved);
    let x = cholesky_solve(l_oo, &s_oy)?;
    Ok(Tensor::from_fn2(unobserved.len(), prefix.len(), |i, j| x.get2(j, i)))
}

/// Mean per-variable residual variance `tr(Σ_yy - K Σ_oy) / d_y`: the
/// expected squared error of the exact conditional mean against `y`.
pub fn residual_variance(sigma: &Tensor, k: usize, unobserved: &[usize]) -> Result<f64, GaussError> {
    let gain = gain_matrix(sigma, k, unobserved)?;
    let prefix: Vec<usize> = (0..k).collect();
    let s_oy = submatrix(sigma, &prefix, unobserved);
    let explained = apply_primitive(&Primitive::MatMul, &[&gain, &s_oy])?;
    let d_y = unobserved.len();
    let trace: f64 = (0..d_y)
        .map(|i| sigma.get2(unobserved[i], unobserved[i]) - explained.get2(i, i))
        .sum();
    Ok(trace / d_y as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_factor_gives_identity() {
        let mut rng = RngStream::new(1, 2);
        let s = sample_covariance(5, 1.0 - f64::EPSILON, &mut rng).unwrap();
        assert_eq!(s, Tensor::eye(5));
    }

    #[test]
    fn correlation_bounds_and_pd() {
        for seed in 0..20 {
            let s = sample_covariance(3, 0.3, &mut RngStream::new(seed, 2)).unwrap();
            assert!(cholesky(&s).is_ok());
            for i in 0..3 {
                assert_eq!(s.get2(i, i), 1.0);
                for j in 0..3 {
                    assert!(s.get2(i, j).abs() <= 1.0);
                    assert_eq!(s.get2(i, j), s.get2(j, i));
                }
            }
        }
    }

    #[test]
    fn identity_covariance_predicts_zero() {
        let e = conditional_expectation(&Tensor::eye(4), &[1.0, -2.0], &[2, 3]).unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
    }

    #[test]
    fn bivariate_closed_form() {
        for (rho, x) in [(0.5, 2.0), (-0.25, 3.0), (0.9, -1.5)] {
            let s = Tensor::matrix(2, 2, vec![1.0, rho, rho, 1.0]);
            let e = conditional_expectation(&s, &[x], &[1]).unwrap();
            assert_eq!(e, vec![rho * x]);
        }
    }

    #[test]
    fn gain_agrees_with_direct_solve() {
        let s = sample_covariance(9, 0.2, &mut RngStream::new(4, 2)).unwrap();
        let x = [0.3, -1.0, 0.7, 2.0];
        let k = gain_matrix(&s, 4, &[6, 7, 8]).unwrap();
        let via_gain = apply_primitive(&Primitive::MatMul, &[&k, &Tensor::vector(x.to_vec())]).unwrap();
        let direct = conditional_expectation(&s, &x, &[6, 7, 8]).unwrap();
        for (a, b) in via_gain.data().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn overlapping_indices_rejected() {
        assert!(conditional_expectation(&Tensor::eye(3), &[1.0, 1.0], &[1]).is_err());
        assert!(conditional_expectation(&Tensor::eye(3), &[], &[1]).is_err());
    }
}
