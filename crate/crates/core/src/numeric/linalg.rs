//! Dense symmetric positive-definite linear algebra.

use super::primitive::transpose;
use super::{NumericError, Tensor};

fn square_dim(s: &Tensor) -> Result<usize, NumericError> {
    if s.rank() != 2 || s.rows() != s.cols() {
        return Err(NumericError::NotSquare {
            shape: s.shape().to_vec(),
        });
    }
    Ok(s.rows())
}

fn check_symmetric(s: &Tensor, n: usize) -> Result<(), NumericError> {
    let scale = s.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (s.get2(i, j), s.get2(j, i));
            if (a - b).abs() > 1e-10 * scale {
                return Err(NumericError::NotSymmetric { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Lower-triangular `L` with `L * L^T = S`.
pub fn cholesky(s: &Tensor) -> Result<Tensor, NumericError> {
    let n = square_dim(s)?;
    check_symmetric(s, n)?;
    let a = s.data();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let row_j = j * n;
        let mut d = a[row_j + j];
        for k in 0..j {
            d -= l[row_j + k] * l[row_j + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(NumericError::NotPositiveDefinite { pivot: j });
        }
        let djj = d.sqrt();
        l[row_j + j] = djj;
        for i in (j + 1)..n {
            let row_i = i * n;
            let mut v = a[row_i + j];
            for k in 0..j {
                v -= l[row_i + k] * l[row_j + k];
            }
            l[row_i + j] = v / djj;
        }
    }
    Ok(Tensor::matrix(n, n, l))
}

/// Solves `L * Y = B` in place for lower-triangular `L` (n x n) and `b`
/// holding `cols` right-hand sides in row-major `n x cols` layout.
pub fn forward_substitute(l: &Tensor, b: &mut [f64], cols: usize) {
    let n = l.rows();
    let ld = l.data();
    for i in 0..n {
        for k in 0..i {
            let lik = ld[i * n + k];
            if lik != 0.0 {
                for c in 0..cols {
                    b[i * cols + c] -= lik * b[k * cols + c];
                }
            }
        }
        let d = ld[i * n + i];
        for c in 0..cols {
            b[i * cols + c] /= d;
        }
    }
}

/// Solves `L^T * X = Y` in place.
pub fn back_substitute(l: &Tensor, b: &mut [f64], cols: usize) {
    let n = l.rows();
    let ld = l.data();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = ld[k * n + i];
            if lki != 0.0 {
                for c in 0..cols {
                    b[i * cols + c] -= lki * b[k * cols + c];
                }
            }
        }
        let d = ld[i * n + i];
        for c in 0..cols {
            b[i * cols + c] /= d;
        }
    }
}

/// Solves `S * X = B` given the Cholesky factor of `S`.
pub fn cholesky_solve(l: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    let n = l.rows();
    if b.rows() != n || b.rank() == 0 || b.rank() > 2 {
        return Err(NumericError::ShapeMismatch {
            op: "solve_spd",
            left: l.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let cols = b.cols();
    let mut x = b.clone();
    forward_substitute(l, x.data_mut(), cols);
    back_substitute(l, x.data_mut(), cols);
    Ok(x)
}

/// Solves `S * X = B` for symmetric positive-definite `S`.
pub fn solve_spd(s: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    let l = cholesky(s)?;
    cholesky_solve(&l, b)
}

/// `L * L^T`.
pub fn reconstruct(l: &Tensor) -> Tensor {
    let lt = transpose(l);
    super::apply_primitive(&super::Primitive::MatMul, &[l, &lt]).expect("square factor")
}

/// Principal submatrix over `rows x cols` index sets.
pub fn submatrix(s: &Tensor, rows: &[usize], cols: &[usize]) -> Tensor {
    Tensor::from_fn2(rows.len(), cols.len(), |i, j| s.get2(rows[i], cols[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    fn random_spd(n: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed, 0);
        let g = Tensor::from_fn2(n, n, |_, _| rng.normal());
        let mut s = reconstruct(&g);
        for i in 0..n {
            let v = s.get2(i, i) + n as f64 * 1e-3;
            s.set2(i, i, v);
        }
        s
    }

    #[test]
    fn identity_factor() {
        assert_eq!(cholesky(&Tensor::eye(4)).unwrap(), Tensor::eye(4));
    }

    #[test]
    fn two_by_two_factor() {
        let s = Tensor::matrix(2, 2, vec![4.0, 2.0, 2.0, 2.0]);
        let l = cholesky(&s).unwrap();
        assert_eq!(l.data(), &[2.0, 0.0, 1.0, 1.0]);
        assert_eq!(reconstruct(&l), s);
    }

    #[test]
    fn indefinite_rejected_with_pivot() {
        let s = Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert_eq!(cholesky(&s).unwrap_err(), NumericError::NotPositiveDefinite { pivot: 1 });
        let nan = Tensor::matrix(1, 1, vec![f64::NAN]);
        assert_eq!(cholesky(&nan).unwrap_err(), NumericError::NotPositiveDefinite { pivot: 0 });
    }

    #[test]
    fn asymmetric_and_non_square_rejected() {
        assert!(matches!(
            cholesky(&Tensor::matrix(2, 2, vec![1.0, 0.5, 0.0, 1.0])),
            Err(NumericError::NotSymmetric { .. })
        ));
        assert!(matches!(cholesky(&Tensor::zeros(&[2, 3])), Err(NumericError::NotSquare { .. })));
    }

    #[test]
    fn diagonal_solve() {
        let s = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 4.0]);
        let x = solve_spd(&s, &Tensor::vector(vec![2.0, 4.0])).unwrap();
        // sqrt(2) factors round, so exact equality is not expected
        assert!(x.data().iter().all(|v| (v - 1.0).abs() < 4.0 * f64::EPSILON));
        let b = Tensor::from_fn2(3, 2, |i, j| (i + j) as f64);
        assert_eq!(solve_spd(&Tensor::eye(3), &b).unwrap(), b);
    }

    #[test]
    fn random_solve_residual() {
        let s = random_spd(10, 17);
        let mut rng = RngStream::new(18, 0);
        let b = Tensor::from_fn2(10, 3, |_, _| rng.normal());
        let x = solve_spd(&s, &b).unwrap();
        let sx = crate::numeric::apply_primitive(&crate::numeric::Primitive::MatMul, &[&s, &x]).unwrap();
        let mut r = sx.clone();
        for (a, bb) in r.data_mut().iter_mut().zip(b.data()) {
            *a -= bb;
        }
        assert!(r.frobenius() / b.frobenius() < 1e-8);
    }

    #[test]
    fn reconstruction_round_trip_up_to_256() {
        for (n, seed) in [(1, 1), (7, 2), (64, 3), (256, 4)] {
            let s = random_spd(n, seed);
            let l = cholesky(&s).unwrap();
            let err = reconstruct(&l).max_abs_diff(&s);
            let mut diff = reconstruct(&l);
            for (a, b) in diff.data_mut().iter_mut().zip(s.data()) {
                *a -= b;
            }
            assert!(diff.frobenius() / s.frobenius() < 1e-10, "n={n} err={err}");
            for i in 0..n {
                for j in (i + 1)..n {
                    assert_eq!(l.get2(i, j), 0.0);
                }
            }
        }
    }
}
