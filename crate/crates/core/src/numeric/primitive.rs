//! Primitive tensor operations and their vector-Jacobian products.
//!
//! Elementwise operations never broadcast: operands must have identical
//! shapes. The only row-wise expansion is the explicit [`Primitive::AddRow`].

use super::gemm::{gemm, MatRef};
use super::{NumericError, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
    /// operand a column vector; the result drops the corresponding axis.
    MatMul,
    /// `A * B^T` for two matrices.
    MatMulTransB,
    Add,
    Subtract,
    Hadamard,
    /// Adds a length-`cols` vector to every row of a matrix.
    AddRow,
    Sigmoid,
    Tanh,
    Abs,
    /// Concatenation along the last axis; all operands share leading extents.
    Concat,
    Transpose,
    Scale(f64),
    /// Sum of all elements, producing a rank-0 tensor.
    Sum,
    /// Row-wise log-softmax of a matrix (or of a single vector).
    LogSoftmax,
    /// Selects rows of a table by index.
    GatherRows(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::MatMulTransB => "matmul_tb",
            Primitive::Add => "add",
            Primitive::Subtract => "subtract",
            Primitive::Hadamard => "hadamard",
            Primitive::AddRow => "add_row",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Abs => "abs",
            Primitive::Concat => "concat",
            Primitive::Transpose => "transpose",
            Primitive::Scale(_) => "scale",
            Primitive::Sum => "sum",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::GatherRows(_) => "gather_rows",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul
            | Primitive::MatMulTransB
            | Primitive::Add
            | Primitive::Subtract
            | Primitive::Hadamard
            | Primitive::AddRow => Some(2),
            Primitive::Concat => None,
            _ => Some(1),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mismatch(op: &Primitive, a: &Tensor, b: &Tensor) -> NumericError {
    NumericError::ShapeMismatch {
        op: op.name(),
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Logical matrix dimensions of a matmul operand.
fn as_matrix(t: &Tensor, left: bool) -> Option<(usize, usize)> {
    match t.rank() {
        1 if left => Some((1, t.len())),
        1 => Some((t.len(), 1)),
        2 => Some((t.shape()[0], t.shape()[1])),
        _ => None,
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
}

fn matmul_shape(op: &Primitive, a: &Tensor, b: &Tensor) -> Result<Vec<usize>, NumericError> {
    let ((ar, ac), (br, bc)) = match (as_matrix(a, true), as_matrix(b, false)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(mismatch(op, a, b)),
    };
    if ac != br {
        return Err(mismatch(op, a, b));
    }
    Ok(match (a.rank(), b.rank()) {
        (1, 1) => vec![],
        (1, _) => vec![bc],
        (_, 1) => vec![ar],
        _ => vec![ar, bc],
    })
}

/// Evaluates `op` on `operands`.
pub fn apply_primitive(op: &Primitive, operands: &[&Tensor]) -> Result<Tensor, NumericError> {
    if let Some(n) = op.arity() {
        if operands.len() != n {
            return Err(NumericError::Arity {
                op: op.name(),
                expected: n,
                got: operands.len(),
            });
        }
    }
    match op {
        Primitive::MatMul => {
            let (a, b) = (operands[0], operands[1]);
            let shape = matmul_shape(op, a, b)?;
            let (ar, ac) = as_matrix(a, true).unwrap();
            let (_, bc) = as_matrix(b, false).unwrap();
            let mut out = vec![0.0; ar * bc];
            gemm(MatRef::new(a.data(), ar, ac), MatRef::new(b.data(), ac, bc), 0.0, &mut out);
            Tensor::from_vec(shape, out)
        }
        Primitive::MatMulTransB => {
            let (a, b) = (operands[0], operands[1]);
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
                return Err(mismatch(op, a, b));
            }
            let (r, k, s) = (a.rows(), a.cols(), b.rows());
            let mut out = vec![0.0; r * s];
            gemm(MatRef::new(a.data(), r, k), MatRef::new(b.data(), s, k).t(), 0.0, &mut out);
            Ok(Tensor::matrix(r, s, out))
        }
        Primitive::Add | Primitive::Subtract | Primitive::Hadamard => {
            let (a, b) = (operands[0], operands[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, a, b));
            }
            Ok(match op {
                Primitive::Add => zip_map(a, b, |x, y| x + y),
                Primitive::Subtract => zip_map(a, b, |x, y| x - y),
                _ => zip_map(a, b, |x, y| x * y),
            })
        }
        Primitive::AddRow => {
            let (a, v) = (operands[0], operands[1]);
            if a.rank() != 2 || v.rank() != 1 || v.len() != a.cols() {
                return Err(mismatch(op, a, v));
            }
            let cols = a.cols();
            let mut out = a.clone();
            if cols > 0 {
                for row in out.data_mut().chunks_mut(cols) {
                    for (x, b) in row.iter_mut().zip(v.data()) {
                        *x += b;
                    }
                }
            }
            Ok(out)
        }
        Primitive::Sigmoid => Ok(operands[0].map(sigmoid)),
        Primitive::Tanh => Ok(operands[0].map(f64::tanh)),
        Primitive::Abs => Ok(operands[0].map(f64::abs)),
        Primitive::Scale(k) => {
            let k = *k;
            Ok(operands[0].map(|v| v * k))
        }
        Primitive::Sum => Ok(Tensor::scalar(operands[0].sum())),
        Primitive::Transpose => {
            let a = operands[0];
            if a.rank() != 2 {
                return Err(NumericError::Rank {
                    op: op.name(),
                    shape: a.shape().to_vec(),
                });
            }
            Ok(transpose(a))
        }
        Primitive::Concat => concat(op, operands),
        Primitive::LogSoftmax => {
            let a = operands[0];
            if a.rank() == 0 || a.rank() > 2 {
                return Err(NumericError::Rank {
                    op: op.name(),
                    shape: a.shape().to_vec(),
                });
            }
            let mut out = a.clone();
            let cols = a.shape()[a.rank() - 1];
            if cols > 0 {
                for row in out.data_mut().chunks_mut(cols) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    row.iter_mut().for_each(|v| *v -= lse);
                }
            }
            Ok(out)
        }
        Primitive::GatherRows(idx) => {
            let table = operands[0];
            if table.rank() != 2 {
                return Err(NumericError::Rank {
                    op: op.name(),
                    shape: table.shape().to_vec(),
                });
            }
            let cols = table.cols();
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &i in idx {
                if i >= table.rows() {
                    return Err(NumericError::IndexOutOfRange {
                        index: i,
                        len: table.rows(),
                    });
                }
                data.extend_from_slice(table.row(i));
            }
            Ok(Tensor::matrix(idx.len(), cols, data))
        }
    }
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Tensor::matrix(c, r, out)
}

fn concat(op: &Primitive, operands: &[&Tensor]) -> Result<Tensor, NumericError> {
    let first = match operands.first() {
        Some(t) => *t,
        None => {
            return Err(NumericError::Arity {
                op: op.name(),
                expected: 1,
                got: 0,
            })
        }
    };
    let rank = first.rank();
    if rank == 0 || rank > 2 {
        return Err(NumericError::Rank {
            op: op.name(),
            shape: first.shape().to_vec(),
        });
    }
    let rows = if rank == 2 { first.rows() } else { 1 };
    for t in operands {
        if t.rank() != rank || (rank == 2 && t.rows() != rows) {
            return Err(mismatch(op, first, t));
        }
    }
    let widths: Vec<usize> = operands.iter().map(|t| t.shape()[rank - 1]).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (t, &w) in operands.iter().zip(&widths) {
            data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
    }
    let shape = if rank == 2 { vec![rows, total] } else { vec![total] };
    Tensor::from_vec(shape, data)
}

/// Vector-Jacobian product: given the upstream gradient `grad` of the
/// output, returns the gradient for each operand whose `needs` flag is set.
pub fn vjp(
    op: &Primitive,
    operands: &[&Tensor],
    output: &Tensor,
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    match op {
        Primitive::MatMul => {
            let (a, b) = (operands[0], operands[1]);
            let (ar, ac) = as_matrix(a, true).unwrap();
            let (_, bc) = as_matrix(b, false).unwrap();
            let g = MatRef::new(grad.data(), ar, bc);
            let da = want(0).then(|| {
                let mut out = vec![0.0; ar * ac];
                gemm(g, MatRef::new(b.data(), ac, bc).t(), 0.0, &mut out);
                Tensor::from_vec(a.shape().to_vec(), out).unwrap()
            });
            let db = want(1).then(|| {
                let mut out = vec![0.0; ac * bc];
                gemm(MatRef::new(a.data(), ar, ac).t(), g, 0.0, &mut out);
                Tensor::from_vec(b.shape().to_vec(), out).unwrap()
            });
            vec![da, db]
        }
        Primitive::MatMulTransB => {
            let (a, b) = (operands[0], operands[1]);
            let (r, k, s) = (a.rows(), a.cols(), b.rows());
            let g = MatRef::new(grad.data(), r, s);
            let da = want(0).then(|| {
                let mut out = vec![0.0; r * k];
                gemm(g, MatRef::new(b.data(), s, k), 0.0, &mut out);
                Tensor::matrix(r, k, out)
            });
            let db = want(1).then(|| {
                let mut out = vec![0.0; s * k];
                gemm(g.t(), MatRef::new(a.data(), r, k), 0.0, &mut out);
                Tensor::matrix(s, k, out)
            });
            vec![da, db]
        }
        Primitive::Add => vec![want(0).then(|| grad.clone()), want(1).then(|| grad.clone())],
        Primitive::Subtract => vec![
            want(0).then(|| grad.clone()),
            want(1).then(|| grad.map(|v| -v)),
        ],
        Primitive::Hadamard => {
            let (a, b) = (operands[0], operands[1]);
            vec![
                want(0).then(|| zip_map(grad, b, |g, y| g * y)),
                want(1).then(|| zip_map(grad, a, |g, x| g * x)),
            ]
        }
        Primitive::AddRow => {
            let cols = operands[0].cols();
            let dv = want(1).then(|| {
                let mut sums = vec![0.0; cols];
                if cols > 0 {
                    for row in grad.data().chunks(cols) {
                        for (s, g) in sums.iter_mut().zip(row) {
                            *s += g;
                        }
                    }
                }
                Tensor::vector(sums)
            });
            vec![want(0).then(|| grad.clone()), dv]
        }
        Primitive::Sigmoid => vec![want(0).then(|| zip_map(grad, output, |g, y| g * y * (1.0 - y)))],
        Primitive::Tanh => vec![want(0).then(|| zip_map(grad, output, |g, y| g * (1.0 - y * y)))],
        Primitive::Abs => vec![want(0).then(|| {
            zip_map(grad, operands[0], |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            })
        })],
        Primitive::Scale(k) => {
            let k = *k;
            vec![want(0).then(|| grad.map(|v| v * k))]
        }
        Primitive::Sum => vec![want(0).then(|| Tensor::full(operands[0].shape(), grad.item()))],
        Primitive::Transpose => vec![want(0).then(|| transpose(grad))],
        Primitive::Concat => {
            let rank = operands[0].rank();
            let rows = if rank == 2 { operands[0].rows() } else { 1 };
            let total = output.shape()[rank - 1];
            let mut offset = 0;
            operands
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let w = t.shape()[rank - 1];
                    let start = offset;
                    offset += w;
                    want(i).then(|| {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&grad.data()[r * total + start..r * total + start + w]);
                        }
                        Tensor::from_vec(t.shape().to_vec(), data).unwrap()
                    })
                })
                .collect()
        }
        Primitive::LogSoftmax => vec![want(0).then(|| {
            let cols = output.shape()[output.rank() - 1];
            let mut out = grad.clone();
            if cols > 0 {
                for (row, y) in out.data_mut().chunks_mut(cols).zip(output.data().chunks(cols)) {
                    let gsum: f64 = row.iter().sum();
                    for (g, &ly) in row.iter_mut().zip(y) {
                        *g -= ly.exp() * gsum;
                    }
                }
            }
            out
        })],
        Primitive::GatherRows(idx) => vec![want(0).then(|| {
            let table = operands[0];
            let cols = table.cols();
            let mut out = Tensor::zeros(table.shape());
            for (r, &i) in idx.iter().enumerate() {
                let src = &grad.data()[r * cols..(r + 1) * cols];
                for (d, s) in out.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                    *d += s;
                }
            }
            out
        })],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let out = apply_primitive(&Primitive::Sigmoid, &[&Tensor::vector(vec![0.0])]).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::from_fn2(3, 4, |i, j| (i * 4 + j) as f64 - 5.5);
        let out = apply_primitive(&Primitive::MatMul, &[&Tensor::eye(3), &a]).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn hadamard_elementwise() {
        let out = apply_primitive(
            &Primitive::Hadamard,
            &[&Tensor::vector(vec![1.0, 2.0, 3.0]), &Tensor::vector(vec![4.0, 5.0, 6.0])],
        )
        .unwrap();
        assert_eq!(out.data(), &[4.0, 10.0, 18.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let err = apply_primitive(&Primitive::Add, &[&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3, 2])])
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
        let err = apply_primitive(&Primitive::MatMul, &[&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])]);
        assert!(err.is_err());
    }

    #[test]
    fn no_implicit_broadcasting() {
        let r = apply_primitive(&Primitive::Add, &[&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3])]);
        assert!(r.is_err());
    }

    #[test]
    fn vector_matmul_forms() {
        let w = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = Tensor::vector(vec![1.0, 0.0, -1.0]);
        let wx = apply_primitive(&Primitive::MatMul, &[&w, &x]).unwrap();
        assert_eq!(wx.data(), &[-2.0, -2.0]);
        let y = Tensor::vector(vec![1.0, 1.0]);
        let yw = apply_primitive(&Primitive::MatMul, &[&y, &w]).unwrap();
        assert_eq!(yw.shape(), &[3]);
        assert_eq!(yw.data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn concat_and_gather() {
        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = apply_primitive(&Primitive::Concat, &[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let g = apply_primitive(&Primitive::GatherRows(vec![1, 1, 0]), &[&b]).unwrap();
        assert_eq!(g.data(), &[5.0, 6.0, 5.0, 6.0, 3.0, 4.0]);
        assert!(apply_primitive(&Primitive::GatherRows(vec![2]), &[&b]).is_err());
    }

    #[test]
    fn log_softmax_of_uniform_logits() {
        let out = apply_primitive(&Primitive::LogSoftmax, &[&Tensor::zeros(&[2, 7])]).unwrap();
        for v in out.data() {
            assert!((v + 7f64.ln()).abs() < 1e-15);
        }
    }
}
