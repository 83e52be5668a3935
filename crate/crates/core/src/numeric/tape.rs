//! Reverse-mode differentiation over compositions of [`Primitive`]s.

use super::primitive::{apply_primitive, vjp, Primitive};
use super::{NumericError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: Option<Primitive>,
    parents: Vec<Var>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`; `None` when `v` does not influence
    /// the root or was recorded as a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Option<Primitive>, parents: Vec<Var>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn apply(&mut self, op: Primitive, args: &[Var]) -> Result<Var, NumericError> {
        let value = {
            let operands: Vec<&Tensor> = args.iter().map(|a| &self.nodes[a.0].value).collect();
            apply_primitive(&op, &operands)?
        };
        let requires_grad = args.iter().any(|a| self.nodes[a.0].requires_grad);
        Ok(self.push(value, Some(op), args.to_vec(), requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::MatMulTransB, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::Subtract, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::Hadamard, &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::AddRow, &[a, row])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::Abs, &[a])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, NumericError> {
        self.apply(Primitive::Scale(k), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        self.apply(Primitive::Concat, parts)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericError> {
        self.apply(Primitive::LogSoftmax, &[a])
    }

    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Result<Var, NumericError> {
        self.apply(Primitive::GatherRows(idx), &[table])
    }

    /// Back-propagates from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, NumericError> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(NumericError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let op = match &node.op {
                Some(op) if node.requires_grad => op,
                _ => continue,
            };
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let operands: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let parent_grads = vjp(op, &operands, &node.value, &g, &needs);
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    match &mut grads[p.0] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            // Interior nodes keep their gradient only until consumed; leaves keep theirs.
            if !node.parents.is_empty() {
                grads[idx] = None;
            } else {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let k = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let p = tape.mul(x, k).unwrap();
        let s = tape.sum(p).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.get(k).is_none());
    }

    #[test]
    fn root_must_be_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }
}
