//! Single-sequence, single-timestep cell evaluation with full traces.

use super::params::{BilinearLstmParams, CellParams, Gate, LinearLstmParams, SharedWeightParams};
use super::CellError;
use crate::numeric::{apply_primitive, NumericError, Primitive, Tensor};

/// Everything a step computed, split so that each gate pre-activation is
/// exactly `linear[g] + bilinear[g]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    /// `W_x^g x + W_h^g h_prev + b^g`, per gate.
    pub linear: [Tensor; 4],
    /// Bilinear contribution per gate; zeros for a linear cell.
    pub bilinear: [Tensor; 4],
    /// Pool vector `mu_t`; empty unless the cell has a bilinear pool.
    pub pool: Tensor,
    /// Activated gate values `i, f, o` and candidate `C~`.
    pub gates: [Tensor; 4],
    pub h: Tensor,
    pub c: Tensor,
}

impl StepTrace {
    pub fn preactivation(&self, g: Gate) -> Tensor {
        let i = g as usize;
        binary(Primitive::Add, &self.linear[i], &self.bilinear[i]).expect("trace parts share shape")
    }
}

fn binary(op: Primitive, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    apply_primitive(&op, &[a, b])
}

fn vector_len(name: &'static str, t: &Tensor, len: usize) -> Result<(), CellError> {
    if t.rank() != 1 || t.len() != len {
        return Err(CellError::Shape {
            what: name,
            expected: vec![len],
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_state(p: &LinearLstmParams, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(), CellError> {
    vector_len("x_t", x, p.n)?;
    vector_len("h_prev", h, p.m)?;
    vector_len("c_prev", c, p.m)
}

/// Per gate: `(W_x x, W_h h)`.
fn gate_products(p: &LinearLstmParams, x: &Tensor, h: &Tensor) -> Result<Vec<(Tensor, Tensor)>, CellError> {
    p.gates
        .iter()
        .map(|g| {
            let wx = binary(Primitive::MatMul, &g.w_x, x)?;
            let wh = binary(Primitive::MatMul, &g.w_h, h)?;
            Ok((wx, wh))
        })
        .collect()
}

fn linear_parts(p: &LinearLstmParams, products: &[(Tensor, Tensor)]) -> Result<[Tensor; 4], CellError> {
    let mut parts = Vec::with_capacity(4);
    for (gate, (wx, wh)) in p.gates.iter().zip(products) {
        let s = binary(Primitive::Add, wx, wh)?;
        parts.push(binary(Primitive::Add, &s, &gate.bias)?);
    }
    Ok(parts.try_into().expect("four gates"))
}

fn finish(linear: [Tensor; 4], bilinear: [Tensor; 4], pool: Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor, StepTrace), CellError> {
    let mut gates = Vec::with_capacity(4);
    for (g, (l, b)) in Gate::ALL.iter().zip(linear.iter().zip(&bilinear)) {
        let pre = binary(Primitive::Add, l, b)?;
        let act = match g {
            Gate::Candidate => Primitive::Tanh,
            _ => Primitive::Sigmoid,
        };
        gates.push(apply_primitive(&act, &[&pre])?);
    }
    let gates: [Tensor; 4] = gates.try_into().expect("four gates");
    let [i, f, o, cand] = &gates;
    let keep = binary(Primitive::Hadamard, f, c_prev)?;
    let write = binary(Primitive::Hadamard, i, cand)?;
    let c = binary(Primitive::Add, &keep, &write)?;
    let tc = apply_primitive(&Primitive::Tanh, &[&c])?;
    let h = binary(Primitive::Hadamard, &tc, o)?;
    let trace = StepTrace {
        linear,
        bilinear,
        pool,
        gates,
        h: h.clone(),
        c: c.clone(),
    };
    Ok((h, c, trace))
}

/// One LSTM step: `C_t = f * C_prev + i * C~`, `h_t = tanh(C_t) * o`.
pub fn lstm_step(p: &LinearLstmParams, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor, StepTrace), CellError> {
    check_state(p, x, h_prev, c_prev)?;
    let products = gate_products(p, x, h_prev)?;
    let linear = linear_parts(p, &products)?;
    let zeros = std::array::from_fn(|_| Tensor::zeros(&[p.m]));
    finish(linear, zeros, Tensor::zeros(&[0]), c_prev)
}

/// `mu_t = (x^T W_x^mu)^T * (W_h^mu h_prev)`, a length-`c` vector.
pub fn bilinear_pool(w_x_mu: &Tensor, w_h_mu: &Tensor, x: &Tensor, h_prev: &Tensor) -> Result<Tensor, CellError> {
    if w_x_mu.rank() != 2 || w_h_mu.rank() != 2 || w_x_mu.cols() != w_h_mu.rows() {
        return Err(CellError::Numeric(NumericError::ShapeMismatch {
            op: "bilinear_pool",
            left: w_x_mu.shape().to_vec(),
            right: w_h_mu.shape().to_vec(),
        }));
    }
    vector_len("x_t", x, w_x_mu.rows())?;
    vector_len("h_prev", h_prev, w_h_mu.cols())?;
    let mu_x = binary(Primitive::MatMul, x, w_x_mu)?;
    let mu_h = binary(Primitive::MatMul, w_h_mu, h_prev)?;
    Ok(binary(Primitive::Hadamard, &mu_x, &mu_h)?)
}

/// Per-neuron rank-1 bilinear terms `beta_i = (x . w_x^i)(w_h^i . h)` by
/// explicit scalar loops. `w_x_rows` is `c x n`, `w_h_rows` is `c x m`.
pub fn naive_per_neuron_bilinear(w_x_rows: &Tensor, w_h_rows: &Tensor, x: &Tensor, h: &Tensor) -> Result<Tensor, CellError> {
    if w_x_rows.rank() != 2 || w_h_rows.rank() != 2 || w_x_rows.rows() != w_h_rows.rows() {
        return Err(CellError::Numeric(NumericError::ShapeMismatch {
            op: "naive_per_neuron_bilinear",
            left: w_x_rows.shape().to_vec(),
            right: w_h_rows.shape().to_vec(),
        }));
    }
    vector_len("x_t", x, w_x_rows.cols())?;
    vector_len("h_prev", h, w_h_rows.cols())?;
    let c = w_x_rows.rows();
    let mut beta = Vec::with_capacity(c);
    for i in 0..c {
        let mut ax = 0.0;
        for (w, v) in w_x_rows.row(i).iter().zip(x.data()) {
            ax += w * v;
        }
        let mut ah = 0.0;
        for (w, v) in w_h_rows.row(i).iter().zip(h.data()) {
            ah += w * v;
        }
        beta.push(ax * ah);
    }
    Ok(Tensor::vector(beta))
}

/// LSTM step whose gate pre-activations also receive `W_mu^g mu_t`.
pub fn bilinear_lstm_step(p: &BilinearLstmParams, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor, StepTrace), CellError> {
    let lin = &p.linear;
    check_state(lin, x, h_prev, c_prev)?;
    let pool = &p.pool;
    let mu = bilinear_pool(&pool.w_x, &pool.w_h, x, h_prev)?;
    let products = gate_products(lin, x, h_prev)?;
    let linear = linear_parts(lin, &products)?;
    let mut bilinear = Vec::with_capacity(4);
    for w_mu in &pool.integrate {
        bilinear.push(binary(Primitive::MatMul, w_mu, &mu)?);
    }
    finish(linear, bilinear.try_into().expect("four gates"), mu, c_prev)
}

/// Degenerate rank-1 bilinear step reusing each gate's linear weights:
/// bilinear part `(W_x^g x) * (W_h^g h_prev)`.
pub fn shared_weight_bilinear_step(p: &SharedWeightParams, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor, StepTrace), CellError> {
    let lin = &p.linear;
    check_state(lin, x, h_prev, c_prev)?;
    let products = gate_products(lin, x, h_prev)?;
    let linear = linear_parts(lin, &products)?;
    let mut bilinear = Vec::with_capacity(4);
    for (wx, wh) in &products {
        bilinear.push(binary(Primitive::Hadamard, wx, wh)?);
    }
    finish(linear, bilinear.try_into().expect("four gates"), Tensor::zeros(&[0]), c_prev)
}

impl CellParams {
    pub fn step(&self, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor, StepTrace), CellError> {
        match self {
            CellParams::Linear(p) => lstm_step(p, x, h_prev, c_prev),
            CellParams::Bilinear(p) => bilinear_lstm_step(p, x, h_prev, c_prev),
            CellParams::Shared(p) => shared_weight_bilinear_step(p, x, h_prev, c_prev),
        }
    }
}
