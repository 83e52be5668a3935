use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CellError;
use crate::numeric::{GroupKind, RngStream, Tensor};

/// The four LSTM gates, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];

    pub fn tag(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Output => "o",
            Gate::Candidate => "g",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Linear,
    Bilinear,
    Shared,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Linear => "linear",
            CellKind::Bilinear => "bilinear",
            CellKind::Shared => "shared",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = CellError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(CellKind::Linear),
            "bilinear" => Ok(CellKind::Bilinear),
            "shared" | "shared-weight" => Ok(CellKind::Shared),
            other => Err(CellError::Config(format!("unknown cell type '{other}'"))),
        }
    }
}

/// Weights of one gate: `W_x` (m x n), `W_h` (m x m), bias (m).
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLstmParams {
    pub n: usize,
    pub m: usize,
    pub gates: [GateParams; 4],
}

/// Pool projections `W_x^mu` (n x c), `W_h^mu` (c x m) and the per-gate
/// integration maps `W_mu^g` (m x c).
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearPoolParams {
    pub c: usize,
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub integrate: [Tensor; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BilinearLstmParams {
    pub linear: LinearLstmParams,
    pub pool: BilinearPoolParams,
}

/// Linear weights only; each gate's bilinear term is `(W_x x) * (W_h h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedWeightParams {
    pub linear: LinearLstmParams,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Linear(LinearLstmParams),
    Bilinear(BilinearLstmParams),
    Shared(SharedWeightParams),
}

pub(crate) fn glorot(rows: usize, cols: usize, gain: f64, rng: &mut RngStream) -> Tensor {
    let limit = if rows + cols == 0 {
        0.0
    } else {
        gain * (6.0 / (rows + cols) as f64).sqrt()
    };
    Tensor::from_fn2(rows, cols, |_, _| rng.uniform_range(-limit, limit))
}

/// Scale applied to the Glorot limit of the integration maps.
pub const INTEGRATION_INIT_GAIN: f64 = 0.1;
pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LinearLstmParams {
    pub fn zeros(n: usize, m: usize) -> Self {
        let gate = || GateParams {
            w_x: Tensor::zeros(&[m, n]),
            w_h: Tensor::zeros(&[m, m]),
            bias: Tensor::zeros(&[m]),
        };
        Self {
            n,
            m,
            gates: [gate(), gate(), gate(), gate()],
        }
    }

    pub fn init(n: usize, m: usize, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(n, m);
        for (gate, g) in p.gates.iter_mut().zip(Gate::ALL) {
            gate.w_x = glorot(m, n, 1.0, rng);
            gate.w_h = glorot(m, m, 1.0, rng);
            if g == Gate::Forget {
                gate.bias = Tensor::full(&[m], FORGET_BIAS_INIT);
            }
        }
        p
    }

    pub fn gate(&self, g: Gate) -> &GateParams {
        &self.gates[g as usize]
    }

    pub fn parameter_count(&self) -> usize {
        4 * (self.m * self.n + self.m * self.m + self.m)
    }
}

impl BilinearPoolParams {
    pub fn zeros(n: usize, m: usize, c: usize) -> Self {
        Self {
            c,
            w_x: Tensor::zeros(&[n, c]),
            w_h: Tensor::zeros(&[c, m]),
            integrate: std::array::from_fn(|_| Tensor::zeros(&[m, c])),
        }
    }

    pub fn init(n: usize, m: usize, c: usize, rng: &mut RngStream) -> Self {
        let w_x = glorot(n, c, 1.0, rng);
        let w_h = glorot(c, m, 1.0, rng);
        let integrate = std::array::from_fn(|_| glorot(m, c, INTEGRATION_INIT_GAIN, rng));
        Self { c, w_x, w_h, integrate }
    }
}

impl CellParams {
    pub fn zeros(kind: CellKind, n: usize, m: usize, c: usize) -> Self {
        let linear = LinearLstmParams::zeros(n, m);
        match kind {
            CellKind::Linear => CellParams::Linear(linear),
            CellKind::Shared => CellParams::Shared(SharedWeightParams { linear }),
            CellKind::Bilinear => CellParams::Bilinear(BilinearLstmParams {
                linear,
                pool: BilinearPoolParams::zeros(n, m, c),
            }),
        }
    }

    pub fn init(kind: CellKind, n: usize, m: usize, c: usize, rng: &mut RngStream) -> Self {
        let linear = LinearLstmParams::init(n, m, rng);
        match kind {
            CellKind::Linear => CellParams::Linear(linear),
            CellKind::Shared => CellParams::Shared(SharedWeightParams { linear }),
            CellKind::Bilinear => CellParams::Bilinear(BilinearLstmParams {
                linear,
                pool: BilinearPoolParams::init(n, m, c, rng),
            }),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Linear(_) => CellKind::Linear,
            CellParams::Bilinear(_) => CellKind::Bilinear,
            CellParams::Shared(_) => CellKind::Shared,
        }
    }

    pub fn linear(&self) -> &LinearLstmParams {
        match self {
            CellParams::Linear(p) => p,
            CellParams::Bilinear(p) => &p.linear,
            CellParams::Shared(p) => &p.linear,
        }
    }

    pub fn linear_mut(&mut self) -> &mut LinearLstmParams {
        match self {
            CellParams::Linear(p) => p,
            CellParams::Bilinear(p) => &mut p.linear,
            CellParams::Shared(p) => &mut p.linear,
        }
    }

    pub fn pool(&self) -> Option<&BilinearPoolParams> {
        match self {
            CellParams::Bilinear(p) => Some(&p.pool),
            _ => None,
        }
    }

    pub fn pool_mut(&mut self) -> Option<&mut BilinearPoolParams> {
        match self {
            CellParams::Bilinear(p) => Some(&mut p.pool),
            _ => None,
        }
    }

    /// Enumerates `(name, group, tensor)` in canonical order: per gate
    /// `w_x, w_h, bias`, then pool `w_x, w_h`, then integration maps.
    pub fn visit<'a>(
        &'a self,
        prefix: &str,
        integration_group: GroupKind,
        f: &mut dyn FnMut(String, GroupKind, &'a Tensor),
    ) {
        for (gate, g) in self.linear().gates.iter().zip(Gate::ALL) {
            f(format!("{prefix}gate.{}.w_x", g.tag()), GroupKind::Linear, &gate.w_x);
            f(format!("{prefix}gate.{}.w_h", g.tag()), GroupKind::Linear, &gate.w_h);
            f(format!("{prefix}gate.{}.bias", g.tag()), GroupKind::Linear, &gate.bias);
        }
        if let Some(pool) = self.pool() {
            f(format!("{prefix}pool.w_x"), GroupKind::Bilinear, &pool.w_x);
            f(format!("{prefix}pool.w_h"), GroupKind::Bilinear, &pool.w_h);
            for (t, g) in pool.integrate.iter().zip(Gate::ALL) {
                f(format!("{prefix}pool.integrate.{}", g.tag()), integration_group, t);
            }
        }
    }

    /// Mutable tensors in the same order as [`CellParams::visit`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let (linear, pool) = match self {
            CellParams::Linear(p) => (p, None),
            CellParams::Shared(p) => (&mut p.linear, None),
            CellParams::Bilinear(p) => (&mut p.linear, Some(&mut p.pool)),
        };
        for gate in linear.gates.iter_mut() {
            out.push(&mut gate.w_x);
            out.push(&mut gate.w_h);
            out.push(&mut gate.bias);
        }
        if let Some(pool) = pool {
            out.push(&mut pool.w_x);
            out.push(&mut pool.w_h);
            for t in pool.integrate.iter_mut() {
                out.push(t);
            }
        }
        out
    }
}
