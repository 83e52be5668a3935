use serde::{Deserialize, Serialize};

use crate::numeric::{RngStream, Tensor};

/// Output head attached to the top recurrent layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadSpec {
    /// Bare cell stack; outputs are the hidden states.
    None,
    /// Linear map `out_dim x m` applied at every timestep, no activation.
    Regression { out_dim: usize },
    /// Token embedding, then logits from the final hidden state.
    Classifier { vocab: usize, embed: usize, classes: usize },
    /// Token embedding shared by two sentences; logits from
    /// `[h1, h2, h1 * h2, |h1 - h2|]`.
    Siamese { vocab: usize, embed: usize, classes: usize },
}

impl HeadSpec {
    /// `(vocab, embed)` when the model consumes token ids.
    pub fn embedding(&self) -> Option<(usize, usize)> {
        match *self {
            HeadSpec::Classifier { vocab, embed, .. } | HeadSpec::Siamese { vocab, embed, .. } => Some((vocab, embed)),
            _ => None,
        }
    }

    /// Width of the feature vector the head's dense map consumes.
    pub fn feature_width(&self, m: usize) -> usize {
        match self {
            HeadSpec::Siamese { .. } => 4 * m,
            _ => m,
        }
    }

    pub fn out_dim(&self) -> Option<usize> {
        match *self {
            HeadSpec::None => None,
            HeadSpec::Regression { out_dim } => Some(out_dim),
            HeadSpec::Classifier { classes, .. } | HeadSpec::Siamese { classes, .. } => Some(classes),
        }
    }

    /// Dense map and bias sizes; embedding excluded.
    pub fn dense_param_count(&self, m: usize) -> usize {
        match self.out_dim() {
            Some(k) => k * self.feature_width(m) + k,
            None => 0,
        }
    }

    pub fn embedding_param_count(&self) -> usize {
        self.embedding().map_or(0, |(v, e)| v * e)
    }
}

/// Dense output map `w` (out x feature) and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl HeadParams {
    pub fn zeros(spec: &HeadSpec, m: usize) -> Option<Self> {
        spec.out_dim().map(|k| HeadParams {
            w: Tensor::zeros(&[k, spec.feature_width(m)]),
            b: Tensor::zeros(&[k]),
        })
    }

    pub fn init(spec: &HeadSpec, m: usize, rng: &mut RngStream) -> Option<Self> {
        spec.out_dim().map(|k| {
            let width = spec.feature_width(m);
            HeadParams {
                w: super::params::glorot(k, width, 1.0, rng),
                b: Tensor::zeros(&[k]),
            }
        })
    }
}
