use serde::{Deserialize, Serialize};

use super::head::{HeadParams, HeadSpec};
use super::params::{CellKind, CellParams};
use super::step::StepTrace;
use super::CellError;
use crate::numeric::rng::streams;
use crate::numeric::{apply_primitive, GroupKind, ParamSet, Primitive, RngStream, Tensor};

pub const MAX_LAYERS: usize = 3;

/// Shape of a model: cell type, dimensions and head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellKind,
    /// Input width `n` (the embedding width for token heads).
    pub input_dim: usize,
    /// Hidden size `m`.
    pub hidden: usize,
    /// Bilinear pool size `c`; zero for linear and shared-weight cells.
    pub pool: usize,
    #[serde(default = "one")]
    pub layers: usize,
    pub head: HeadSpec,
    /// Group that receives the integration maps `W_mu^g`.
    #[serde(default = "bilinear_group")]
    pub integration_group: GroupKind,
}

fn one() -> usize {
    1
}

fn bilinear_group() -> GroupKind {
    GroupKind::Bilinear
}

impl ModelConfig {
    pub fn new(cell: CellKind, input_dim: usize, hidden: usize, pool: usize, head: HeadSpec) -> Self {
        Self {
            cell,
            input_dim,
            hidden,
            pool,
            layers: 1,
            head,
            integration_group: GroupKind::Bilinear,
        }
    }

    pub fn linear(input_dim: usize, hidden: usize, head: HeadSpec) -> Self {
        Self::new(CellKind::Linear, input_dim, hidden, 0, head)
    }

    pub fn bilinear(input_dim: usize, hidden: usize, pool: usize, head: HeadSpec) -> Self {
        Self::new(CellKind::Bilinear, input_dim, hidden, pool, head)
    }

    pub fn shared(input_dim: usize, hidden: usize, head: HeadSpec) -> Self {
        Self::new(CellKind::Shared, input_dim, hidden, 0, head)
    }

    pub fn validate(&self) -> Result<(), CellError> {
        if self.input_dim == 0 || self.hidden == 0 {
            return Err(CellError::Degenerate {
                n: self.input_dim,
                m: self.hidden,
            });
        }
        if self.layers == 0 || self.layers > MAX_LAYERS {
            return Err(CellError::Config(format!("layers must be in 1..={MAX_LAYERS}, got {}", self.layers)));
        }
        if self.cell != CellKind::Bilinear && self.pool != 0 {
            return Err(CellError::Config(format!("{} cells have no bilinear pool (c = {})", self.cell, self.pool)));
        }
        if !matches!(self.integration_group, GroupKind::Linear | GroupKind::Bilinear) {
            return Err(CellError::Config("integration maps belong to the linear or bilinear group".into()));
        }
        if let Some((vocab, embed)) = self.head.embedding() {
            if embed != self.input_dim {
                return Err(CellError::Config(format!(
                    "embedding width {embed} must equal the cell input width {}",
                    self.input_dim
                )));
            }
            if vocab == 0 {
                return Err(CellError::Config("vocabulary must be non-empty".into()));
            }
        }
        if self.head.out_dim() == Some(0) {
            return Err(CellError::Config("head output width must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden
        }
    }
}

/// Input to [`Model::sequence_forward`].
#[derive(Clone, Copy, Debug)]
pub enum SequenceInput<'a> {
    /// Dense input vectors, one per timestep.
    Vectors(&'a [Tensor]),
    Tokens(&'a [usize]),
    /// Two token sequences for a siamese head.
    Pair(&'a [usize], &'a [usize]),
}

/// Per-timestep traces of one sequence; `steps[t][layer]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceTrace {
    pub tokens: Option<Vec<usize>>,
    pub steps: Vec<Vec<StepTrace>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Regression/bare heads: one output per timestep. Token heads: the logits.
    pub outputs: Vec<Tensor>,
    /// One trace per encoded sequence (two for a siamese pair).
    pub traces: Vec<SequenceTrace>,
}

/// A stack of recurrent cells with optional embedding and head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub cells: Vec<CellParams>,
    pub embedding: Option<Tensor>,
    pub head: Option<HeadParams>,
}

impl Model {
    pub fn zeros(config: ModelConfig) -> Result<Self, CellError> {
        config.validate()?;
        let cells = (0..config.layers)
            .map(|l| CellParams::zeros(config.cell, config.layer_input(l), config.hidden, config.pool))
            .collect();
        Ok(Self {
            config,
            seed: 0,
            cells,
            embedding: config.head.embedding().map(|(v, e)| Tensor::zeros(&[v, e])),
            head: HeadParams::zeros(&config.head, config.hidden),
        })
    }

    /// Glorot-initialized model; the draws come from one stream in
    /// parameter enumeration order.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, CellError> {
        config.validate()?;
        let mut rng = RngStream::new(seed, streams::INIT);
        let embedding = config
            .head
            .embedding()
            .map(|(v, e)| super::params::glorot(v, e, 1.0, &mut rng));
        let cells = (0..config.layers)
            .map(|l| CellParams::init(config.cell, config.layer_input(l), config.hidden, config.pool, &mut rng))
            .collect();
        let head = HeadParams::init(&config.head, config.hidden, &mut rng);
        Ok(Self {
            config,
            seed,
            cells,
            embedding,
            head,
        })
    }

    fn layer_prefix(&self, layer: usize) -> String {
        if self.config.layers == 1 {
            String::new()
        } else {
            format!("layer{layer}.")
        }
    }

    /// Canonical enumeration: embedding, cells bottom-up, head.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, GroupKind, &'a Tensor)) {
        if let Some(e) = &self.embedding {
            f("embedding".into(), GroupKind::Embedding, e);
        }
        for (l, cell) in self.cells.iter().enumerate() {
            cell.visit(&self.layer_prefix(l), self.config.integration_group, f);
        }
        if let Some(h) = &self.head {
            f("head.w".into(), GroupKind::Head, &h.w);
            f("head.b".into(), GroupKind::Head, &h.b);
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(e) = &mut self.embedding {
            out.push(e);
        }
        for cell in &mut self.cells {
            out.extend(cell.tensors_mut());
        }
        if let Some(h) = &mut self.head {
            out.push(&mut h.w);
            out.push(&mut h.b);
        }
        out
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        self.visit(&mut |name, group, t| set.push(name, group, t.clone()));
        set
    }

    /// Names and groups in enumeration order.
    pub fn layout(&self) -> Vec<(String, GroupKind, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, group, t| out.push((name, group, t.shape().to_vec())));
        out
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, t| n += t.len());
        n
    }

    /// Overwrites every tensor from `params`, which must match this
    /// model's layout exactly.
    pub fn load_params(&mut self, params: &ParamSet) -> Result<(), CellError> {
        let layout = self.layout();
        if layout.len() != params.len() {
            return Err(CellError::Layout(format!(
                "expected {} tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, group, shape), entry) in layout.iter().zip(params.iter()) {
            if *name != entry.name || *group != entry.group {
                return Err(CellError::Layout(format!(
                    "expected tensor {name} ({group}), found {} ({})",
                    entry.name, entry.group
                )));
            }
            if shape.as_slice() != entry.tensor.shape() {
                return Err(CellError::Shape {
                    what: "parameter tensor",
                    expected: shape.clone(),
                    got: entry.tensor.shape().to_vec(),
                });
            }
        }
        for (dst, entry) in self.tensors_mut().into_iter().zip(params.iter()) {
            dst.data_mut().copy_from_slice(entry.tensor.data());
        }
        Ok(())
    }

    pub fn from_params(config: ModelConfig, seed: u64, params: &ParamSet) -> Result<Self, CellError> {
        let mut model = Self::zeros(config)?;
        model.seed = seed;
        model.load_params(params)?;
        Ok(model)
    }

    fn embed(&self, token: usize) -> Result<Tensor, CellError> {
        let table = self.embedding.as_ref().ok_or_else(|| CellError::Config("model has no embedding".into()))?;
        if token >= table.rows() {
            return Err(CellError::Token {
                token,
                vocab: table.rows(),
            });
        }
        Ok(Tensor::vector(table.row(token).to_vec()))
    }

    /// Runs the cell stack from a zero state; returns top-layer hidden
    /// states per timestep and the trace.
    pub fn encode(&self, inputs: &[Tensor], tokens: Option<&[usize]>) -> Result<(Vec<Tensor>, SequenceTrace), CellError> {
        if inputs.is_empty() {
            return Err(CellError::EmptySequence);
        }
        let m = self.config.hidden;
        let mut h = vec![Tensor::zeros(&[m]); self.cells.len()];
        let mut c = vec![Tensor::zeros(&[m]); self.cells.len()];
        let mut tops = Vec::with_capacity(inputs.len());
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut layer_in = x.clone();
            let mut layer_traces = Vec::with_capacity(self.cells.len());
            for (l, cell) in self.cells.iter().enumerate() {
                let (h_new, c_new, trace) = cell.step(&layer_in, &h[l], &c[l])?;
                h[l] = h_new;
                c[l] = c_new;
                layer_in = h[l].clone();
                layer_traces.push(trace);
            }
            tops.push(layer_in);
            steps.push(layer_traces);
        }
        Ok((
            tops,
            SequenceTrace {
                tokens: tokens.map(<[usize]>::to_vec),
                steps,
            },
        ))
    }

    fn encode_tokens(&self, tokens: &[usize]) -> Result<(Vec<Tensor>, SequenceTrace), CellError> {
        let inputs = tokens.iter().map(|&t| self.embed(t)).collect::<Result<Vec<_>, _>>()?;
        self.encode(&inputs, Some(tokens))
    }

    fn dense(&self, feature: &Tensor) -> Result<Tensor, CellError> {
        let head = self.head.as_ref().ok_or_else(|| CellError::Config("model has no head".into()))?;
        let z = apply_primitive(&Primitive::MatMul, &[&head.w, feature])?;
        Ok(apply_primitive(&Primitive::Add, &[&z, &head.b])?)
    }

    /// Concatenation `[h1, h2, h1 * h2, |h1 - h2|]`.
    pub fn siamese_features(h1: &Tensor, h2: &Tensor) -> Result<Tensor, CellError> {
        let prod = apply_primitive(&Primitive::Hadamard, &[h1, h2])?;
        let diff = apply_primitive(&Primitive::Subtract, &[h1, h2])?;
        let adiff = apply_primitive(&Primitive::Abs, &[&diff])?;
        Ok(apply_primitive(&Primitive::Concat, &[h1, h2, &prod, &adiff])?)
    }

    /// Unrolled evaluation of one sequence (or sentence pair) from
    /// `h_0 = C_0 = 0`. Regression heads emit an output per timestep,
    /// token heads emit logits from the final state(s).
    pub fn sequence_forward(&self, input: SequenceInput<'_>) -> Result<ForwardOutput, CellError> {
        match (input, self.config.head) {
            (SequenceInput::Vectors(xs), HeadSpec::None) => {
                let (hs, trace) = self.encode(xs, None)?;
                Ok(ForwardOutput {
                    outputs: hs,
                    traces: vec![trace],
                })
            }
            (SequenceInput::Vectors(xs), HeadSpec::Regression { .. }) => {
                let (hs, trace) = self.encode(xs, None)?;
                let outputs = hs.iter().map(|h| self.dense(h)).collect::<Result<Vec<_>, _>>()?;
                Ok(ForwardOutput {
                    outputs,
                    traces: vec![trace],
                })
            }
            (SequenceInput::Tokens(ts), HeadSpec::Classifier { .. }) => {
                let (hs, trace) = self.encode_tokens(ts)?;
                let logits = self.dense(hs.last().expect("non-empty"))?;
                Ok(ForwardOutput {
                    outputs: vec![logits],
                    traces: vec![trace],
                })
            }
            (SequenceInput::Pair(a, b), HeadSpec::Siamese { .. }) => {
                let (ha, ta) = self.encode_tokens(a)?;
                let (hb, tb) = self.encode_tokens(b)?;
                let feat = Self::siamese_features(ha.last().expect("non-empty"), hb.last().expect("non-empty"))?;
                Ok(ForwardOutput {
                    outputs: vec![self.dense(&feat)?],
                    traces: vec![ta, tb],
                })
            }
            (input, head) => Err(CellError::Config(format!(
                "input {} is incompatible with head {head:?}",
                match input {
                    SequenceInput::Vectors(_) => "vectors",
                    SequenceInput::Tokens(_) => "tokens",
                    SequenceInput::Pair(..) => "pair",
                }
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_dimensions_rejected() {
        assert!(matches!(
            Model::zeros(ModelConfig::linear(0, 4, HeadSpec::None)),
            Err(CellError::Degenerate { .. })
        ));
        assert!(Model::zeros(ModelConfig::linear(3, 0, HeadSpec::None)).is_err());
        assert!(Model::zeros(ModelConfig::new(CellKind::Linear, 3, 4, 2, HeadSpec::None)).is_err());
        let bad_embed = ModelConfig::linear(
            8,
            4,
            HeadSpec::Classifier {
                vocab: 5,
                embed: 6,
                classes: 2,
            },
        );
        assert!(Model::zeros(bad_embed).is_err());
    }

    #[test]
    fn params_round_trip_through_param_set() {
        let cfg = ModelConfig::bilinear(3, 4, 2, HeadSpec::Regression { out_dim: 2 });
        let model = Model::init(cfg, 7).unwrap();
        let back = Model::from_params(cfg, 7, &model.params()).unwrap();
        assert_eq!(model, back);
        let other = Model::init(ModelConfig::linear(3, 4, HeadSpec::None), 7).unwrap();
        assert!(Model::from_params(cfg, 7, &other.params()).is_err());
    }

    #[test]
    fn init_conventions() {
        let cfg = ModelConfig::bilinear(6, 5, 3, HeadSpec::Regression { out_dim: 2 });
        let model = Model::init(cfg, 1).unwrap();
        let lin = model.cells[0].linear();
        assert!(lin.gates[1].bias.data().iter().all(|&b| b == 1.0));
        assert!(lin.gates[0].bias.data().iter().all(|&b| b == 0.0));
        let limit = (6.0f64 / 11.0).sqrt();
        assert!(lin.gates[0].w_x.data().iter().all(|v| v.abs() <= limit));
        let pool = model.cells[0].pool().unwrap();
        let int_limit = 0.1 * (6.0f64 / 8.0).sqrt();
        assert!(pool.integrate.iter().all(|t| t.data().iter().all(|v| v.abs() <= int_limit)));
        assert_eq!(model, Model::init(cfg, 1).unwrap());
        assert_ne!(model, Model::init(cfg, 2).unwrap());
    }

    #[test]
    fn groups_follow_term_partition() {
        let cfg = ModelConfig::bilinear(3, 4, 2, HeadSpec::Regression { out_dim: 2 });
        let model = Model::init(cfg, 0).unwrap();
        for (name, group, _) in model.layout() {
            let expected = if name.starts_with("pool") {
                GroupKind::Bilinear
            } else if name.starts_with("head") {
                GroupKind::Head
            } else {
                GroupKind::Linear
            };
            assert_eq!(group, expected, "{name}");
        }
        let mut moved = cfg;
        moved.integration_group = GroupKind::Linear;
        let model = Model::init(moved, 0).unwrap();
        let p = model.params();
        assert_eq!(p.get("pool.integrate.i").unwrap().group, GroupKind::Linear);
        assert_eq!(p.get("pool.w_x").unwrap().group, GroupKind::Bilinear);
    }

    #[test]
    fn single_step_sequence_is_step_plus_head() {
        let cfg = ModelConfig::linear(3, 2, HeadSpec::Regression { out_dim: 1 });
        let model = Model::init(cfg, 3).unwrap();
        let x = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let out = model.sequence_forward(SequenceInput::Vectors(std::slice::from_ref(&x))).unwrap();
        let (h, _, _) = model.cells[0].step(&x, &Tensor::zeros(&[2]), &Tensor::zeros(&[2])).unwrap();
        let head = model.head.as_ref().unwrap();
        let expected = head.w.get2(0, 0) * h.data()[0] + head.w.get2(0, 1) * h.data()[1] + head.b.data()[0];
        assert!((out.outputs[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_siamese_sentences_zero_difference_block() {
        let cfg = ModelConfig::bilinear(
            4,
            3,
            2,
            HeadSpec::Siamese {
                vocab: 6,
                embed: 4,
                classes: 7,
            },
        );
        let model = Model::init(cfg, 9).unwrap();
        let s = [0usize, 3, 5, 1];
        let out = model.sequence_forward(SequenceInput::Pair(&s, &s)).unwrap();
        let h1 = out.traces[0].steps.last().unwrap()[0].h.clone();
        let h2 = out.traces[1].steps.last().unwrap()[0].h.clone();
        let feat = Model::siamese_features(&h1, &h2).unwrap();
        assert_eq!(&feat.data()[9..12], &[0.0, 0.0, 0.0]);
        assert_eq!(out.outputs[0].len(), 7);
    }

    #[test]
    fn empty_sequence_and_bad_tokens() {
        let cfg = ModelConfig::linear(
            2,
            2,
            HeadSpec::Classifier {
                vocab: 3,
                embed: 2,
                classes: 2,
            },
        );
        let model = Model::init(cfg, 0).unwrap();
        assert!(matches!(model.sequence_forward(SequenceInput::Tokens(&[])), Err(CellError::EmptySequence)));
        assert!(matches!(model.sequence_forward(SequenceInput::Tokens(&[3])), Err(CellError::Token { .. })));
        assert!(model.sequence_forward(SequenceInput::Pair(&[0], &[1])).is_err());
    }

    #[test]
    fn stacked_layers_feed_forward() {
        let mut cfg = ModelConfig::bilinear(3, 4, 2, HeadSpec::None);
        cfg.layers = 2;
        let model = Model::init(cfg, 5).unwrap();
        assert!(model.params().get("layer1.pool.w_x").unwrap().tensor.shape() == [4, 2]);
        let xs = vec![Tensor::vector(vec![1.0, 0.0, -1.0]); 3];
        let out = model.sequence_forward(SequenceInput::Vectors(&xs)).unwrap();
        assert_eq!(out.traces[0].steps[0].len(), 2);
        assert_eq!(out.outputs[2], out.traces[0].steps[2][1].h);
    }
}
