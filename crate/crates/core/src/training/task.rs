//! Adapters between datasets and the training loop, plus evaluation.

use serde::{Deserialize, Serialize};

use crate::cells::{predict, Batch, CellError, LossKind, Model};
use crate::gauss::{GaussDataset, Split};
use crate::logic::{pair_batch, LogicDataset, LogicExample};
use crate::numeric::Tensor;

const EVAL_BATCH: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub ops: usize,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratifiedAccuracy {
    pub buckets: Vec<BucketAccuracy>,
    /// Accuracy over all examples (buckets weighted by size).
    pub overall: f64,
}

/// Metrics on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_timestep: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_bucket: Option<StratifiedAccuracy>,
}

impl EvalMetrics {
    /// Model-selection score; larger is better.
    pub fn score(&self) -> f64 {
        self.accuracy.unwrap_or(-self.loss)
    }
}

pub trait Task {
    fn loss_kind(&self) -> LossKind;
    fn train_len(&self) -> usize;
    /// Batch of training examples by position in the training split.
    fn train_batch(&self, positions: &[usize]) -> Batch;
    fn evaluate(&self, model: &Model, split: Split) -> Result<EvalMetrics, CellError>;
}

/// Gaussian regression task.
pub struct GaussTask<'a> {
    pub data: &'a GaussDataset,
    pub final_only: bool,
    rows: [Vec<usize>; 3],
}

impl<'a> GaussTask<'a> {
    pub fn new(data: &'a GaussDataset, final_only: bool) -> Self {
        let rows = Split::ALL.map(|s| data.indices(s));
        Self { data, final_only, rows }
    }

    pub fn rows(&self, split: Split) -> &[usize] {
        &self.rows[split as usize]
    }
}

impl Task for GaussTask<'_> {
    fn loss_kind(&self) -> LossKind {
        LossKind::Mse
    }

    fn train_len(&self) -> usize {
        self.rows(Split::Train).len()
    }

    fn train_batch(&self, positions: &[usize]) -> Batch {
        let train = self.rows(Split::Train);
        let rows: Vec<usize> = positions.iter().map(|&p| train[p]).collect();
        self.data.batch(&rows, self.final_only)
    }

    fn evaluate(&self, model: &Model, split: Split) -> Result<EvalMetrics, CellError> {
        let per_t = per_timestep_error(model, self.data, self.rows(split))?;
        let loss = if self.final_only {
            *per_t.last().unwrap_or(&0.0)
        } else {
            per_t.iter().sum::<f64>() / per_t.len().max(1) as f64
        };
        Ok(EvalMetrics {
            loss,
            accuracy: None,
            per_timestep: Some(per_t),
            per_bucket: None,
        })
    }
}

/// What the per-timestep error is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truth {
    /// The exact conditional mean (the training target).
    ConditionalMean,
    /// The realized unobserved values.
    Realized,
}

/// Predictor for [`gauss_per_timestep`].
#[derive(Clone, Copy, Debug)]
pub enum GaussPredictor<'a> {
    Model(&'a Model),
    /// Exact conditional means.
    Oracle,
    Zero,
}

/// MSE per timestep `t = 1..=T` over `rows` and output dimensions.
pub fn gauss_per_timestep(
    data: &GaussDataset,
    rows: &[usize],
    predictor: GaussPredictor<'_>,
    truth: Truth,
) -> Result<Vec<f64>, CellError> {
    let (steps, d_y) = (data.spec.timesteps, data.spec.d_y);
    let mut sums = vec![0.0; steps];
    for chunk in rows.chunks(EVAL_BATCH) {
        let batch = data.batch(chunk, false);
        let Batch::Regression { targets, .. } = &batch else {
            unreachable!("gauss batches are regression batches")
        };
        let preds: Vec<Tensor> = match predictor {
            GaussPredictor::Model(m) => predict(m, &batch)?,
            GaussPredictor::Oracle => targets.clone(),
            GaussPredictor::Zero => vec![Tensor::zeros(&[chunk.len(), d_y]); steps],
        };
        for (t, p) in preds.iter().enumerate() {
            if p.shape() != [chunk.len(), d_y] {
                return Err(CellError::Shape {
                    what: "prediction",
                    expected: vec![chunk.len(), d_y],
                    got: p.shape().to_vec(),
                });
            }
            for (r, &row) in chunk.iter().enumerate() {
                let want: &[f64] = match truth {
                    Truth::ConditionalMean => targets[t].row(r),
                    Truth::Realized => data.unobserved(row),
                };
                sums[t] += p.row(r).iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
        }
    }
    let denom = (rows.len() * d_y).max(1) as f64;
    Ok(sums.into_iter().map(|s| s / denom).collect())
}

/// Test MSE against the conditional-mean targets, per timestep.
pub fn per_timestep_error(model: &Model, data: &GaussDataset, rows: &[usize]) -> Result<Vec<f64>, CellError> {
    gauss_per_timestep(data, rows, GaussPredictor::Model(model), Truth::ConditionalMean)
}

/// Sentence-pair relation task.
pub struct LogicTask<'a> {
    pub data: &'a LogicDataset,
}

impl<'a> LogicTask<'a> {
    pub fn new(data: &'a LogicDataset) -> Self {
        Self { data }
    }
}

/// Predicted class and negative log-likelihood of the true label per
/// example, in order.
fn classify(model: &Model, examples: &[&LogicExample]) -> Result<(Vec<usize>, Vec<f64>), CellError> {
    let mut classes = Vec::with_capacity(examples.len());
    let mut nll = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let logits = predict(model, &pair_batch(chunk))?.remove(0);
        for (r, e) in chunk.iter().enumerate() {
            let row = logits.row(r);
            classes.push((0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b }));
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            nll.push(lse - row[e.label.index()]);
        }
    }
    Ok((classes, nll))
}

/// Predicted class per example, in order.
pub fn predict_labels(model: &Model, examples: &[&LogicExample]) -> Result<Vec<usize>, CellError> {
    Ok(classify(model, examples)?.0)
}

/// Per-bucket accuracy of `predicted` against the examples' labels.
pub fn stratified_accuracy(examples: &[&LogicExample], predicted: &[usize]) -> StratifiedAccuracy {
    let max_ops = examples.iter().map(|e| e.max_ops).max().unwrap_or(0);
    let mut hits = vec![0usize; max_ops + 1];
    let mut counts = vec![0usize; max_ops + 1];
    for (e, &p) in examples.iter().zip(predicted) {
        counts[e.max_ops] += 1;
        hits[e.max_ops] += usize::from(e.label.index() == p);
    }
    let buckets = (0..=max_ops)
        .filter(|&k| counts[k] > 0)
        .map(|k| BucketAccuracy {
            ops: k,
            count: counts[k],
            accuracy: hits[k] as f64 / counts[k] as f64,
        })
        .collect();
    let total: usize = counts.iter().sum();
    StratifiedAccuracy {
        buckets,
        overall: if total == 0 { 0.0 } else { hits.iter().sum::<usize>() as f64 / total as f64 },
    }
}

/// Accuracy per operator-count bucket of the test pool.
pub fn length_stratified_accuracy(model: &Model, data: &LogicDataset) -> Result<StratifiedAccuracy, CellError> {
    let examples: Vec<&LogicExample> = data.test.iter().collect();
    let predicted = predict_labels(model, &examples)?;
    Ok(stratified_accuracy(&examples, &predicted))
}

impl Task for LogicTask<'_> {
    fn loss_kind(&self) -> LossKind {
        LossKind::CrossEntropy
    }

    fn train_len(&self) -> usize {
        self.data.train.len()
    }

    fn train_batch(&self, positions: &[usize]) -> Batch {
        let examples: Vec<&LogicExample> = positions.iter().map(|&p| &self.data.train[p]).collect();
        pair_batch(&examples)
    }

    fn evaluate(&self, model: &Model, split: Split) -> Result<EvalMetrics, CellError> {
        let examples: Vec<&LogicExample> = self.data.split(split).iter().collect();
        if examples.is_empty() {
            return Ok(EvalMetrics {
                loss: 0.0,
                accuracy: Some(0.0),
                per_timestep: None,
                per_bucket: None,
            });
        }
        let (predicted, nll) = classify(model, &examples)?;
        let strat = stratified_accuracy(&examples, &predicted);
        Ok(EvalMetrics {
            loss: nll.iter().sum::<f64>() / examples.len() as f64,
            accuracy: Some(strat.overall),
            per_timestep: None,
            per_bucket: (split == Split::Test).then_some(strat),
        })
    }
}
