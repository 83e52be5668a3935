//! Batched forward passes recorded on a [`Tape`], losses, and
//! backpropagation through time.

use serde::{Deserialize, Serialize};

use super::head::HeadSpec;
use super::model::Model;
use super::params::CellKind;
use super::CellError;
use crate::numeric::{ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

/// A mini-batch in time-major (regression) or per-example (token) layout.
#[derive(Clone, Debug, PartialEq)]
pub enum Batch {
    /// `inputs[t]` is `B x n`; `targets[t]` is `B x out`.
    Regression {
        inputs: Vec<Tensor>,
        targets: Vec<Tensor>,
        final_only: bool,
    },
    /// Single token sequences with class labels.
    Tokens { sequences: Vec<Vec<usize>>, labels: Vec<usize> },
    /// Sentence pairs with class labels.
    Pairs {
        left: Vec<Vec<usize>>,
        right: Vec<Vec<usize>>,
        labels: Vec<usize>,
    },
}

impl Batch {
    pub fn size(&self) -> usize {
        match self {
            Batch::Regression { inputs, .. } => inputs.first().map_or(0, Tensor::rows),
            Batch::Tokens { labels, .. } | Batch::Pairs { labels, .. } => labels.len(),
        }
    }
}

struct CellVars {
    kind: CellKind,
    gates: [(Var, Var, Var); 4],
    pool: Option<(Var, Var, [Var; 4])>,
}

struct ModelVars {
    embedding: Option<Var>,
    cells: Vec<CellVars>,
    head: Option<(Var, Var)>,
    all: Vec<Var>,
}

fn record_params(tape: &mut Tape, model: &Model, trainable: bool) -> ModelVars {
    let mut all = Vec::new();
    model.visit(&mut |_, _, t| {
        let v = if trainable {
            tape.leaf(t.clone())
        } else {
            tape.constant(t.clone())
        };
        all.push(v);
    });
    let mut it = all.iter().copied();
    let embedding = model.embedding.as_ref().map(|_| it.next().unwrap());
    let cells = model
        .cells
        .iter()
        .map(|cell| {
            let gates = std::array::from_fn(|_| (it.next().unwrap(), it.next().unwrap(), it.next().unwrap()));
            let pool = cell
                .pool()
                .map(|_| (it.next().unwrap(), it.next().unwrap(), std::array::from_fn(|_| it.next().unwrap())));
            CellVars {
                kind: cell.kind(),
                gates,
                pool,
            }
        })
        .collect();
    let head = model.head.as_ref().map(|_| (it.next().unwrap(), it.next().unwrap()));
    debug_assert!(it.next().is_none());
    ModelVars {
        embedding,
        cells,
        head,
        all,
    }
}

fn cell_step(tape: &mut Tape, cv: &CellVars, x: Var, h: Var, c: Var) -> Result<(Var, Var), CellError> {
    let mu = match cv.pool {
        Some((w_x, w_h, _)) => {
            let mu_x = tape.matmul(x, w_x)?;
            let mu_h = tape.matmul_tb(h, w_h)?;
            Some(tape.mul(mu_x, mu_h)?)
        }
        None => None,
    };
    let mut acts = Vec::with_capacity(4);
    for (g, &(w_x, w_h, b)) in cv.gates.iter().enumerate() {
        let wx = tape.matmul_tb(x, w_x)?;
        let wh = tape.matmul_tb(h, w_h)?;
        let s = tape.add(wx, wh)?;
        let linear = tape.add_row(s, b)?;
        let pre = match (cv.kind, &cv.pool, mu) {
            (CellKind::Bilinear, Some((_, _, integrate)), Some(mu)) => {
                let bil = tape.matmul_tb(mu, integrate[g])?;
                tape.add(linear, bil)?
            }
            (CellKind::Shared, _, _) => {
                let bil = tape.mul(wx, wh)?;
                tape.add(linear, bil)?
            }
            _ => linear,
        };
        acts.push(if g == 3 { tape.tanh(pre)? } else { tape.sigmoid(pre)? });
    }
    let (i, f, o, cand) = (acts[0], acts[1], acts[2], acts[3]);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, cand)?;
    let c_new = tape.add(keep, write)?;
    let tc = tape.tanh(c_new)?;
    let h_new = tape.mul(tc, o)?;
    Ok((h_new, c_new))
}

/// `prev + mask * (new - prev)`: rows with mask 0 keep their state.
fn masked(tape: &mut Tape, prev: Var, new: Var, mask: Var) -> Result<Var, CellError> {
    let d = tape.sub(new, prev)?;
    let md = tape.mul(mask, d)?;
    Ok(tape.add(prev, md)?)
}

/// Runs the stack over time-major inputs; returns top hidden state per step.
fn encode(
    tape: &mut Tape,
    mv: &ModelVars,
    model: &Model,
    inputs: &[Var],
    masks: &[Option<Var>],
    batch: usize,
) -> Result<Vec<Var>, CellError> {
    let m = model.config.hidden;
    let layers = mv.cells.len();
    let mut h: Vec<Var> = (0..layers).map(|_| tape.constant(Tensor::zeros(&[batch, m]))).collect();
    let mut c: Vec<Var> = (0..layers).map(|_| tape.constant(Tensor::zeros(&[batch, m]))).collect();
    let mut tops = Vec::with_capacity(inputs.len());
    for (t, &x) in inputs.iter().enumerate() {
        let mut layer_in = x;
        for (l, cv) in mv.cells.iter().enumerate() {
            let (h_new, c_new) = cell_step(tape, cv, layer_in, h[l], c[l])?;
            match masks.get(t).copied().flatten() {
                Some(mask) => {
                    h[l] = masked(tape, h[l], h_new, mask)?;
                    c[l] = masked(tape, c[l], c_new, mask)?;
                }
                None => {
                    h[l] = h_new;
                    c[l] = c_new;
                }
            }
            layer_in = h[l];
        }
        tops.push(layer_in);
    }
    Ok(tops)
}

/// Embeds padded token sequences; returns per-step inputs and masks.
fn token_inputs(tape: &mut Tape, mv: &ModelVars, model: &Model, seqs: &[Vec<usize>]) -> Result<(Vec<Var>, Vec<Option<Var>>), CellError> {
    let table = mv.embedding.ok_or_else(|| CellError::Config("model has no embedding".into()))?;
    let vocab = model.embedding.as_ref().map_or(0, Tensor::rows);
    if seqs.iter().any(Vec::is_empty) {
        return Err(CellError::EmptySequence);
    }
    if let Some(&token) = seqs.iter().flatten().find(|&&t| t >= vocab) {
        return Err(CellError::Token { token, vocab });
    }
    let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let m = model.config.hidden;
    let mut inputs = Vec::with_capacity(max_len);
    let mut masks = Vec::with_capacity(max_len);
    for t in 0..max_len {
        let ids: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
        inputs.push(tape.gather_rows(table, ids)?);
        if seqs.iter().all(|s| t < s.len()) {
            masks.push(None);
        } else {
            let mut mask = Tensor::zeros(&[seqs.len(), m]);
            for (r, s) in seqs.iter().enumerate() {
                if t < s.len() {
                    mask.data_mut()[r * m..(r + 1) * m].iter_mut().for_each(|v| *v = 1.0);
                }
            }
            masks.push(Some(tape.constant(mask)));
        }
    }
    Ok((inputs, masks))
}

fn dense(tape: &mut Tape, mv: &ModelVars, feature: Var) -> Result<Var, CellError> {
    let (w, b) = mv.head.ok_or_else(|| CellError::Config("model has no head".into()))?;
    let z = tape.matmul_tb(feature, w)?;
    Ok(tape.add_row(z, b)?)
}

struct Recorded {
    tape: Tape,
    vars: ModelVars,
    outputs: Vec<Var>,
    loss: Option<Var>,
}

fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var, CellError> {
    let k = tape.value(logits).cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(CellError::Label { label, classes: k });
    }
    let mut onehot = Tensor::zeros(&[labels.len(), k]);
    for (r, &l) in labels.iter().enumerate() {
        onehot.data_mut()[r * k + l] = 1.0;
    }
    let onehot = tape.constant(onehot);
    let logp = tape.log_softmax(logits)?;
    let picked = tape.mul(logp, onehot)?;
    let s = tape.sum(picked)?;
    Ok(tape.scale(s, -1.0 / labels.len() as f64)?)
}

fn record(model: &Model, batch: &Batch, loss: Option<LossKind>, trainable: bool) -> Result<Recorded, CellError> {
    let size = batch.size();
    if size == 0 {
        return Err(CellError::EmptyBatch);
    }
    let mut tape = Tape::new();
    let mv = record_params(&mut tape, model, trainable);
    let (outputs, loss_var) = match (batch, model.config.head) {
        (
            Batch::Regression {
                inputs,
                targets,
                final_only,
            },
            HeadSpec::Regression { .. } | HeadSpec::None,
        ) => {
            if inputs.is_empty() {
                return Err(CellError::EmptySequence);
            }
            let xs: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
            let hs = encode(&mut tape, &mv, model, &xs, &[], size)?;
            let preds = if mv.head.is_some() {
                hs.iter().map(|&h| dense(&mut tape, &mv, h)).collect::<Result<Vec<_>, _>>()?
            } else {
                hs
            };
            let loss_var = match loss {
                None => None,
                Some(LossKind::Mse) => {
                    if targets.len() != preds.len() {
                        return Err(CellError::Config(format!(
                            "{} target steps for {} input steps",
                            targets.len(),
                            preds.len()
                        )));
                    }
                    let first = if *final_only { preds.len() - 1 } else { 0 };
                    let mut total: Option<Var> = None;
                    let mut count = 0usize;
                    for (&p, y) in preds[first..].iter().zip(&targets[first..]) {
                        let y = tape.constant(y.clone());
                        let d = tape.sub(p, y)?;
                        let sq = tape.mul(d, d)?;
                        let s = tape.sum(sq)?;
                        count += tape.value(sq).len();
                        total = Some(match total {
                            Some(acc) => tape.add(acc, s)?,
                            None => s,
                        });
                    }
                    Some(tape.scale(total.expect("at least one step"), 1.0 / count as f64)?)
                }
                Some(other) => return Err(CellError::LossKind(other.as_str(), "regression")),
            };
            (preds, loss_var)
        }
        (Batch::Tokens { sequences, labels }, HeadSpec::Classifier { .. }) => {
            let (xs, masks) = token_inputs(&mut tape, &mv, model, sequences)?;
            let hs = encode(&mut tape, &mv, model, &xs, &masks, size)?;
            let logits = dense(&mut tape, &mv, *hs.last().expect("non-empty"))?;
            let loss_var = match loss {
                None => None,
                Some(LossKind::CrossEntropy) => Some(cross_entropy(&mut tape, logits, labels)?),
                Some(other) => return Err(CellError::LossKind(other.as_str(), "classifier")),
            };
            (vec![logits], loss_var)
        }
        (Batch::Pairs { left, right, labels }, HeadSpec::Siamese { .. }) => {
            if left.len() != right.len() {
                return Err(CellError::Config("pair batch sides differ in size".into()));
            }
            let (xa, ma) = token_inputs(&mut tape, &mv, model, left)?;
            let ha = *encode(&mut tape, &mv, model, &xa, &ma, size)?.last().expect("non-empty");
            let (xb, mb) = token_inputs(&mut tape, &mv, model, right)?;
            let hb = *encode(&mut tape, &mv, model, &xb, &mb, size)?.last().expect("non-empty");
            let prod = tape.mul(ha, hb)?;
            let diff = tape.sub(ha, hb)?;
            let adiff = tape.abs(diff)?;
            let feat = tape.concat(&[ha, hb, prod, adiff])?;
            let logits = dense(&mut tape, &mv, feat)?;
            let loss_var = match loss {
                None => None,
                Some(LossKind::CrossEntropy) => Some(cross_entropy(&mut tape, logits, labels)?),
                Some(other) => return Err(CellError::LossKind(other.as_str(), "siamese")),
            };
            (vec![logits], loss_var)
        }
        (_, head) => return Err(CellError::Config(format!("batch layout is incompatible with head {head:?}"))),
    };
    Ok(Recorded {
        tape,
        vars: mv,
        outputs,
        loss: loss_var,
    })
}

/// Mean batch loss without gradients.
pub fn batch_loss(model: &Model, batch: &Batch, kind: LossKind) -> Result<f64, CellError> {
    let rec = record(model, batch, Some(kind), false)?;
    Ok(rec.tape.value(rec.loss.expect("loss requested")).item())
}

/// Model outputs for a batch: per-timestep predictions (`B x out`) for
/// regression, or one `B x K` logits matrix for token heads.
pub fn predict(model: &Model, batch: &Batch) -> Result<Vec<Tensor>, CellError> {
    let rec = record(model, batch, None, false)?;
    Ok(rec.outputs.iter().map(|&v| rec.tape.value(v).clone()).collect())
}

/// Mean batch loss and its exact gradient w.r.t. every trainable tensor,
/// laid out like [`Model::params`].
pub fn sequence_backward(model: &Model, batch: &Batch, kind: LossKind) -> Result<(f64, ParamSet), CellError> {
    let rec = record(model, batch, Some(kind), true)?;
    let loss_var = rec.loss.expect("loss requested");
    let loss = rec.tape.value(loss_var).item();
    if !loss.is_finite() {
        return Err(CellError::NonFiniteLoss(loss));
    }
    let mut grads = rec.tape.backward(loss_var)?;
    let mut out = ParamSet::new();
    let mut idx = 0;
    model.visit(&mut |name, group, t| {
        let v = rec.vars.all[idx];
        idx += 1;
        let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape()));
        out.push(name, group, g);
    });
    Ok((loss, out))
}
