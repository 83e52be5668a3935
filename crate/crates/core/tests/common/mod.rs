//! Oracles shared by integration targets.

use bilstm::cells::{Batch, Model, SequenceInput};
use bilstm::Tensor;

/// Loss recomputed one sequence at a time with the untaped forward pass.
pub fn reference_loss(model: &Model, batch: &Batch) -> f64 {
    match batch {
        Batch::Regression {
            inputs,
            targets,
            final_only,
        } => {
            let b = inputs[0].rows();
            let t_len = inputs.len();
            let mut total = 0.0;
            let mut count = 0usize;
            for r in 0..b {
                let xs: Vec<Tensor> = inputs.iter().map(|x| Tensor::vector(x.row(r).to_vec())).collect();
                let out = model.sequence_forward(SequenceInput::Vectors(&xs)).unwrap().outputs;
                let first = if *final_only { t_len - 1 } else { 0 };
                for t in first..t_len {
                    for (p, y) in out[t].data().iter().zip(targets[t].row(r)) {
                        total += (p - y) * (p - y);
                        count += 1;
                    }
                }
            }
            total / count as f64
        }
        Batch::Tokens { sequences, labels } => {
            let mut total = 0.0;
            for (s, &l) in sequences.iter().zip(labels) {
                let logits = model.sequence_forward(SequenceInput::Tokens(s)).unwrap().outputs.remove(0);
                total -= log_softmax(logits.data())[l];
            }
            total / labels.len() as f64
        }
        Batch::Pairs { left, right, labels } => {
            let mut total = 0.0;
            for ((a, b), &l) in left.iter().zip(right).zip(labels) {
                let logits = model.sequence_forward(SequenceInput::Pair(a, b)).unwrap().outputs.remove(0);
                total -= log_softmax(logits.data())[l];
            }
            total / labels.len() as f64
        }
    }
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}
