use bilstm::analysis::{
    activation_ratios, aggregate_by_token, highlight_transcript, step_activation, write_token_table, Reduction, StepActivation,
};
use bilstm::cells::{CellParams, HeadSpec, Model, ModelConfig, SequenceInput, StepTrace};
use bilstm::logic::Token;
use bilstm::{RngStream, Tensor};

fn matvec(w: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|i| w.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

/// Rebuilds both pre-activation parts from raw weights and the recorded
/// inputs and hidden states, then reduces them.
fn reconstruct(model: &Model, tokens: &[usize]) -> Vec<(f64, f64)> {
    let out = model.sequence_forward(SequenceInput::Tokens(tokens)).unwrap();
    let trace = &out.traces[0];
    let emb = model.embedding.as_ref().unwrap();
    let m = model.config.hidden;
    let mut result = Vec::new();
    for (t, layers) in trace.steps.iter().enumerate() {
        let (mut lin_acc, mut bil_acc) = (0.0, 0.0);
        for (l, cell) in model.cells.iter().enumerate() {
            let x: Vec<f64> = if l == 0 {
                emb.row(tokens[t]).to_vec()
            } else {
                layers[l - 1].h.data().to_vec()
            };
            let h: Vec<f64> = if t == 0 { vec![0.0; m] } else { trace.steps[t - 1][l].h.data().to_vec() };
            let lin_params = match cell {
                CellParams::Linear(p) => p,
                CellParams::Bilinear(p) => &p.linear,
                CellParams::Shared(p) => &p.linear,
            };
            let mu: Option<Vec<f64>> = match cell {
                CellParams::Bilinear(p) => {
                    let c = p.pool.c;
                    let left: Vec<f64> = (0..c).map(|k| (0..x.len()).map(|i| x[i] * p.pool.w_x.get2(i, k)).sum()).collect();
                    let right = matvec(&p.pool.w_h, &h);
                    Some(left.iter().zip(&right).map(|(a, b)| a * b).collect())
                }
                _ => None,
            };
            for (g, gate) in lin_params.gates.iter().enumerate() {
                let wx = matvec(&gate.w_x, &x);
                let wh = matvec(&gate.w_h, &h);
                let lin: Vec<f64> = (0..m).map(|i| wx[i] + wh[i] + gate.bias.data()[i]).collect();
                let bil: Vec<f64> = match (cell, &mu) {
                    (CellParams::Bilinear(p), Some(mu)) => matvec(&p.pool.integrate[g], mu),
                    (CellParams::Shared(_), _) => wx.iter().zip(&wh).map(|(a, b)| a * b).collect(),
                    _ => vec![0.0; m],
                };
                lin_acc += mean_abs(&lin) / 4.0;
                bil_acc += mean_abs(&bil) / 4.0;
            }
        }
        let k = model.cells.len() as f64;
        result.push((lin_acc / k, bil_acc / k));
    }
    result
}

fn token_model(cfg: ModelConfig, seed: u64) -> Model {
    Model::init(cfg, seed).unwrap()
}

fn classifier() -> HeadSpec {
    HeadSpec::Classifier {
        vocab: 12,
        embed: 5,
        classes: 7,
    }
}

fn random_tokens(seed: u64, len: usize) -> Vec<usize> {
    let mut rng = RngStream::new(seed, 99);
    (0..len).map(|_| rng.below(11) as usize).collect()
}

#[test]
fn reconstruction_matches_traces() {
    let mut configs = vec![
        ModelConfig::bilinear(5, 6, 3, classifier()),
        ModelConfig::shared(5, 6, classifier()),
        ModelConfig::linear(5, 6, classifier()),
    ];
    let mut deep = ModelConfig::bilinear(5, 6, 3, classifier());
    deep.layers = 2;
    configs.push(deep);
    for (k, cfg) in configs.into_iter().enumerate() {
        for seed in 0..5 {
            let model = token_model(cfg, seed);
            let tokens = random_tokens(seed + 10 * k as u64, 9);
            let got = &activation_ratios(&model, SequenceInput::Tokens(&tokens), Reduction::Mean).unwrap()[0];
            let want = reconstruct(&model, &tokens);
            for (s, (lin, bil)) in got.steps.iter().zip(want) {
                assert!((s.linear_l1 - lin).abs() <= 1e-12, "{k}: {} vs {lin}", s.linear_l1);
                assert!((s.bilinear_l1 - bil).abs() <= 1e-12, "{k}: {} vs {bil}", s.bilinear_l1);
                assert_eq!(s.ratio, Some(s.bilinear_l1 / s.linear_l1));
            }
        }
    }
}

#[test]
fn linear_cell_and_zero_integration_give_zero_ratios() {
    let tokens = random_tokens(1, 7);
    let linear = token_model(ModelConfig::linear(5, 6, classifier()), 2);
    let t = &activation_ratios(&linear, SequenceInput::Tokens(&tokens), Reduction::Mean).unwrap()[0];
    assert!(t.steps.iter().all(|s| s.bilinear_l1 == 0.0 && s.ratio == Some(0.0)));

    let mut model = token_model(ModelConfig::bilinear(5, 6, 3, classifier()), 2);
    if let CellParams::Bilinear(p) = &mut model.cells[0] {
        for w in &mut p.pool.integrate {
            *w = Tensor::zeros(w.shape());
        }
    }
    let t = &activation_ratios(&model, SequenceInput::Tokens(&tokens), Reduction::Mean).unwrap()[0];
    assert!(t.steps.iter().all(|s| s.ratio == Some(0.0)));
}

#[test]
fn equal_parts_give_unit_ratio() {
    let part = |k: f64| Tensor::vector(vec![k, -2.0 * k, 0.5]);
    let parts = [part(1.0), part(-3.0), part(0.25), part(7.0)];
    let trace = StepTrace {
        linear: parts.clone(),
        bilinear: parts.clone(),
        pool: Tensor::zeros(&[0]),
        gates: parts.clone(),
        h: part(0.0),
        c: part(0.0),
    };
    let (lin, bil) = step_activation(&[trace.clone(), trace], Reduction::Mean);
    assert_eq!(lin, bil);
    assert_eq!(StepActivation::new(None, lin, bil).ratio, Some(1.0));
}

#[test]
fn sum_reduction_rescales_both_parts() {
    let model = token_model(ModelConfig::bilinear(5, 6, 3, classifier()), 5);
    let tokens = random_tokens(5, 6);
    let mean = &activation_ratios(&model, SequenceInput::Tokens(&tokens), Reduction::Mean).unwrap()[0];
    let sum = &activation_ratios(&model, SequenceInput::Tokens(&tokens), Reduction::Sum).unwrap()[0];
    for (a, b) in mean.steps.iter().zip(&sum.steps) {
        assert!((b.linear_l1 - 6.0 * a.linear_l1).abs() < 1e-12);
        assert!((b.ratio.unwrap() - a.ratio.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn corpus_aggregation_and_outputs() {
    let model = token_model(ModelConfig::bilinear(5, 6, 3, classifier()), 6);
    let vocab = Token::vocab();
    let traces: Vec<_> = (0..20)
        .map(|s| {
            let tokens = random_tokens(100 + s, 8);
            activation_ratios(&model, SequenceInput::Tokens(&tokens), Reduction::Mean).unwrap().remove(0)
        })
        .collect();
    let table = aggregate_by_token(&traces, &vocab).unwrap();
    assert_eq!(table.rows.iter().map(|r| r.count).sum::<usize>(), 160);
    assert!(table.rows.windows(2).all(|w| w[0].mean_ratio >= w[1].mean_ratio));
    assert!(table.conservation_gap() <= 1e-12 * table.ratio_sum);

    let tr = highlight_transcript(&traces, &vocab).unwrap();
    assert_eq!(tr.thresholds.len(), 4);
    assert_eq!(tr, highlight_transcript(&traces, &vocab).unwrap());
    let per_bucket = (0..5).map(|b| tr.lines.iter().flatten().filter(|e| e.bucket == Some(b)).count());
    assert!(per_bucket.into_iter().all(|c| c == 32));

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("ratios.csv");
    write_token_table(&table, &csv_path).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("token,count,mean_ratio\n"));
    assert_eq!(text.lines().count(), table.rows.len() + 1);
    let jsonl = dir.path().join("t.jsonl");
    tr.write_jsonl(&jsonl).unwrap();
    let first: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&jsonl).unwrap().lines().next().unwrap()).unwrap();
    assert!(first["token"].is_string() && first["ratio"].is_number() && first["bucket"].is_number());
}

#[test]
fn siamese_pair_gives_two_traces() {
    let head = HeadSpec::Siamese {
        vocab: 12,
        embed: 5,
        classes: 7,
    };
    let model = token_model(ModelConfig::bilinear(5, 6, 3, head), 7);
    let (a, b) = (random_tokens(1, 4), random_tokens(2, 6));
    let traces = activation_ratios(&model, SequenceInput::Pair(&a, &b), Reduction::Mean).unwrap();
    assert_eq!(traces.len(), 2);
    assert_eq!(traces[1].steps.len(), 6);
    assert_eq!(traces[0].steps.iter().map(|s| s.token.unwrap()).collect::<Vec<_>>(), a);
}
