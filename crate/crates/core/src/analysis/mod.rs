//! Bilinear:linear activation ratios, per-token aggregation and highlighted
//! transcripts.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::{CellError, Model, SequenceInput, SequenceTrace, StepTrace};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("trace has no tokens")]
    Untokenized,
    #[error("token {token} outside vocabulary of {vocab}")]
    Token { token: usize, vocab: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// How each gate part is reduced to a scalar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean absolute entry.
    #[default]
    Mean,
    /// Sum of absolute entries.
    Sum,
}

impl Reduction {
    fn apply(self, v: &[f64]) -> f64 {
        let s: f64 = v.iter().map(|x| x.abs()).sum();
        match self {
            Reduction::Sum => s,
            Reduction::Mean if v.is_empty() => 0.0,
            Reduction::Mean => s / v.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepActivation {
    pub token: Option<usize>,
    pub linear_l1: f64,
    pub bilinear_l1: f64,
    /// `None` when `linear_l1` is zero.
    pub ratio: Option<f64>,
}

impl StepActivation {
    pub fn new(token: Option<usize>, linear_l1: f64, bilinear_l1: f64) -> Self {
        let ratio = (linear_l1 != 0.0).then(|| bilinear_l1 / linear_l1);
        Self {
            token,
            linear_l1,
            bilinear_l1,
            ratio,
        }
    }
}

/// Activations for every timestep of one sequence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub steps: Vec<StepActivation>,
}

/// `(linear, bilinear)` activation of one timestep: reduced per gate part,
/// averaged over the four gates and then over layers.
pub fn step_activation(layers: &[StepTrace], reduction: Reduction) -> (f64, f64) {
    let (mut lin, mut bil) = (0.0, 0.0);
    for s in layers {
        lin += s.linear.iter().map(|p| reduction.apply(p.data())).sum::<f64>() / 4.0;
        bil += s.bilinear.iter().map(|p| reduction.apply(p.data())).sum::<f64>() / 4.0;
    }
    let k = layers.len().max(1) as f64;
    (lin / k, bil / k)
}

pub fn trace_activations(trace: &SequenceTrace, reduction: Reduction) -> ActivationTrace {
    let steps = trace
        .steps
        .iter()
        .enumerate()
        .map(|(t, layers)| {
            let (lin, bil) = step_activation(layers, reduction);
            StepActivation::new(trace.tokens.as_ref().map(|ts| ts[t]), lin, bil)
        })
        .collect();
    ActivationTrace { steps }
}

/// One trace per encoded sequence (two for a sentence pair).
pub fn activation_ratios(model: &Model, input: SequenceInput<'_>, reduction: Reduction) -> Result<Vec<ActivationTrace>, AnalysisError> {
    let out = model.sequence_forward(input)?;
    Ok(out.traces.iter().map(|t| trace_activations(t, reduction)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub token: usize,
    pub symbol: String,
    pub count: usize,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenTable {
    /// Sorted by mean ratio, descending; ties by token id.
    pub rows: Vec<TokenRow>,
    /// Occurrences excluded because their ratio is undefined.
    pub missing: usize,
    /// Sum of all defined per-occurrence ratios.
    pub ratio_sum: f64,
}

impl TokenTable {
    pub fn row(&self, symbol: &str) -> Option<&TokenRow> {
        self.rows.iter().find(|r| r.symbol == symbol)
    }

    /// `|sum(mean * count) - sum(ratios)|`.
    pub fn conservation_gap(&self) -> f64 {
        let rebuilt: f64 = self.rows.iter().map(|r| r.mean_ratio * r.count as f64).sum();
        (rebuilt - self.ratio_sum).abs()
    }
}

/// Per-token arithmetic mean of the ratio over all occurrences.
pub fn aggregate_by_token(traces: &[ActivationTrace], vocab: &[&str]) -> Result<TokenTable, AnalysisError> {
    let mut sums = vec![0.0; vocab.len()];
    let mut counts = vec![0usize; vocab.len()];
    let (mut missing, mut ratio_sum) = (0, 0.0);
    for step in traces.iter().flat_map(|t| &t.steps) {
        let token = step.token.ok_or(AnalysisError::Untokenized)?;
        if token >= vocab.len() {
            return Err(AnalysisError::Token {
                token,
                vocab: vocab.len(),
            });
        }
        match step.ratio {
            Some(r) => {
                sums[token] += r;
                counts[token] += 1;
                ratio_sum += r;
            }
            None => missing += 1,
        }
    }
    let mut rows: Vec<TokenRow> = (0..vocab.len())
        .filter(|&k| counts[k] > 0)
        .map(|k| TokenRow {
            token: k,
            symbol: vocab[k].to_string(),
            count: counts[k],
            mean_ratio: sums[k] / counts[k] as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.mean_ratio.total_cmp(&a.mean_ratio).then(a.token.cmp(&b.token)));
    Ok(TokenTable { rows, missing, ratio_sum })
}

pub fn write_token_table(table: &TokenTable, path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["token", "count", "mean_ratio"]).map_err(|e| io_err(path, e))?;
    for r in &table.rows {
        w.write_record([r.symbol.clone(), r.count.to_string(), r.mean_ratio.to_string()])
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub const BUCKETS: usize = 5;

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Corpus-level 20/40/60/80 percentile thresholds of the defined ratios.
pub fn bucket_thresholds(traces: &[ActivationTrace]) -> Vec<f64> {
    let mut all: Vec<f64> = traces.iter().flat_map(|t| &t.steps).filter_map(|s| s.ratio).collect();
    if all.is_empty() {
        return Vec::new();
    }
    all.sort_by(f64::total_cmp);
    (1..BUCKETS).map(|k| quantile(&all, k as f64 / BUCKETS as f64)).collect()
}

/// Number of thresholds strictly below `ratio`, in `0..BUCKETS`.
pub fn bucket_of(ratio: f64, thresholds: &[f64]) -> usize {
    thresholds.iter().filter(|&&q| ratio > q).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub token: String,
    pub ratio: Option<f64>,
    pub bucket: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub thresholds: Vec<f64>,
    /// One line per sequence.
    pub lines: Vec<Vec<TranscriptEntry>>,
}

pub fn highlight_transcript(traces: &[ActivationTrace], vocab: &[&str]) -> Result<Transcript, AnalysisError> {
    let thresholds = bucket_thresholds(traces);
    let mut lines = Vec::with_capacity(traces.len());
    for t in traces {
        let mut line = Vec::with_capacity(t.steps.len());
        for s in &t.steps {
            let token = s.token.ok_or(AnalysisError::Untokenized)?;
            let symbol = vocab.get(token).ok_or(AnalysisError::Token {
                token,
                vocab: vocab.len(),
            })?;
            line.push(TranscriptEntry {
                token: symbol.to_string(),
                ratio: s.ratio,
                bucket: s.ratio.map(|r| bucket_of(r, &thresholds)),
            });
        }
        lines.push(line);
    }
    Ok(Transcript { thresholds, lines })
}

impl Transcript {
    /// Tokens wrapped as `<bK>tok</bK>`; undefined ratios as `<b?>tok</b?>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            let words: Vec<String> = line
                .iter()
                .map(|e| {
                    let tag = e.bucket.map_or("?".to_string(), |b| b.to_string());
                    format!("<b{tag}>{}</b{tag}>", e.token)
                })
                .collect();
            let _ = writeln!(out, "{}", words.join(" "));
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), AnalysisError> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
        for e in self.lines.iter().flatten() {
            writeln!(w, "{}", serde_json::to_string(e).expect("serializable")).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}
