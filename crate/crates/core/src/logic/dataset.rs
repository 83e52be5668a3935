use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::relation::{classify_relation, Relation};
use super::sentence::{generate_sentence, parse, Sentence, Token};
use super::LogicError;
use crate::cells::Batch;
use crate::gauss::Split;
use crate::numeric::rng::streams;
use crate::numeric::RngStream;

const FORMAT: &str = "bilstm-logic";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicSizes {
    /// Pairs per op-count bucket in the training pool, before the 90/10 split.
    pub train_per_bucket: usize,
    pub test_per_bucket: usize,
    pub max_train_ops: usize,
    pub max_test_ops: usize,
}

impl Default for LogicSizes {
    fn default() -> Self {
        // 6 x 6667 ~ 40k training-pool pairs
        Self {
            train_per_bucket: 6667,
            test_per_bucket: 2000,
            max_train_ops: 6,
            max_test_ops: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogicExample {
    pub sentence_a: Sentence,
    pub sentence_b: Sentence,
    pub label: Relation,
    /// Operator count of the bucket the pair was drawn for.
    pub max_ops: usize,
}

impl LogicExample {
    pub fn new(sentence_a: Sentence, sentence_b: Sentence, max_ops: usize) -> Self {
        let label = classify_relation(sentence_a.satisfying_set(), sentence_b.satisfying_set());
        Self {
            sentence_a,
            sentence_b,
            label,
            max_ops,
        }
    }

    pub fn tokens_a(&self) -> Vec<usize> {
        self.sentence_a.token_ids()
    }

    pub fn tokens_b(&self) -> Vec<usize> {
        self.sentence_b.token_ids()
    }
}

/// One sentence has exactly `k` operators, the other a uniform count in
/// `0..=k`; which side gets which is a coin flip.
fn bucket_example(rng: &mut RngStream, k: usize) -> LogicExample {
    let exact = generate_sentence(rng, k);
    let other_ops = rng.below(k as u64 + 1) as usize;
    let other = generate_sentence(rng, other_ops);
    if rng.bernoulli(0.5) {
        LogicExample::new(other, exact, k)
    } else {
        LogicExample::new(exact, other, k)
    }
}

fn example_stream(seed: u64, pool: u64, k: usize, i: usize) -> RngStream {
    RngStream::new(seed, streams::LOGIC_BASE + (pool << 36) + ((k as u64) << 28) + i as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogicDataset {
    pub seed: u64,
    pub sizes: LogicSizes,
    pub train: Vec<LogicExample>,
    pub val: Vec<LogicExample>,
    pub test: Vec<LogicExample>,
}

impl LogicDataset {
    pub fn split(&self, split: Split) -> &[LogicExample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn test_bucket(&self, k: usize) -> Vec<&LogicExample> {
        self.test.iter().filter(|e| e.max_ops == k).collect()
    }

    /// Most frequent training label (ties broken by relation order).
    pub fn majority_label(&self) -> Relation {
        let counts = label_counts(self.train.iter());
        Relation::ALL
            .into_iter()
            .max_by_key(|r| (counts[r.index()], std::cmp::Reverse(r.index())))
            .expect("seven relations")
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.val.is_empty() && self.test.is_empty()
    }
}

pub fn label_counts<'a>(examples: impl Iterator<Item = &'a LogicExample>) -> [usize; 7] {
    let mut counts = [0; 7];
    for e in examples {
        counts[e.label.index()] += 1;
    }
    counts
}

/// Pair batch for a siamese model.
pub fn pair_batch(examples: &[&LogicExample]) -> Batch {
    Batch::Pairs {
        left: examples.iter().map(|e| e.tokens_a()).collect(),
        right: examples.iter().map(|e| e.tokens_b()).collect(),
        labels: examples.iter().map(|e| e.label.index()).collect(),
    }
}

/// Training pool from buckets `1..=max_train_ops`, split 90/10 by a seeded
/// shuffle; test pool from buckets `1..=max_test_ops`.
pub fn build_logic_dataset(seed: u64, sizes: LogicSizes) -> LogicDataset {
    let mut pool = Vec::with_capacity(sizes.train_per_bucket * sizes.max_train_ops);
    for k in 1..=sizes.max_train_ops {
        for i in 0..sizes.train_per_bucket {
            pool.push(bucket_example(&mut example_stream(seed, 0, k, i), k));
        }
    }
    RngStream::new(seed, streams::SPLIT).shuffle(&mut pool);
    let n_train = pool.len() * 9 / 10;
    let val = pool.split_off(n_train);
    let mut test = Vec::with_capacity(sizes.test_per_bucket * sizes.max_test_ops);
    for k in 1..=sizes.max_test_ops {
        for i in 0..sizes.test_per_bucket {
            test.push(bucket_example(&mut example_stream(seed, 1, k, i), k));
        }
    }
    LogicDataset {
        seed,
        sizes,
        train: pool,
        val,
        test,
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    format_version: u32,
    tool_version: String,
    seed: u64,
    vocab: Vec<String>,
    sizes: LogicSizes,
    counts: Counts,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct Counts {
    train: usize,
    val: usize,
    test: usize,
}

#[derive(Serialize, Deserialize)]
struct Line {
    tokens_a: Vec<usize>,
    tokens_b: Vec<usize>,
    label: Relation,
    ops: usize,
    split: Split,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> LogicError {
    LogicError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn save_logic_dataset(ds: &LogicDataset, path: &Path) -> Result<(), LogicError> {
    let header = Header {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        tool_version: crate::VERSION.into(),
        seed: ds.seed,
        vocab: Token::vocab().into_iter().map(String::from).collect(),
        sizes: ds.sizes,
        counts: Counts {
            train: ds.train.len(),
            val: ds.val.len(),
            test: ds.test.len(),
        },
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    writeln!(w, "{}", serde_json::to_string(&header).expect("serializable")).map_err(|e| io_err(path, e))?;
    for split in Split::ALL {
        for e in ds.split(split) {
            let line = Line {
                tokens_a: e.tokens_a(),
                tokens_b: e.tokens_b(),
                label: e.label,
                ops: e.max_ops,
                split,
            };
            writeln!(w, "{}", serde_json::to_string(&line).expect("serializable")).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Loads a dataset file, re-deriving every label from the sentences.
pub fn load_logic_dataset(path: &Path) -> Result<LogicDataset, LogicError> {
    let mut lines = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?).lines();
    let first = lines
        .next()
        .ok_or_else(|| LogicError::Header("empty file".into()))?
        .map_err(|e| io_err(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| LogicError::Header(e.to_string()))?;
    if header.format != FORMAT || header.format_version != FORMAT_VERSION {
        return Err(LogicError::Header(format!(
            "unsupported format {} v{}",
            header.format, header.format_version
        )));
    }
    if header.vocab != Token::vocab() {
        return Err(LogicError::Header("vocabulary differs from this build".into()));
    }
    let mut ds = LogicDataset {
        seed: header.seed,
        sizes: header.sizes,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let text = line.map_err(|e| io_err(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let err = |message: String| LogicError::Line { line: line_no, message };
        let rec: Line = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let a = parse(&rec.tokens_a).map_err(|e| err(e.to_string()))?;
        let b = parse(&rec.tokens_b).map_err(|e| err(e.to_string()))?;
        let example = LogicExample::new(a, b, rec.ops);
        if example.label != rec.label {
            return Err(LogicError::LabelMismatch {
                line: line_no,
                stored: rec.label,
                actual: example.label,
            });
        }
        match rec.split {
            Split::Train => ds.train.push(example),
            Split::Val => ds.val.push(example),
            Split::Test => ds.test.push(example),
        }
    }
    let found = Counts {
        train: ds.train.len(),
        val: ds.val.len(),
        test: ds.test.len(),
    };
    if found != header.counts {
        return Err(LogicError::Header(format!(
            "header declares {:?} examples, file has {found:?}",
            header.counts
        )));
    }
    Ok(ds)
}
