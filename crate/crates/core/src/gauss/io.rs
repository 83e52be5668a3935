//! Line-oriented dataset files. Line 1 is a JSON header; each further line
//! is `["<split>", "<base64 row>"]`. `Σ` lives in a sibling `.sigma.json`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{GaussDataset, Split};
use super::{GaussError, GaussTaskSpec};
use crate::numeric::Tensor;
use crate::util::{decode_f64s, digest_f64_slices, encode_f64s};

const FORMAT: &str = "bilstm-gauss";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    format_version: u32,
    tool_version: String,
    spec: GaussTaskSpec,
    sigma_digest: String,
    n_rows: usize,
    sigma_file: String,
}

#[derive(Serialize, Deserialize)]
struct SigmaFile {
    format_version: u32,
    tool_version: String,
    digest: String,
    name: String,
    shape: Vec<usize>,
    data: String,
}

pub fn sigma_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".sigma.json");
    path.with_file_name(name)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GaussError {
    GaussError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn save_dataset(ds: &GaussDataset, path: &Path) -> Result<(), GaussError> {
    let spath = sigma_path(path);
    let digest = ds.sigma_digest();
    let sigma = SigmaFile {
        format_version: FORMAT_VERSION,
        tool_version: crate::VERSION.into(),
        digest: digest.clone(),
        name: "sigma".into(),
        shape: ds.sigma.shape().to_vec(),
        data: encode_f64s(ds.sigma.data()),
    };
    std::fs::write(&spath, serde_json::to_string(&sigma).expect("serializable")).map_err(|e| io_err(&spath, e))?;

    let header = Header {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        tool_version: crate::VERSION.into(),
        spec: ds.spec,
        sigma_digest: digest,
        n_rows: ds.len(),
        sigma_file: spath.file_name().expect("file name").to_string_lossy().into_owned(),
    };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |line: String| writeln!(w, "{line}").map_err(|e| io_err(path, e));
    write(serde_json::to_string(&header).expect("serializable"))?;
    for i in 0..ds.len() {
        write(serde_json::to_string(&(ds.split(i).as_str(), encode_f64s(ds.row(i)))).expect("serializable"))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn load_sigma(path: &Path, expected_digest: &str, d: usize) -> Result<Tensor, GaussError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: SigmaFile = serde_json::from_str(&text).map_err(|e| GaussError::Header(format!("{}: {e}", path.display())))?;
    let data = decode_f64s(&file.data).map_err(|e| GaussError::Header(format!("{}: {e}", path.display())))?;
    let found = digest_f64_slices([data.as_slice()]);
    if found != expected_digest || found != file.digest {
        return Err(GaussError::Digest {
            expected: expected_digest.into(),
            found,
        });
    }
    if file.shape != [d, d] {
        return Err(GaussError::Header(format!("covariance shape {:?}, expected [{d}, {d}]", file.shape)));
    }
    Ok(Tensor::from_vec(file.shape, data)?)
}

pub fn load_dataset(path: &Path) -> Result<GaussDataset, GaussError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| GaussError::Header("empty file".into()))?
        .map_err(|e| io_err(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| GaussError::Header(e.to_string()))?;
    if header.format != FORMAT || header.format_version != FORMAT_VERSION {
        return Err(GaussError::Header(format!(
            "unsupported format {} v{}",
            header.format, header.format_version
        )));
    }
    let spec = header.spec;
    spec.validate()?;
    if header.n_rows != spec.n_samples {
        return Err(GaussError::Header(format!(
            "header declares {} rows but the spec has {} samples",
            header.n_rows, spec.n_samples
        )));
    }
    let d = spec.dim();
    let sigma = load_sigma(&path.with_file_name(&header.sigma_file), &header.sigma_digest, d)?;

    let mut data = Vec::with_capacity(header.n_rows * d);
    let mut splits = Vec::with_capacity(header.n_rows);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row_err = |message: String| GaussError::Row { line: line_no, message };
        let (split, encoded): (String, String) = serde_json::from_str(&line).map_err(|e| row_err(e.to_string()))?;
        let split: Split = split.parse().map_err(row_err)?;
        let values = decode_f64s(&encoded).map_err(|e| row_err(e.to_string()))?;
        if values.len() != d {
            return Err(row_err(format!("row has {} values, expected {d}", values.len())));
        }
        if splits.len() == header.n_rows {
            return Err(row_err(format!("more rows than the {} declared", header.n_rows)));
        }
        data.extend(values);
        splits.push(split);
    }
    if splits.is_empty() {
        return Err(GaussError::MissingSamples);
    }
    if splits.len() < header.n_rows {
        return Err(GaussError::Truncated {
            expected: header.n_rows,
            found: splits.len(),
        });
    }
    let samples = Tensor::from_vec(vec![header.n_rows, d], data)?;
    GaussDataset::from_parts(spec, sigma, samples, splits)
}
