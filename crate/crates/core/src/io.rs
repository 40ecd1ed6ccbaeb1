//! The `.sptn` text format and converters from simple JSON/CSV dumps.
//!
//! ```text
//! {"order":2,"shape":[2,2],"count":2,"kind":"sparse","name":"demo"}
//! 0 1 0.5
//! 1 0 -2.25
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a write/read cycle is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape, SparseTensor};

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: malformed entry: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: index {index:?} out of bounds for shape {dims:?}")]
    IndexOutOfBounds {
        line: usize,
        index: Vec<usize>,
        dims: Vec<usize>,
    },
    #[error("line {line}: duplicate index {index:?}")]
    DuplicateIndex { line: usize, index: Vec<usize> },
    #[error("line {line}: non-finite value")]
    NonFiniteValue { line: usize },
    #[error("header announces {expected} entries, file has {found}")]
    CountMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    order: usize,
    shape: Vec<usize>,
    count: usize,
    kind: TensorKind,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Sparse(SparseTensor),
    Dense(DenseTensor),
}

impl TensorData {
    pub fn shape(&self) -> &Shape {
        match self {
            TensorData::Sparse(s) => s.shape(),
            TensorData::Dense(d) => d.shape(),
        }
    }

    pub fn kind(&self) -> TensorKind {
        match self {
            TensorData::Sparse(_) => TensorKind::Sparse,
            TensorData::Dense(_) => TensorKind::Dense,
        }
    }

    /// Observed entries: the sparse tensor itself, or every entry of a dense one.
    pub fn to_sparse(&self) -> SparseTensor {
        match self {
            TensorData::Sparse(s) => s.clone(),
            TensorData::Dense(d) => d.to_sparse(),
        }
    }
}

/// A tensor together with its file-level metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SptnFile {
    pub name: String,
    pub provenance: Option<serde_json::Value>,
    pub tensor: TensorData,
}

impl SptnFile {
    pub fn new(name: impl Into<String>, tensor: TensorData) -> Self {
        Self {
            name: name.into(),
            provenance: None,
            tensor,
        }
    }
}

/// Shortest round-trip decimal form of a value.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

pub fn encode(file: &SptnFile) -> String {
    let shape = file.tensor.shape();
    let count = match &file.tensor {
        TensorData::Sparse(s) => s.len(),
        TensorData::Dense(d) => d.values().len(),
    };
    let header = Header {
        order: shape.order(),
        shape: shape.dims().to_vec(),
        count,
        kind: file.tensor.kind(),
        name: file.name.clone(),
        provenance: file.provenance.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    let mut push_line = |index: &[usize], value: f64| {
        for i in index {
            out.push_str(&i.to_string());
            out.push(' ');
        }
        out.push_str(&format_value(value));
        out.push('\n');
    };
    match &file.tensor {
        TensorData::Sparse(s) => {
            for (idx, v) in s.iter() {
                push_line(idx, v);
            }
        }
        TensorData::Dense(d) => {
            let mut idx = vec![0; shape.order()];
            for (flat, &v) in d.values().iter().enumerate() {
                shape.unravel_into(flat, &mut idx);
                push_line(&idx, v);
            }
        }
    }
    out
}

pub fn decode(text: &str) -> Result<SptnFile> {
    let mut lines = text.split('\n');
    let first = lines
        .next()
        .filter(|l| !l.trim().is_empty())
        .ok_or_else(|| FormatError::MalformedHeader("missing header line".into()))?;
    let header: Header = serde_json::from_str(first)
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    if header.order != header.shape.len() {
        return Err(FormatError::MalformedHeader(format!(
            "order {} does not match shape {:?}",
            header.order, header.shape
        ))
        .into());
    }
    let shape = Shape::new(header.shape.clone())
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;

    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(header.count);
    let mut line_of: Vec<usize> = Vec::with_capacity(header.count);
    let mut idx = Vec::with_capacity(shape.order());
    for (offset, line) in lines.enumerate() {
        let lineno = offset + 2;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        idx.clear();
        for _ in 0..shape.order() {
            let tok = fields.next().ok_or_else(|| FormatError::MalformedLine {
                line: lineno,
                reason: "too few fields".into(),
            })?;
            let i: usize = tok.parse().map_err(|_| FormatError::MalformedLine {
                line: lineno,
                reason: format!("bad index {tok:?}"),
            })?;
            idx.push(i);
        }
        let tok = fields.next().ok_or_else(|| FormatError::MalformedLine {
            line: lineno,
            reason: "missing value".into(),
        })?;
        if fields.next().is_some() {
            return Err(FormatError::MalformedLine {
                line: lineno,
                reason: "too many fields".into(),
            }
            .into());
        }
        let value: f64 = tok.parse().map_err(|_| FormatError::MalformedLine {
            line: lineno,
            reason: format!("bad value {tok:?}"),
        })?;
        if !value.is_finite() {
            return Err(FormatError::NonFiniteValue { line: lineno }.into());
        }
        if !shape.contains(&idx) {
            return Err(FormatError::IndexOutOfBounds {
                line: lineno,
                index: idx.clone(),
                dims: shape.dims().to_vec(),
            }
            .into());
        }
        entries.push((shape.flat_unchecked(&idx), value));
        line_of.push(lineno);
    }
    if entries.len() != header.count {
        return Err(FormatError::CountMismatch {
            expected: header.count,
            found: entries.len(),
        }
        .into());
    }

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by_key(|&k| entries[k].0);
    if let Some(w) = order.windows(2).find(|w| entries[w[0]].0 == entries[w[1]].0) {
        let later = w[0].max(w[1]);
        return Err(FormatError::DuplicateIndex {
            line: line_of[later],
            index: shape.unravel(entries[later].0),
        }
        .into());
    }
    let sorted: Vec<(usize, f64)> = order.into_iter().map(|k| entries[k]).collect();

    let tensor = match header.kind {
        TensorKind::Sparse => {
            let (flat, values) = sorted.into_iter().unzip();
            TensorData::Sparse(SparseTensor::from_sorted_flat(shape, flat, values))
        }
        TensorKind::Dense => {
            if header.count != shape.numel() {
                return Err(FormatError::CountMismatch {
                    expected: shape.numel(),
                    found: header.count,
                }
                .into());
            }
            let values = sorted.into_iter().map(|(_, v)| v).collect();
            TensorData::Dense(DenseTensor::new(shape, values)?)
        }
    };
    Ok(SptnFile {
        name: header.name,
        provenance: header.provenance,
        tensor,
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<SptnFile> {
    decode(&fs::read_to_string(path)?)
}

pub fn write_tensor(path: impl AsRef<Path>, file: &SptnFile) -> Result<()> {
    write_atomic(path, encode(file).as_bytes())
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonDump {
    #[serde(default)]
    name: Option<String>,
    shape: Vec<usize>,
    #[serde(default)]
    entries: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    values: Option<Vec<f64>>,
}

fn as_index(x: f64, line: usize) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x < usize::MAX as f64 {
        Ok(x as usize)
    } else {
        Err(FormatError::MalformedLine {
            line,
            reason: format!("index {x} is not a non-negative integer"),
        }
        .into())
    }
}

/// Converts `{"shape":[..], "entries":[[i1,..,iN,v],..]}` (sparse) or
/// `{"shape":[..], "values":[..]}` (dense, row-major).
pub fn convert_json(text: &str) -> Result<SptnFile> {
    let dump: JsonDump = serde_json::from_str(text)?;
    let shape = Shape::new(dump.shape)?;
    let name = dump.name.unwrap_or_default();
    let tensor = match (dump.entries, dump.values) {
        (Some(entries), None) => {
            let n = shape.order();
            let mut out = Vec::with_capacity(entries.len());
            for (k, row) in entries.into_iter().enumerate() {
                if row.len() != n + 1 {
                    return Err(FormatError::MalformedLine {
                        line: k + 1,
                        reason: format!("expected {} numbers, found {}", n + 1, row.len()),
                    }
                    .into());
                }
                let idx = row[..n]
                    .iter()
                    .map(|&x| as_index(x, k + 1))
                    .collect::<Result<Vec<_>>>()?;
                out.push((idx, row[n]));
            }
            TensorData::Sparse(SparseTensor::from_entries(shape, out)?)
        }
        (None, Some(values)) => TensorData::Dense(DenseTensor::new(shape, values)?),
        _ => {
            return Err(Error::InvalidArgument(
                "JSON dump needs exactly one of `entries` or `values`".into(),
            ))
        }
    };
    Ok(SptnFile::new(name, tensor))
}

/// Converts CSV rows `i1,..,iN,value` (one optional header row) into a sparse
/// tensor. Without an explicit shape, each mode size is the largest index + 1.
pub fn convert_csv(text: &str, shape: Option<Vec<usize>>) -> Result<SptnFile> {
    let mut rows: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut width = None;
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if k == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if *width.get_or_insert(fields.len()) != fields.len() || fields.len() < 2 {
            return Err(FormatError::MalformedLine {
                line: k + 1,
                reason: "inconsistent column count".into(),
            }
            .into());
        }
        let (idx_fields, value_field) = fields.split_at(fields.len() - 1);
        let idx = idx_fields
            .iter()
            .map(|f| {
                f.parse::<usize>().map_err(|_| {
                    Error::from(FormatError::MalformedLine {
                        line: k + 1,
                        reason: format!("bad index {f:?}"),
                    })
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let value: f64 = value_field[0].parse().map_err(|_| FormatError::MalformedLine {
            line: k + 1,
            reason: format!("bad value {:?}", value_field[0]),
        })?;
        rows.push((idx, value));
    }
    let dims = match shape {
        Some(d) => d,
        None => {
            let order = width.ok_or(Error::Empty("CSV rows"))? - 1;
            (0..order)
                .map(|n| rows.iter().map(|r| r.0[n]).max().unwrap_or(0) + 1)
                .collect()
        }
    };
    let tensor = SparseTensor::from_entries(Shape::new(dims)?, rows)?;
    Ok(SptnFile::new("", TensorData::Sparse(tensor)))
}
