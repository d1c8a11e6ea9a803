//! Embedding containers and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * CSV: one sample per line, comma separated. Lines starting with `#` are
//!   comments, except an optional first line `# dims=<d>` which declares the
//!   dimensionality (needed to represent a matrix with zero rows).
//! * Binary: the 4-byte magic `EMB1`, then `n` and `d` as little-endian `u32`,
//!   then `n * d` little-endian `f32` values in row-major order.
//!
//! Values are held as `f64` in memory. Binary files store `f32`, so saving a
//! matrix whose values are not exactly representable in `f32` rounds them.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use crate::error::{DriftError, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EMB1";
const BINARY_HEADER_LEN: usize = 12;

/// Row-major `rows x dims` matrix of finite values, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dims: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if dims == 0 {
            return Err(DriftError::InvalidConfig(
                "embedding dimensionality must be at least 1".into(),
            ));
        }
        if data.len() != rows * dims {
            return Err(DriftError::InvalidConfig(format!(
                "data length {} does not match {rows}x{dims}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DriftError::NonFinite {
                row: pos / dims,
                col: pos % dims,
            });
        }
        Ok(EmbeddingMatrix { rows, dims, data })
    }

    pub fn empty(dims: usize) -> Result<Self> {
        Self::new(0, dims, Vec::new())
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dims = match rows.first() {
            Some(r) => r.as_ref().len(),
            None => {
                return Err(DriftError::Degenerate(
                    "cannot infer dimensionality from zero rows".into(),
                ))
            }
        };
        let mut data = Vec::with_capacity(rows.len() * dims);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dims {
                return Err(DriftError::DimensionMismatch {
                    expected: dims,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dims, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dims)
    }

    /// Copy of the rows in `range`.
    pub fn slice_rows(&self, range: Range<usize>) -> EmbeddingMatrix {
        assert!(range.end <= self.rows, "row range out of bounds");
        EmbeddingMatrix {
            rows: range.len(),
            dims: self.dims,
            data: self.data[range.start * self.dims..range.end * self.dims].to_vec(),
        }
    }

    /// Copy of the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            rows: indices.len(),
            dims: self.dims,
            data,
        }
    }

    /// Row-wise concatenation, `self` first.
    pub fn concat(&self, other: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        check_dims(self.dims, other.dims)?;
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(EmbeddingMatrix {
            rows: self.rows + other.rows,
            dims: self.dims,
            data,
        })
    }

    /// Column-wise mean over all rows. `None` for an empty matrix.
    pub fn mean_row(&self) -> Option<Vec<f64>> {
        if self.rows == 0 {
            return None;
        }
        let mut acc = vec![0.0; self.dims];
        for r in self.iter_rows() {
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
        let n = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Some(acc)
    }
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(DriftError::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// A reference sample and a target sample of the same dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub reference: EmbeddingMatrix,
    pub target: EmbeddingMatrix,
}

impl DatasetPair {
    pub fn new(reference: EmbeddingMatrix, target: EmbeddingMatrix) -> Result<Self> {
        check_dims(reference.dims(), target.dims())?;
        Ok(DatasetPair { reference, target })
    }

    pub fn dims(&self) -> usize {
        self.reference.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Binary,
    /// Binary if the file starts with the magic bytes, CSV otherwise.
    Auto,
}

pub fn load_embeddings(path: impl AsRef<Path>, format: FileFormat) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DriftError::io(path, e))?;
    let format = match format {
        FileFormat::Auto if bytes.starts_with(BINARY_MAGIC) => FileFormat::Binary,
        FileFormat::Auto => FileFormat::Csv,
        f => f,
    };
    match format {
        FileFormat::Binary => decode_binary(&bytes),
        _ => {
            let text = std::str::from_utf8(&bytes).map_err(|e| DriftError::Format {
                line: 0,
                message: format!("file is neither EMB1 binary nor UTF-8 text: {e}"),
            })?;
            parse_csv(text)
        }
    }
}

pub fn save_embeddings(
    m: &EmbeddingMatrix,
    path: impl AsRef<Path>,
    format: FileFormat,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        FileFormat::Binary => encode_binary(m)?,
        FileFormat::Csv | FileFormat::Auto => render_csv(m).into_bytes(),
    };
    let mut f = fs::File::create(path).map_err(|e| DriftError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| DriftError::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<EmbeddingMatrix> {
    let mut declared: Option<usize> = None;
    let mut dims: Option<usize> = None;
    let mut data = Vec::new();
    let mut rows = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if idx == 0 {
                if let Some(d) = comment.trim().strip_prefix("dims=") {
                    let d: usize = d.trim().parse().map_err(|_| DriftError::Format {
                        line: lineno,
                        message: format!("bad dims header {line:?}"),
                    })?;
                    if d == 0 {
                        return Err(DriftError::Format {
                            line: lineno,
                            message: "dims header must be at least 1".into(),
                        });
                    }
                    declared = Some(d);
                    dims = Some(d);
                }
            }
            continue;
        }

        let start = data.len();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| DriftError::Format {
                line: lineno,
                message: format!("cannot parse {:?} as a number", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(DriftError::NonFinite { row: rows, col });
            }
            data.push(v);
        }
        let width = data.len() - start;
        match dims {
            None => dims = Some(width),
            Some(d) if d != width => {
                let what = if declared.is_some() { "declared" } else { "first row" };
                return Err(DriftError::Format {
                    line: lineno,
                    message: format!("ragged row: {width} values, {what} has {d}"),
                });
            }
            Some(_) => {}
        }
        rows += 1;
    }

    match dims {
        Some(d) => EmbeddingMatrix::new(rows, d, data),
        None => Err(DriftError::Format {
            line: 0,
            message: "empty CSV without a '# dims=<d>' header".into(),
        }),
    }
}

pub fn render_csv(m: &EmbeddingMatrix) -> String {
    let mut out = String::new();
    if m.is_empty() {
        out.push_str(&format!("# dims={}\n", m.dims()));
    }
    for r in m.iter_rows() {
        let line: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn encode_binary(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let n = u32::try_from(m.rows())
        .map_err(|_| DriftError::InvalidConfig("row count exceeds u32".into()))?;
    let d = u32::try_from(m.dims())
        .map_err(|_| DriftError::InvalidConfig("dimensionality exceeds u32".into()))?;
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for (i, &v) in m.as_slice().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(DriftError::NonFinite {
                row: i / m.dims(),
                col: i % m.dims(),
            });
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let bad = |message: String| DriftError::Format { line: 0, message };
    if bytes.len() < BINARY_HEADER_LEN || &bytes[..4] != BINARY_MAGIC {
        return Err(bad("missing EMB1 header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, d) = (word(4), word(8));
    if d == 0 {
        return Err(bad("binary header declares zero dims".into()));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(BINARY_HEADER_LEN))
        .ok_or_else(|| bad("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, header {n}x{d} requires {expected}",
            bytes.len()
        )));
    }
    let data = bytes[BINARY_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingMatrix::new(n, d, data)
}
