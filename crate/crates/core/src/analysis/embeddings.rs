//! Latent embeddings of dataset windows and their text export.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::Model;
use crate::numerics::Tensor;
use crate::synthgen::DatasetSplit;

/// Which window of each pair to embed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSide {
    Context,
    Target,
}

/// Latent vectors for every pair of a split, in pair order.
///
/// Rows come from the online encoder in training precision; analysis
/// routines widen to f64 on entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// N rows of latent_dim values each.
    pub rows: Vec<Vec<f32>>,
    /// Regime label per row, parallel to `rows`.
    pub labels: Vec<u16>,
    /// Architecture digest of the model that produced the rows; zero for
    /// sets re-imported from text, which does not carry it.
    pub checkpoint_digest: u64,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Rows widened to f64 for clustering and matrix diagnostics.
    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&v| f64::from(v)).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::contract("embedding set has no rows"));
        }
        if self.labels.len() != self.rows.len() {
            return Err(Error::contract(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.rows.len()
            )));
        }
        let width = self.rows[0].len();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::contract(format!(
                    "row {i} has {} values, expected {width}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("row {i} contains a non-finite value")));
            }
        }
        Ok(())
    }
}

/// Encodes one side of every pair in the split with the online encoder,
/// batched in pair order. The output row order equals the pair order, so
/// repeated calls are identical.
pub fn embed_split(
    model: &Model<f32>,
    split: &DatasetSplit,
    side: WindowSide,
    batch_size: usize,
) -> Result<EmbeddingSet> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    if split.pairs.is_empty() {
        return Err(Error::contract("cannot embed an empty split"));
    }
    let window_len = match side {
        WindowSide::Context => split.context_len,
        WindowSide::Target => split.target_len,
    };
    if window_len != model.config.input_len {
        return Err(Error::dim(format!(
            "split windows have length {window_len}, model expects {}",
            model.config.input_len
        )));
    }

    let k = model.config.latent_dim;
    let mut rows = Vec::with_capacity(split.pairs.len());
    for chunk in split.pairs.chunks(batch_size) {
        let mut data = Vec::with_capacity(chunk.len() * window_len);
        for pair in chunk {
            match side {
                WindowSide::Context => data.extend_from_slice(&pair.context),
                WindowSide::Target => data.extend_from_slice(&pair.target),
            }
        }
        let batch = Tensor::new(vec![chunk.len(), 1, window_len], data)?;
        let latent = model.encode(&batch)?;
        for row in latent.data().chunks(k) {
            rows.push(row.to_vec());
        }
    }

    let set = EmbeddingSet {
        rows,
        labels: split.pairs.iter().map(|p| p.regime_label).collect(),
        checkpoint_digest: model.digest(),
    };
    set.validate()?;
    Ok(set)
}

/// Writes the set as a text table, header `id,label,z0,...,z{k-1}` and one
/// row per pair. Values use shortest round-trip formatting, so a re-import
/// reproduces every f32 bit for bit.
pub fn export_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    set.validate()?;
    let k = set.latent_dim();
    let mut out = String::new();
    out.push_str("id,label");
    for i in 0..k {
        out.push_str(&format!(",z{i}"));
    }
    out.push('\n');
    for (id, (row, label)) in set.rows.iter().zip(&set.labels).enumerate() {
        out.push_str(&format!("{id},{label}"));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a table written by [`export_embeddings`]. The text format does not
/// carry the checkpoint digest, so the result has digest zero.
pub fn import_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(format!("{}: empty embeddings file", path.display())))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 3 || fields[0] != "id" || fields[1] != "label" {
        return Err(Error::format(format!(
            "{}: line 1: expected header id,label,z0,..., got {header:?}",
            path.display()
        )));
    }
    let k = fields.len() - 2;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (index, line) in lines {
        let line_no = index + 1;
        let parse_err = |what: &str| {
            Error::format(format!("{}: line {line_no}: {what}", path.display()))
        };
        let mut parts = line.split(',');
        let _id = parts.next().ok_or_else(|| parse_err("missing id"))?;
        let label: u16 = parts
            .next()
            .ok_or_else(|| parse_err("missing label"))?
            .parse()
            .map_err(|_| parse_err("label is not a u16"))?;
        let row: Vec<f32> = parts
            .map(|v| v.parse().map_err(|_| parse_err("value is not an f32")))
            .collect::<Result<_>>()?;
        if row.len() != k {
            return Err(parse_err(&format!("{} values, expected {k}", row.len())));
        }
        rows.push(row);
        labels.push(label);
    }

    let set = EmbeddingSet { rows, labels, checkpoint_digest: 0 };
    set.validate()?;
    Ok(set)
}
