//! Paired scalar observations and their plain-text representation.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::MechanismSpec;

/// A hypothesised causal direction between the two columns of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "x->y")]
    XtoY,
    #[serde(rename = "y->x")]
    YtoX,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::XtoY => Direction::YtoX,
            Direction::YtoX => Direction::XtoY,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::XtoY => "x->y",
            Direction::YtoX => "y->x",
        })
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic(MechanismSpec),
    File(PathBuf),
    Tcep { id: u32 },
    Inline,
}

/// Two aligned sequences of scalar observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    xs: Vec<f64>,
    ys: Vec<f64>,
    pub provenance: Provenance,
    pub ground_truth: Option<Direction>,
}

impl PairedDataset {
    /// Builds a dataset, rejecting unequal lengths and non-finite values.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Self::with_provenance(xs, ys, Provenance::Inline, None)
    }

    pub fn with_provenance(
        xs: Vec<f64>,
        ys: Vec<f64>,
        provenance: Provenance,
        ground_truth: Option<Direction>,
    ) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::argument(format!(
                "paired sequences differ in length ({} vs {})",
                xs.len(),
                ys.len()
            )));
        }
        if let Some(i) = xs.iter().chain(ys.iter()).position(|v| !v.is_finite()) {
            let (col, row) = if i < xs.len() { ("x", i) } else { ("y", i - xs.len()) };
            return Err(Error::argument(format!("non-finite value in column {col} at row {row}")));
        }
        Ok(PairedDataset {
            xs,
            ys,
            provenance,
            ground_truth,
        })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// The (cause, effect) columns under the hypothesis `direction`.
    pub fn oriented(&self, direction: Direction) -> (&[f64], &[f64]) {
        match direction {
            Direction::XtoY => (&self.xs, &self.ys),
            Direction::YtoX => (&self.ys, &self.xs),
        }
    }

    /// Exchanges the two columns; the ground truth, if any, is reversed with them.
    pub fn swapped(&self) -> Self {
        PairedDataset {
            xs: self.ys.clone(),
            ys: self.xs.clone(),
            provenance: self.provenance.clone(),
            ground_truth: self.ground_truth.map(Direction::reversed),
        }
    }

    /// Keeps the rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        PairedDataset {
            xs: indices.iter().map(|&i| self.xs[i]).collect(),
            ys: indices.iter().map(|&i| self.ys[i]).collect(),
            provenance: self.provenance.clone(),
            ground_truth: self.ground_truth,
        }
    }

    /// Writes the dataset as two whitespace-separated columns, one row per line.
    pub fn write_columns<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (x, y) in self.xs.iter().zip(&self.ys) {
            writeln!(out, "{x} {y}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_columns(&mut buf).expect("writing to a Vec cannot fail");
        fs::write(path, buf).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a two-column numeric text file. Blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ingest = |message: String| Error::Ingestion {
                file: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(ingest(format!("expected 2 columns, found {}", fields.len())));
            }
            let parse = |s: &str| -> Result<f64> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| ingest(format!("not a number: {s:?}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(ingest(format!("non-finite value: {s:?}")))
                }
            };
            xs.push(parse(fields[0])?);
            ys.push(parse(fields[1])?);
        }
        PairedDataset::with_provenance(xs, ys, Provenance::File(path.to_path_buf()), None)
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Shifts and scales to zero mean and unit (population) variance.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::argument("cannot standardize an empty sequence"));
    }
    let (mean, std) = mean_std(values);
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::argument("variable has zero variance"));
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}
