//! Low-dimensional embeddings and their standardization.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How an embedding was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub lambda_pca: f64,
    pub lambda_axis: f64,
    /// Final value of the optimizer's total objective.
    pub final_loss: f64,
    pub iterations: usize,
}

impl Provenance {
    /// Placeholder provenance for embeddings built outside the optimizer
    /// (e.g. a PCA projection used as a comparison target).
    pub fn external() -> Self {
        Provenance {
            seed: 0,
            lambda_pca: 0.0,
            lambda_axis: 0.0,
            final_loss: f64::NAN,
            iterations: 0,
        }
    }
}

/// An n x d coordinate matrix tied to the dataset it embeds.
#[derive(Debug, Clone)]
pub struct Embedding {
    coords: Array2<f64>,
    dataset_id: String,
    provenance: Provenance,
}

/// Tolerance for the standardization check: mean within this of zero and mean
/// squared row norm within this of one.
pub const STANDARDIZED_TOL: f64 = 1e-6;

impl Embedding {
    /// Wraps a coordinate matrix, rejecting non-finite entries.
    pub fn new(coords: Array2<f64>, dataset_id: String, provenance: Provenance) -> Result<Self> {
        for ((row, col), v) in coords.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteCoordinate { row, col });
            }
        }
        Ok(Embedding {
            coords,
            dataset_id,
            provenance,
        })
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dims(&self) -> usize {
        self.coords.ncols()
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Euclidean distance between embedded points `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let a = self.coords.row(i);
        let b = self.coords.row(j);
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// True when each component mean is within `STANDARDIZED_TOL` of zero and
    /// the mean squared row norm is within the same tolerance of one.
    pub fn is_standardized(&self) -> bool {
        let n = self.n() as f64;
        let means = self.coords.mean_axis(Axis(0)).expect("non-empty");
        if means.iter().any(|m| m.abs() > STANDARDIZED_TOL) {
            return false;
        }
        let msn = self.coords.iter().map(|v| v * v).sum::<f64>() / n;
        (msn - 1.0).abs() <= STANDARDIZED_TOL
    }
}

/// Centers each component to zero mean, then scales so that the mean squared
/// row norm is one. Idempotent; errors when every row is identical.
pub fn standardize_embedding(e: &Embedding) -> Result<Embedding> {
    let mut coords = e.coords.clone();
    let n = coords.nrows() as f64;
    let means = coords.mean_axis(Axis(0)).expect("non-empty");
    for mut row in coords.rows_mut() {
        for (v, m) in row.iter_mut().zip(means.iter()) {
            *v -= m;
        }
    }
    let msn = coords.iter().map(|v| v * v).sum::<f64>() / n;
    if msn < 1e-24 {
        return Err(Error::DegenerateEmbedding);
    }
    let scale = msn.sqrt();
    coords.mapv_inplace(|v| v / scale);
    Ok(Embedding {
        coords,
        dataset_id: e.dataset_id.clone(),
        provenance: e.provenance.clone(),
    })
}

/// Writes coordinates as CSV with an `x0,x1,...` header and the provenance
/// record as a sidecar JSON next to it.
pub fn write_embedding(path: &Path, e: &Embedding) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..e.dims()).map(|d| format!("x{d}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in e.coords.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|err| Error::io(path, err))?;

    let sidecar = SidecarRecord {
        dataset_id: e.dataset_id.clone(),
        provenance: e.provenance.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("serializable");
    fs::write(sidecar_path(path), json).map_err(|err| Error::io(sidecar_path(path), err))?;
    Ok(())
}

/// Reads an embedding written by [`write_embedding`], restoring provenance
/// from the sidecar when it exists.
pub fn read_embedding(path: &Path) -> Result<Embedding> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        row: 0,
        col: 0,
        msg: "empty embedding file".into(),
    })?;
    let dims = header.split(',').count();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dims {
            return Err(Error::Parse {
                row: row + 1,
                col: 0,
                msg: format!("expected {dims} coordinates, found {}", cells.len()),
            });
        }
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: row + 1,
                col,
                msg: format!("cannot parse {cell:?} as a coordinate"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let coords = Array2::from_shape_vec((rows, dims), values).expect("consistent shape");

    let sidecar = sidecar_path(path);
    let (dataset_id, provenance) = if sidecar.exists() {
        let json = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let record: SidecarRecord = serde_json::from_str(&json).map_err(|e| Error::Parse {
            row: 0,
            col: 0,
            msg: format!("bad sidecar JSON: {e}"),
        })?;
        (record.dataset_id, record.provenance)
    } else {
        (String::new(), Provenance::external())
    };
    Embedding::new(coords, dataset_id, provenance)
}

/// Sidecar JSON path for an embedding file: the extension becomes `.json`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

#[derive(Serialize, Deserialize)]
struct SidecarRecord {
    dataset_id: String,
    provenance: Provenance,
}
