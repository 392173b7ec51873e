//! Dataset container and loaders.
//!
//! A [`Dataset`] is an immutable n x p feature matrix with optional per-point
//! class labels and optional per-point real-valued concepts. Everything
//! downstream (graphs, embeddings, metrics) consumes it read-only; the content
//! hash ties derived artifacts back to their source data.

use std::collections::BTreeSet;
use std::fs;
use std::hash::Hasher;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Supported on-disk dataset formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Comma-separated values; a non-numeric first row is treated as a header.
    Csv,
    /// Little-endian binary: two u64 counts (n, p) then n*p row-major f32s.
    RawF32,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DatasetFormat::Csv),
            "raw-f32" => Ok(DatasetFormat::RawF32),
            other => Err(Error::InvalidInput {
                msg: format!("unknown dataset format {other:?} (expected csv or raw-f32)"),
            }),
        }
    }
}

/// Immutable feature matrix plus optional labels and concept values.
#[derive(Debug, Clone)]
pub struct Dataset {
    points: Array2<f64>,
    labels: Option<Vec<Option<u32>>>,
    concepts: Option<Vec<Option<f64>>>,
    id: String,
}

impl Dataset {
    /// Builds a dataset from parts, validating every invariant.
    ///
    /// Rejects fewer than 3 points, empty feature rows, non-finite features,
    /// and label sets that do not cover a contiguous 0..C-1 range.
    pub fn new(
        points: Array2<f64>,
        labels: Option<Vec<Option<u32>>>,
        concepts: Option<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let (n, p) = points.dim();
        if n < 3 {
            return Err(Error::TooFewPoints { n, min: 3 });
        }
        if p == 0 {
            return Err(Error::NoFeatures);
        }
        for ((row, col), v) in points.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature { row, col });
            }
        }
        if let Some(ref l) = labels {
            if l.len() != n {
                return Err(Error::RowCountMismatch {
                    rows: l.len(),
                    expected: n,
                });
            }
            check_contiguous(l)?;
        }
        if let Some(ref c) = concepts {
            if c.len() != n {
                return Err(Error::RowCountMismatch {
                    rows: c.len(),
                    expected: n,
                });
            }
        }
        let id = content_hash(&points, labels.as_deref(), concepts.as_deref());
        Ok(Dataset {
            points,
            labels,
            concepts,
            id,
        })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn p(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    /// Opaque content hash; embeddings and graphs carry it for consistency
    /// checks.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn labels(&self) -> Option<&[Option<u32>]> {
        self.labels.as_deref()
    }

    /// Labels as a dense class-id vector, available only when every point is
    /// labeled.
    pub fn complete_labels(&self) -> Option<Vec<usize>> {
        let l = self.labels.as_ref()?;
        l.iter().map(|v| v.map(|c| c as usize)).collect()
    }

    pub fn concepts(&self) -> Option<&[Option<f64>]> {
        self.concepts.as_deref()
    }

    /// Fraction of points whose concept value is missing; 0 when no concept
    /// column exists is not meaningful, so this returns `None` in that case.
    pub fn concept_missingness(&self) -> Option<f64> {
        let c = self.concepts.as_ref()?;
        let missing = c.iter().filter(|v| v.is_none()).count();
        Some(missing as f64 / c.len() as f64)
    }

    /// Euclidean distance between points `i` and `j` in feature space.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let a = self.points.row(i);
        let b = self.points.row(j);
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

fn check_contiguous(labels: &[Option<u32>]) -> Result<()> {
    let present: BTreeSet<u32> = labels.iter().flatten().copied().collect();
    if let Some(&max) = present.iter().next_back() {
        for c in 0..=max {
            if !present.contains(&c) {
                return Err(Error::NonContiguousLabels { missing: c });
            }
        }
    }
    Ok(())
}

/// FNV-1a over the raw content; stable across platforms and versions.
fn content_hash(
    points: &Array2<f64>,
    labels: Option<&[Option<u32>]>,
    concepts: Option<&[Option<f64>]>,
) -> String {
    let mut h = Fnv1a::new();
    h.write_usize(points.nrows());
    h.write_usize(points.ncols());
    for v in points.iter() {
        h.write_u64(v.to_bits());
    }
    if let Some(l) = labels {
        h.write_u8(1);
        for v in l {
            match v {
                Some(c) => {
                    h.write_u8(1);
                    h.write_u32(*c);
                }
                None => h.write_u8(0),
            }
        }
    }
    if let Some(c) = concepts {
        h.write_u8(2);
        for v in c {
            match v {
                Some(x) => {
                    h.write_u8(1);
                    h.write_u64(x.to_bits());
                }
                None => h.write_u8(0),
            }
        }
    }
    format!("{:016x}", h.finish())
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

/// Loads a dataset from disk.
///
/// `label_column` and `concept_column` index the file's original columns;
/// those columns are removed from the feature block. In CSV, an empty cell or
/// a literal `NA` marks a missing concept (or label). In raw-f32, a NaN cell
/// in the label or concept column marks a missing value.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    label_column: Option<usize>,
    concept_column: Option<usize>,
) -> Result<Dataset> {
    let (cells, width) = match format {
        DatasetFormat::Csv => read_csv_cells(path)?,
        DatasetFormat::RawF32 => read_raw_f32_cells(path)?,
    };
    split_columns(cells, width, label_column, concept_column)
}

/// One parsed cell: raw features stay text-tagged so diagnostics can name the
/// failing cell after column extraction.
enum Cell {
    Value(f64),
    Missing,
}

fn read_csv_cells(path: &Path) -> Result<(Vec<Vec<Cell>>, usize)> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: row_idx,
            col: 0,
            msg: e.to_string(),
        })?;
        rows.push(record.iter().map(str::to_owned).collect());
    }
    if rows.is_empty() {
        return Err(Error::TooFewPoints { n: 0, min: 3 });
    }

    // Header auto-detection: a first row with any non-numeric, non-empty cell
    // is a header.
    let first_is_header = rows[0]
        .iter()
        .any(|c| !c.is_empty() && c != "NA" && c.parse::<f64>().is_err());
    let data_rows = if first_is_header { &rows[1..] } else { &rows[..] };
    if data_rows.is_empty() {
        return Err(Error::TooFewPoints { n: 0, min: 3 });
    }

    let width = data_rows[0].len();
    let mut cells = Vec::with_capacity(data_rows.len());
    for (row, record) in data_rows.iter().enumerate() {
        if record.len() != width {
            return Err(Error::Parse {
                row,
                col: 0,
                msg: format!("expected {width} columns, found {}", record.len()),
            });
        }
        let mut parsed = Vec::with_capacity(width);
        for (col, cell) in record.iter().enumerate() {
            if cell.is_empty() || cell == "NA" {
                parsed.push(Cell::Missing);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    col,
                    msg: format!("cannot parse {cell:?} as a number"),
                })?;
                parsed.push(Cell::Value(v));
            }
        }
        cells.push(parsed);
    }
    Ok((cells, width))
}

fn read_raw_f32_cells(path: &Path) -> Result<(Vec<Vec<Cell>>, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: "file too short for the raw-f32 header".into(),
        });
    }
    let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let p = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = 16 + 4usize
        .checked_mul(n)
        .and_then(|v| v.checked_mul(p))
        .ok_or_else(|| Error::Parse {
            row: 0,
            col: 0,
            msg: "raw-f32 header counts overflow".into(),
        })?;
    if bytes.len() != expected {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: format!(
                "raw-f32 payload size mismatch: header says {n}x{p} ({expected} bytes), file has {}",
                bytes.len()
            ),
        });
    }
    let mut cells = Vec::with_capacity(n);
    let mut offset = 16;
    for _ in 0..n {
        let mut row = Vec::with_capacity(p);
        for _ in 0..p {
            let v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as f64;
            offset += 4;
            if v.is_nan() {
                row.push(Cell::Missing);
            } else {
                row.push(Cell::Value(v));
            }
        }
        cells.push(row);
    }
    Ok((cells, p))
}

fn split_columns(
    cells: Vec<Vec<Cell>>,
    width: usize,
    label_column: Option<usize>,
    concept_column: Option<usize>,
) -> Result<Dataset> {
    for idx in [label_column, concept_column].into_iter().flatten() {
        if idx >= width {
            return Err(Error::ColumnOutOfRange { index: idx, width });
        }
    }
    if let (Some(a), Some(b)) = (label_column, concept_column) {
        if a == b {
            return Err(Error::InvalidInput {
                msg: format!("label and concept columns both set to {a}"),
            });
        }
    }

    let n = cells.len();
    let feature_cols: Vec<usize> = (0..width)
        .filter(|c| Some(*c) != label_column && Some(*c) != concept_column)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::NoFeatures);
    }

    let mut points = Array2::zeros((n, feature_cols.len()));
    let mut labels = label_column.map(|_| Vec::with_capacity(n));
    let mut concepts = concept_column.map(|_| Vec::with_capacity(n));

    for (row, record) in cells.iter().enumerate() {
        for (out_col, &col) in feature_cols.iter().enumerate() {
            match record[col] {
                Cell::Value(v) if v.is_finite() => points[[row, out_col]] = v,
                _ => return Err(Error::NonFiniteFeature { row, col }),
            }
        }
        if let (Some(col), Some(out)) = (label_column, labels.as_mut()) {
            let v = match record[col] {
                Cell::Missing => None,
                Cell::Value(v) => {
                    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
                        Some(v as u32)
                    } else {
                        return Err(Error::Parse {
                            row,
                            col,
                            msg: format!("label cell {v} is not a nonnegative integer"),
                        });
                    }
                }
            };
            out.push(v);
        }
        if let (Some(col), Some(out)) = (concept_column, concepts.as_mut()) {
            let v = match record[col] {
                Cell::Missing => None,
                Cell::Value(v) if v.is_finite() => Some(v),
                Cell::Value(v) => {
                    return Err(Error::Parse {
                        row,
                        col,
                        msg: format!("concept cell {v} is not finite"),
                    })
                }
            };
            out.push(v);
        }
    }

    Dataset::new(points, labels, concepts)
}

/// Hides the concept values of a seeded `ratio` fraction of points.
///
/// Masks are nested: for a fixed seed, the points masked at a lower ratio are
/// a subset of those masked at a higher ratio, which keeps missingness sweeps
/// comparable.
pub fn mask_concepts(d: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidInput {
            msg: format!("mask ratio must lie in [0, 1], got {ratio}"),
        });
    }
    let concepts = d.concepts().ok_or_else(|| Error::MissingConcepts {
        what: "mask_concepts".into(),
    })?;
    let n = d.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = (ratio * n as f64).ceil() as usize;
    let mut masked: Vec<Option<f64>> = concepts.to_vec();
    for &i in order.iter().take(cut.min(n)) {
        masked[i] = None;
    }
    Dataset::new(
        d.points().clone(),
        d.labels().map(|l| l.to_vec()),
        Some(masked),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_without_label_column() {
        let f = write_temp("1,2,3\n4,5,6\n7,8,9\n10,11,12\n");
        let d = load_dataset(f.path(), DatasetFormat::Csv, None, None).unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.p(), 3);
        assert!(d.labels().is_none());
    }

    #[test]
    fn csv_with_label_column() {
        let f = write_temp("1,2,0\n4,5,1\n7,8,0\n10,11,1\n");
        let d = load_dataset(f.path(), DatasetFormat::Csv, Some(2), None).unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.p(), 2);
        assert_eq!(d.complete_labels().unwrap(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn csv_nan_feature_names_cell() {
        let f = write_temp("1,2\n3,NaN\n5,6\n");
        let err = load_dataset(f.path(), DatasetFormat::Csv, None, None).unwrap_err();
        match err {
            Error::NonFiniteFeature { row, col } => {
                assert_eq!((row, col), (1, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn csv_header_autodetected() {
        let f = write_temp("x,y,label\n1,2,0\n3,4,1\n5,6,0\n");
        let d = load_dataset(f.path(), DatasetFormat::Csv, Some(2), None).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 2);
    }

    #[test]
    fn csv_concept_missing_markers() {
        let f = write_temp("1,2,0.5\n3,4,NA\n5,6,\n7,8,1.5\n");
        let d = load_dataset(f.path(), DatasetFormat::Csv, None, Some(2)).unwrap();
        let c = d.concepts().unwrap();
        assert_eq!(c[0], Some(0.5));
        assert_eq!(c[1], None);
        assert_eq!(c[2], None);
        assert!((d.concept_missingness().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn raw_f32_roundtrip() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&bytes).unwrap();
        let d = load_dataset(f.path(), DatasetFormat::RawF32, None, None).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.points()[[2, 1]], 6.0);
    }

    #[test]
    fn raw_f32_size_mismatch_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&bytes).unwrap();
        assert!(load_dataset(f.path(), DatasetFormat::RawF32, None, None).is_err());
    }

    #[test]
    fn too_few_points_rejected() {
        let f = write_temp("1,2\n3,4\n");
        let err = load_dataset(f.path(), DatasetFormat::Csv, None, None).unwrap_err();
        assert!(matches!(err, Error::TooFewPoints { n: 2, min: 3 }));
    }

    #[test]
    fn non_contiguous_labels_rejected() {
        let points = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let labels = Some(vec![Some(0), Some(2), Some(0)]);
        let err = Dataset::new(points, labels, None).unwrap_err();
        assert!(matches!(err, Error::NonContiguousLabels { missing: 1 }));
    }

    #[test]
    fn content_hash_tracks_content() {
        let a = Dataset::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], None, None).unwrap();
        let b = Dataset::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], None, None).unwrap();
        let c = Dataset::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.5]], None, None).unwrap();
        assert_eq!(a.id(), b.id());
        assert_ne!(a.id(), c.id());
    }

    #[test]
    fn concept_masks_nest_across_ratios() {
        let points = Array2::from_shape_fn((20, 2), |(i, j)| (i * 2 + j) as f64);
        let concepts = Some((0..20).map(|i| Some(i as f64)).collect());
        let d = Dataset::new(points, None, concepts).unwrap();
        let half = mask_concepts(&d, 0.5, 7).unwrap();
        let most = mask_concepts(&d, 0.9, 7).unwrap();
        let missing_half: Vec<usize> = half
            .concepts()
            .unwrap()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| i)
            .collect();
        for i in &missing_half {
            assert!(most.concepts().unwrap()[*i].is_none());
        }
        assert_eq!(missing_half.len(), 10);
        assert!((most.concept_missingness().unwrap() - 0.9).abs() < 1e-12);
    }
}
