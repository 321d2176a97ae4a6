//! CSV ingestion and deterministic encoding.
//!
//! Encoding produces two views of the data:
//!
//! * the **comparability view** kept on [`EncodedDataset`]: continuous columns
//!   min-max scaled to `[0, 1]` with train-split statistics, categorical
//!   columns as raw one-hots — the view on which comparability thresholds and
//!   the generator operate;
//! * the **classifier view** produced by [`Standardizer`]: every encoded
//!   column standardized (mean removed, unit variance) with train-split
//!   statistics — the view classifiers train and predict on.

use crate::error::{Error, Result};
use crate::schema::FeatureSchema;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

/// A validated ingested table. Categorical cells are stored as indices into
/// the schema's declared value sets; rows that failed validation were dropped
/// during ingestion and are only reflected in `dropped_rows`.
#[derive(Debug, Clone)]
pub struct RawTable {
    /// Per continuous column, raw numeric values.
    pub continuous: Vec<Vec<f64>>,
    /// Per discrete column, indices into the declared value set.
    pub discrete: Vec<Vec<u32>>,
    /// Per sensitive column, indices into the declared value set.
    pub sensitive: Vec<Vec<u32>>,
    /// Binary labels.
    pub labels: Vec<u8>,
    /// Rows dropped for missing cells, unknown categories, or parse failures.
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }
}

/// Load a delimiter-separated file against a schema.
///
/// Unknown categorical values, missing cells, and unparseable numeric cells
/// drop the affected row (counted and logged); a column missing from the file
/// is a schema-mismatch error.
pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<RawTable> {
    schema.validate()?;
    let file = std::fs::File::open(path)?;
    load_dataset_from_reader(file, schema)
}

pub fn load_dataset_from_reader<R: Read>(reader: R, schema: &FeatureSchema) -> Result<RawTable> {
    let ingest = &schema.ingest;
    let mut builder = csv::ReaderBuilder::new();
    builder
        .has_headers(ingest.has_header)
        .delimiter(ingest.delimiter as u8)
        .trim(csv::Trim::All)
        .flexible(true);
    if let Some(c) = ingest.comment {
        builder.comment(Some(c as u8));
    }
    let mut rdr = builder.from_reader(reader);

    // Resolve each schema column to a field position.
    let header: Vec<String> = if ingest.has_header {
        rdr.headers()?.iter().map(|h| h.trim().to_string()).collect()
    } else {
        ingest.columns.clone().ok_or_else(|| {
            Error::Schema("headerless ingestion requires ingest.columns".into())
        })?
    };
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` missing from input file")))
    };
    let cont_pos: Vec<usize> =
        schema.continuous.iter().map(|c| find(&c.name)).collect::<Result<_>>()?;
    let disc_pos: Vec<usize> =
        schema.discrete.iter().map(|c| find(&c.name)).collect::<Result<_>>()?;
    let sens_pos: Vec<usize> =
        schema.sensitive.iter().map(|c| find(&c.name)).collect::<Result<_>>()?;
    let label_pos = find(&schema.label.name)?;

    let mut table = RawTable {
        continuous: vec![Vec::new(); schema.n_continuous()],
        discrete: vec![Vec::new(); schema.n_discrete()],
        sensitive: vec![Vec::new(); schema.n_sensitive()],
        labels: Vec::new(),
        dropped_rows: 0,
    };
    let is_missing = |cell: &str| ingest.missing.iter().any(|m| m == cell);

    'rows: for record in rdr.records() {
        let record = record?;
        if record.len() < header.len() {
            // Short records (e.g. trailing blank lines) are dropped, not fatal.
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            table.dropped_rows += 1;
            continue;
        }
        let mut cont_vals = Vec::with_capacity(cont_pos.len());
        for (&pos, col) in cont_pos.iter().zip(&schema.continuous) {
            let cell = record[pos].trim();
            if is_missing(cell) {
                table.dropped_rows += 1;
                continue 'rows;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => cont_vals.push(v),
                _ => {
                    log::debug!("dropping row: unparseable numeric cell `{cell}` in `{}`", col.name);
                    table.dropped_rows += 1;
                    continue 'rows;
                }
            }
        }
        let mut disc_vals = Vec::with_capacity(disc_pos.len());
        for (&pos, col) in disc_pos.iter().zip(&schema.discrete) {
            let cell = record[pos].trim();
            if is_missing(cell) {
                table.dropped_rows += 1;
                continue 'rows;
            }
            match col.value_index(cell) {
                Some(idx) => disc_vals.push(idx as u32),
                None => {
                    log::debug!("dropping row: unknown value `{cell}` for `{}`", col.name);
                    table.dropped_rows += 1;
                    continue 'rows;
                }
            }
        }
        let mut sens_vals = Vec::with_capacity(sens_pos.len());
        for (&pos, col) in sens_pos.iter().zip(&schema.sensitive) {
            let cell = record[pos].trim();
            if is_missing(cell) {
                table.dropped_rows += 1;
                continue 'rows;
            }
            match col.value_index(cell) {
                Some(idx) => sens_vals.push(idx as u32),
                None => {
                    log::debug!("dropping row: unknown value `{cell}` for `{}`", col.name);
                    table.dropped_rows += 1;
                    continue 'rows;
                }
            }
        }
        let label_cell = record[label_pos].trim();
        if is_missing(label_cell) {
            table.dropped_rows += 1;
            continue;
        }
        let label = u8::from(schema.label.positive.iter().any(|p| p == label_cell));

        for (col, v) in table.continuous.iter_mut().zip(cont_vals) {
            col.push(v);
        }
        for (col, v) in table.discrete.iter_mut().zip(disc_vals) {
            col.push(v);
        }
        for (col, v) in table.sensitive.iter_mut().zip(sens_vals) {
            col.push(v);
        }
        table.labels.push(label);
    }

    if table.dropped_rows > 0 {
        log::info!("ingestion dropped {} row(s)", table.dropped_rows);
    }
    Ok(table)
}

/// Per-column min/max computed on the train split; test encoding reuses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingStats {
    pub fn fit(raw: &RawTable) -> Self {
        let mut min = Vec::with_capacity(raw.continuous.len());
        let mut max = Vec::with_capacity(raw.continuous.len());
        for col in &raw.continuous {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            min.push(lo);
            max.push(hi);
        }
        Self { min, max }
    }
}

/// Which split an encoded dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// Column layout of an encoded block: the one-hot slice that belongs to each
/// categorical feature.
pub fn feature_slices(widths: impl Iterator<Item = usize>) -> Vec<Range<usize>> {
    let mut slices = Vec::new();
    let mut offset = 0;
    for w in widths {
        slices.push(offset..offset + w);
        offset += w;
    }
    slices
}

/// The comparability/generation view of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    /// `rows x n_continuous`, each entry in `[0, 1]`.
    pub continuous: Array2<f64>,
    /// `rows x discrete_width`, one-hot per feature slice.
    pub discrete: Array2<f64>,
    /// `rows x sensitive_width`, one-hot per feature slice.
    pub sensitive: Array2<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
    /// One-hot slice per discrete feature, within the discrete block.
    pub discrete_slices: Vec<Range<usize>>,
    /// One-hot slice per sensitive feature, within the sensitive block.
    pub sensitive_slices: Vec<Range<usize>>,
}

impl EncodedDataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous.ncols()
    }

    /// Total encoded width across the three blocks.
    pub fn width(&self) -> usize {
        self.continuous.ncols() + self.discrete.ncols() + self.sensitive.ncols()
    }

    pub fn row(&self, i: usize) -> EncodedRow<'_> {
        EncodedRow {
            continuous: self.continuous.row(i),
            discrete: self.discrete.row(i),
            discrete_slices: &self.discrete_slices,
            label: self.labels[i],
        }
    }

    /// Value index of discrete feature `f` in row `i` (argmax of the one-hot).
    pub fn discrete_code(&self, i: usize, f: usize) -> u32 {
        argmax_slice(self.discrete.row(i), &self.discrete_slices[f])
    }

    /// Value index of sensitive feature `f` in row `i`.
    pub fn sensitive_code(&self, i: usize, f: usize) -> u32 {
        argmax_slice(self.sensitive.row(i), &self.sensitive_slices[f])
    }

    /// Concatenated `[C | D | S]` feature matrix.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let n = self.n_rows();
        let mut out = Array2::zeros((n, self.width()));
        let nc = self.continuous.ncols();
        let nd = self.discrete.ncols();
        out.slice_mut(ndarray::s![.., 0..nc]).assign(&self.continuous);
        out.slice_mut(ndarray::s![.., nc..nc + nd]).assign(&self.discrete);
        out.slice_mut(ndarray::s![.., nc + nd..]).assign(&self.sensitive);
        out
    }
}

fn argmax_slice(row: ArrayView1<'_, f64>, slice: &Range<usize>) -> u32 {
    let mut best = slice.start;
    for k in slice.clone() {
        if row[k] > row[best] {
            best = k;
        }
    }
    (best - slice.start) as u32
}

/// One row of the comparability view, as used by the pair predicate.
#[derive(Debug, Clone, Copy)]
pub struct EncodedRow<'a> {
    pub continuous: ArrayView1<'a, f64>,
    pub discrete: ArrayView1<'a, f64>,
    pub discrete_slices: &'a [Range<usize>],
    pub label: u8,
}

/// Encode the train split, fitting scaling statistics on it.
pub fn encode_train(raw: &RawTable, schema: &FeatureSchema) -> (EncodedDataset, ScalingStats) {
    let stats = ScalingStats::fit(raw);
    let ds = encode_with(raw, schema, &stats, Split::Train);
    (ds, stats)
}

/// Encode any split with previously fitted train statistics. Scaled values
/// are clamped into `[0, 1]`, so out-of-range test values cannot escape the
/// unit interval. A constant train column (min == max) encodes as all zeros.
pub fn encode_with(
    raw: &RawTable,
    schema: &FeatureSchema,
    stats: &ScalingStats,
    split: Split,
) -> EncodedDataset {
    let n = raw.n_rows();
    let mut continuous = Array2::zeros((n, schema.n_continuous()));
    for (c, col) in raw.continuous.iter().enumerate() {
        let (lo, hi) = (stats.min[c], stats.max[c]);
        let span = hi - lo;
        if span <= 0.0 {
            log::warn!(
                "continuous column `{}` is constant on the train split; encoding as zeros",
                schema.continuous[c].name
            );
            continue;
        }
        for (i, &v) in col.iter().enumerate() {
            continuous[[i, c]] = ((v - lo) / span).clamp(0.0, 1.0);
        }
    }

    let discrete_slices = feature_slices(schema.discrete.iter().map(|c| c.values.len()));
    let mut discrete = Array2::zeros((n, schema.discrete_width()));
    for (f, col) in raw.discrete.iter().enumerate() {
        let start = discrete_slices[f].start;
        for (i, &v) in col.iter().enumerate() {
            discrete[[i, start + v as usize]] = 1.0;
        }
    }

    let sensitive_slices = feature_slices(schema.sensitive.iter().map(|c| c.values.len()));
    let mut sensitive = Array2::zeros((n, schema.sensitive_width()));
    for (f, col) in raw.sensitive.iter().enumerate() {
        let start = sensitive_slices[f].start;
        for (i, &v) in col.iter().enumerate() {
            sensitive[[i, start + v as usize]] = 1.0;
        }
    }

    EncodedDataset {
        continuous,
        discrete,
        sensitive,
        labels: raw.labels.clone(),
        split,
        discrete_slices,
        sensitive_slices,
    }
}

/// Project out the sensitive block; other blocks are untouched.
pub fn drop_sensitive(dataset: &EncodedDataset) -> EncodedDataset {
    EncodedDataset {
        continuous: dataset.continuous.clone(),
        discrete: dataset.discrete.clone(),
        sensitive: Array2::zeros((dataset.n_rows(), 0)),
        labels: dataset.labels.clone(),
        split: dataset.split,
        discrete_slices: dataset.discrete_slices.clone(),
        sensitive_slices: Vec::new(),
    }
}

/// Mean/std per encoded column, fitted on the train split. Applies the
/// classifier view: every column (continuous and one-hot alike) standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &EncodedDataset) -> Self {
        let x = train.feature_matrix();
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            // Constant columns map to zero rather than dividing by zero.
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn apply(&self, dataset: &EncodedDataset) -> Array2<f64> {
        let mut x = dataset.feature_matrix();
        assert_eq!(x.ncols(), self.mean.len(), "standardizer width mismatch");
        for (c, mut col) in x.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        x
    }

    /// Standardize an arbitrary feature matrix with the same statistics.
    pub fn apply_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.mean.len(), "standardizer width mismatch");
        let mut out = x.clone();
        for (c, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}

const ENCODED_MAGIC: &[u8; 4] = b"AENC";
const ENCODED_VERSION: u32 = 1;

/// Serialize an encoded dataset to the columnar binary format:
///
/// ```text
/// magic "AENC" | u32 version | u8 split | u32 rows
/// u32 n_continuous | u32 discrete_width | u32 sensitive_width
/// u32 n_discrete_slices | (u32 start, u32 end)*
/// u32 n_sensitive_slices | (u32 start, u32 end)*
/// continuous block  (column-major f64 LE)
/// discrete block    (column-major f64 LE)
/// sensitive block   (column-major f64 LE)
/// labels            (rows x u8)
/// ```
pub fn write_encoded<W: Write>(dataset: &EncodedDataset, mut w: W) -> Result<()> {
    w.write_all(ENCODED_MAGIC)?;
    w.write_all(&ENCODED_VERSION.to_le_bytes())?;
    w.write_all(&[match dataset.split {
        Split::Train => 0u8,
        Split::Test => 1u8,
    }])?;
    let rows = dataset.n_rows() as u32;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&(dataset.continuous.ncols() as u32).to_le_bytes())?;
    w.write_all(&(dataset.discrete.ncols() as u32).to_le_bytes())?;
    w.write_all(&(dataset.sensitive.ncols() as u32).to_le_bytes())?;
    for slices in [&dataset.discrete_slices, &dataset.sensitive_slices] {
        w.write_all(&(slices.len() as u32).to_le_bytes())?;
        for s in slices.iter() {
            w.write_all(&(s.start as u32).to_le_bytes())?;
            w.write_all(&(s.end as u32).to_le_bytes())?;
        }
    }
    for block in [&dataset.continuous, &dataset.discrete, &dataset.sensitive] {
        for col in block.columns() {
            for v in col.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.write_all(&dataset.labels)?;
    Ok(())
}

pub fn read_encoded<R: Read>(mut r: R) -> Result<EncodedDataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ENCODED_MAGIC {
        return Err(Error::Format("bad magic for encoded dataset".into()));
    }
    let version = read_u32(&mut r)?;
    if version != ENCODED_VERSION {
        return Err(Error::Format(format!("unsupported encoded-dataset version {version}")));
    }
    let mut split_byte = [0u8; 1];
    r.read_exact(&mut split_byte)?;
    let split = match split_byte[0] {
        0 => Split::Train,
        1 => Split::Test,
        b => return Err(Error::Format(format!("bad split tag {b}"))),
    };
    let rows = read_u32(&mut r)? as usize;
    let nc = read_u32(&mut r)? as usize;
    let wd = read_u32(&mut r)? as usize;
    let ws = read_u32(&mut r)? as usize;
    let read_slices = |r: &mut R| -> Result<Vec<Range<usize>>> {
        let n = read_u32(r)? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let start = read_u32(r)? as usize;
            let end = read_u32(r)? as usize;
            out.push(start..end);
        }
        Ok(out)
    };
    let discrete_slices = read_slices(&mut r)?;
    let sensitive_slices = read_slices(&mut r)?;
    let read_block = |r: &mut R, cols: usize| -> Result<Array2<f64>> {
        let mut block = Array2::zeros((rows, cols));
        let mut buf = [0u8; 8];
        for c in 0..cols {
            for i in 0..rows {
                r.read_exact(&mut buf)?;
                block[[i, c]] = f64::from_le_bytes(buf);
            }
        }
        Ok(block)
    };
    let continuous = read_block(&mut r, nc)?;
    let discrete = read_block(&mut r, wd)?;
    let sensitive = read_block(&mut r, ws)?;
    let mut labels = vec![0u8; rows];
    r.read_exact(&mut labels)?;
    Ok(EncodedDataset {
        continuous,
        discrete,
        sensitive,
        labels,
        split,
        discrete_slices,
        sensitive_slices,
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{CategoricalColumn, ContinuousColumn, FeatureSchema, IngestOptions, LabelColumn};

    fn schema() -> FeatureSchema {
        FeatureSchema {
            version: 1,
            ingest: IngestOptions::default(),
            label: LabelColumn { name: "y".into(), positive: vec!["1".into()] },
            sensitive: vec![CategoricalColumn {
                name: "sex".into(),
                values: vec!["F".into(), "M".into()],
            }],
            discrete: vec![CategoricalColumn {
                name: "job".into(),
                values: vec!["a".into(), "b".into(), "c".into()],
            }],
            continuous: vec![ContinuousColumn { name: "age".into(), min: 0.0, max: 100.0 }],
        }
    }

    fn load(text: &str, schema: &FeatureSchema) -> RawTable {
        load_dataset_from_reader(text.as_bytes(), schema).unwrap()
    }

    #[test]
    fn three_clean_rows_ingest_identically() {
        let raw = load("age,job,sex,y\n10,a,F,1\n20,b,M,0\n30,c,F,1\n", &schema());
        assert_eq!(raw.n_rows(), 3);
        assert_eq!(raw.dropped_rows, 0);
        assert_eq!(raw.labels, vec![1, 0, 1]);
        assert_eq!(raw.discrete[0], vec![0, 1, 2]);
    }

    #[test]
    fn missing_schema_column_is_an_error() {
        let err = load_dataset_from_reader("age,job,y\n10,a,1\n".as_bytes(), &schema());
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn bad_cells_drop_rows() {
        let raw = load(
            "age,job,sex,y\nxx,a,F,1\n20,zz,M,0\n30,c,?,1\n40,a,M,0\n",
            &{
                let mut s = schema();
                s.ingest.missing = vec!["?".into()];
                s
            },
        );
        assert_eq!(raw.n_rows(), 1);
        assert_eq!(raw.dropped_rows, 3);
    }

    #[test]
    fn one_hot_and_minmax_encoding() {
        let raw = load("age,job,sex,y\n2,a,F,1\n4,b,M,0\n6,c,F,1\n", &schema());
        let (ds, stats) = encode_train(&raw, &schema());
        assert_eq!(stats.min[0], 2.0);
        assert_eq!(stats.max[0], 6.0);
        // {2,4,6}: value 4 scales to 0.5, endpoints to 0 and 1.
        assert_eq!(ds.continuous[[0, 0]], 0.0);
        assert_eq!(ds.continuous[[1, 0]], 0.5);
        assert_eq!(ds.continuous[[2, 0]], 1.0);
        // First declared categorical value maps to [1, 0, ...].
        assert_eq!(ds.discrete.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(ds.sensitive.row(1).to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn one_hot_soundness_every_slice_sums_to_one() {
        let raw = load("age,job,sex,y\n2,a,F,1\n4,b,M,0\n6,c,F,1\n", &schema());
        let (ds, _) = encode_train(&raw, &schema());
        for i in 0..ds.n_rows() {
            for s in &ds.discrete_slices {
                let sum: f64 = ds.discrete.row(i).slice(ndarray::s![s.clone()]).sum();
                assert_eq!(sum, 1.0);
            }
            for s in &ds.sensitive_slices {
                let sum: f64 = ds.sensitive.row(i).slice(ndarray::s![s.clone()]).sum();
                assert_eq!(sum, 1.0);
            }
        }
    }

    #[test]
    fn constant_column_encodes_as_zeros() {
        let raw = load("age,job,sex,y\n5,a,F,1\n5,b,M,0\n", &schema());
        let (ds, _) = encode_train(&raw, &schema());
        assert!(ds.continuous.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoding_is_deterministic_and_leakage_free() {
        let s = schema();
        let train = load("age,job,sex,y\n2,a,F,1\n6,b,M,0\n", &s);
        let test = load("age,job,sex,y\n4,c,F,1\n99,a,M,0\n", &s);
        let (_, stats) = encode_train(&train, &s);
        let stats_before = stats.clone();
        let t1 = encode_with(&test, &s, &stats, Split::Test);
        let t2 = encode_with(&test, &s, &stats, Split::Test);
        assert_eq!(t1, t2);
        assert_eq!(stats, stats_before);
        // Out-of-range test value clamps into [0, 1].
        assert_eq!(t1.continuous[[1, 0]], 1.0);
    }

    #[test]
    fn drop_sensitive_is_an_idempotent_projection() {
        let raw = load("age,job,sex,y\n2,a,F,1\n6,b,M,0\n", &schema());
        let (ds, _) = encode_train(&raw, &schema());
        let dropped = drop_sensitive(&ds);
        assert_eq!(dropped.sensitive.ncols(), 0);
        assert_eq!(dropped.continuous, ds.continuous);
        assert_eq!(dropped.discrete, ds.discrete);
        assert_eq!(dropped.width(), ds.width() - 2);
        assert_eq!(drop_sensitive(&dropped), dropped);
    }

    #[test]
    fn standardizer_zero_mean_unit_variance_on_train() {
        let raw = load("age,job,sex,y\n2,a,F,1\n4,b,M,0\n6,c,F,1\n", &schema());
        let (ds, _) = encode_train(&raw, &schema());
        let std = Standardizer::fit(&ds);
        let x = std.apply(&ds);
        for col in x.columns() {
            let m = col.sum() / col.len() as f64;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn encoded_binary_roundtrip() {
        let raw = load("age,job,sex,y\n2,a,F,1\n4,b,M,0\n6,c,F,1\n", &schema());
        let (ds, _) = encode_train(&raw, &schema());
        let mut buf = Vec::new();
        write_encoded(&ds, &mut buf).unwrap();
        let back = read_encoded(buf.as_slice()).unwrap();
        assert_eq!(ds, back);
        // Same payload twice: byte-identical.
        let mut buf2 = Vec::new();
        write_encoded(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn headerless_with_comment_and_alias_labels() {
        let mut s = schema();
        s.ingest.has_header = false;
        s.ingest.columns = Some(vec!["age".into(), "job".into(), "sex".into(), "y".into()]);
        s.ingest.comment = Some('|');
        s.label.positive = vec!["1".into(), "1.".into()];
        let raw = load("|header junk\n10,a,F,1.\n20,b,M,0.\n", &s);
        assert_eq!(raw.n_rows(), 2);
        assert_eq!(raw.labels, vec![1, 0]);
    }
}
