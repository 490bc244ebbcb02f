//! Datasets, domain pairs, file formats, feature normalization and the
//! synthetic rotated-blob task.
//!
//! Samples are stored as columns, so a dataset with `m` features and `n`
//! samples is an `m x n` matrix. Labels are 1-based everywhere.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Matrix2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Dimension of the ambient space used by [`make_synthetic_pair`].
pub const SYNTHETIC_DIM: usize = 20;

const MAGIC: &[u8; 4] = b"SDAM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        let (m, n) = features.shape();
        if m == 0 || n == 0 {
            return Err(Error::data(format!("dataset must be non-empty, got {m}x{n}")));
        }
        for j in 0..n {
            for i in 0..m {
                let v = features[(i, j)];
                if !v.is_finite() {
                    return Err(Error::data(format!(
                        "non-finite value {v} at feature {i}, sample {j}"
                    )));
                }
            }
        }
        if let Some(labels) = &labels {
            check_labels(labels, n)?;
        }
        Ok(Dataset { features, labels })
    }

    pub fn unlabeled(features: Matrix) -> Result<Self> {
        Self::new(features, None)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of features `m`.
    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    /// Number of samples `n`.
    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest label, or 0 when unlabeled.
    pub fn class_count(&self) -> usize {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().unwrap_or(0))
            .unwrap_or(0)
    }

    pub fn without_labels(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: None,
        }
    }

    pub fn with_labels(self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(self.features, Some(labels))
    }
}

fn check_labels(labels: &[usize], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::data(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if let Some(pos) = labels.iter().position(|&l| l == 0) {
        return Err(Error::data(format!("label 0 at sample {pos}; labels are 1-based")));
    }
    let c = labels.iter().copied().max().unwrap_or(0);
    let mut seen = vec![false; c];
    for &l in labels {
        seen[l - 1] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::data(format!(
            "class {} of 1..{c} has no samples",
            missing + 1
        )));
    }
    Ok(())
}

/// Labeled source plus target whose labels are only ever used for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source: Dataset,
    pub target: Dataset,
    pub class_count: usize,
}

impl DomainPair {
    pub fn new(source: Dataset, target: Dataset) -> Result<Self> {
        if source.labels().is_none() {
            return Err(Error::data("source domain must be labeled"));
        }
        if source.dim() != target.dim() {
            return Err(Error::data(format!(
                "feature dimensions differ: source {} vs target {}",
                source.dim(),
                target.dim()
            )));
        }
        let class_count = source.class_count();
        if target.class_count() > class_count {
            return Err(Error::data(format!(
                "target label {} outside source classes 1..{class_count}",
                target.class_count()
            )));
        }
        Ok(DomainPair {
            source,
            target,
            class_count,
        })
    }

    pub fn source_labels(&self) -> &[usize] {
        self.source.labels().expect("source labels checked on construction")
    }

    pub fn ns(&self) -> usize {
        self.source.len()
    }

    pub fn nt(&self) -> usize {
        self.target.len()
    }

    /// `X = [Xs Xt]`, `m x (ns + nt)`.
    pub fn joint_features(&self) -> Matrix {
        let m = self.source.dim();
        let (ns, nt) = (self.ns(), self.nt());
        let mut x = Matrix::zeros(m, ns + nt);
        x.columns_mut(0, ns).copy_from(self.source.features());
        x.columns_mut(ns, nt).copy_from(self.target.features());
        x
    }
}

/// Per-class sample positions on each side. Source positions are `0..ns`,
/// target positions are `0..nt` (local to the target block).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubDomainIndex {
    class_count: usize,
    ns: usize,
    nt: usize,
    source: Vec<Vec<usize>>,
    target: Vec<Vec<usize>>,
}

impl SubDomainIndex {
    pub fn from_labels(source_labels: &[usize], target_labels: &[usize], class_count: usize) -> Result<Self> {
        let bucket = |labels: &[usize], side: &str| -> Result<Vec<Vec<usize>>> {
            let mut out = vec![Vec::new(); class_count];
            for (i, &l) in labels.iter().enumerate() {
                if l == 0 || l > class_count {
                    return Err(Error::data(format!(
                        "{side} label {l} at position {i} outside 1..{class_count}"
                    )));
                }
                out[l - 1].push(i);
            }
            Ok(out)
        };
        Ok(SubDomainIndex {
            class_count,
            ns: source_labels.len(),
            nt: target_labels.len(),
            source: bucket(source_labels, "source")?,
            target: bucket(target_labels, "target")?,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn ns(&self) -> usize {
        self.ns
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn source_indices(&self, c: usize) -> &[usize] {
        &self.source[c - 1]
    }

    pub fn target_indices(&self, c: usize) -> &[usize] {
        &self.target[c - 1]
    }

    pub fn ns_c(&self, c: usize) -> usize {
        self.source[c - 1].len()
    }

    pub fn nt_c(&self, c: usize) -> usize {
        self.target[c - 1].len()
    }

    pub fn target_empty(&self, c: usize) -> bool {
        self.nt_c(c) == 0
    }

    /// Classes with no target samples.
    pub fn empty_target_classes(&self) -> Vec<usize> {
        (1..=self.class_count).filter(|&c| self.target_empty(c)).collect()
    }
}

pub fn index_subdomains(pair: &DomainPair, target_pseudo: &[usize]) -> Result<SubDomainIndex> {
    if target_pseudo.len() != pair.nt() {
        return Err(Error::data(format!(
            "{} pseudo-labels for {} target samples",
            target_pseudo.len(),
            pair.nt()
        )));
    }
    SubDomainIndex::from_labels(pair.source_labels(), target_pseudo, pair.class_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    None,
    #[default]
    ZscoreThenUnitL2,
    UnitL2,
}

pub fn normalize(d: &Dataset, mode: NormalizeMode) -> Result<Dataset> {
    let mut x = d.features().clone();
    match mode {
        NormalizeMode::None => return Ok(d.clone()),
        NormalizeMode::ZscoreThenUnitL2 => {
            zscore_rows(&mut x);
            unit_columns(&mut x)?;
        }
        NormalizeMode::UnitL2 => unit_columns(&mut x)?,
    }
    Ok(Dataset {
        features: x,
        labels: d.labels.clone(),
    })
}

/// Zero-variance rows are only centered.
fn zscore_rows(x: &mut Matrix) {
    let n = x.ncols() as f64;
    for mut row in x.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
        let sd = (row.norm_squared() / n).sqrt();
        if sd > f64::EPSILON * (1.0 + mean.abs()) {
            row /= sd;
        }
    }
}

fn unit_columns(x: &mut Matrix) -> Result<()> {
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::data(format!("sample column {j} is all zeros, cannot scale to unit norm")));
        }
        col /= norm;
    }
    Ok(())
}

/// `class_count` 2-D Gaussian blobs embedded in [`SYNTHETIC_DIM`] dimensions
/// by a random orthonormal map. The target blobs are rotated about the
/// origin of the latent plane before embedding. Blob `c` (0-based) is
/// centered at `(6 + 2c, 0)` with isotropic standard deviation `noise_sd`.
pub fn make_synthetic_pair(
    seed: u64,
    n_per_class: usize,
    class_count: usize,
    rotation_deg: f64,
    noise_sd: f64,
) -> Result<DomainPair> {
    if class_count < 2 || n_per_class < 2 {
        return Err(Error::config(format!(
            "synthetic task needs class_count >= 2 and n_per_class >= 2, got {class_count} and {n_per_class}"
        )));
    }
    if !(noise_sd >= 0.0) || !rotation_deg.is_finite() {
        return Err(Error::config("noise_sd must be >= 0 and rotation finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Matrix::from_fn(SYNTHETIC_DIM, 2, |_, _| StandardNormal.sample(&mut rng));
    let q = gauss.qr().q();

    let th = rotation_deg.to_radians();
    let rot = Matrix2::new(th.cos(), -th.sin(), th.sin(), th.cos());

    let n = n_per_class * class_count;
    let labels: Vec<usize> = (0..n).map(|j| j / n_per_class + 1).collect();
    let mut blobs = |rotate: bool| {
        let mut lat = Matrix::zeros(2, n);
        for j in 0..n {
            let c = (j / n_per_class) as f64;
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            let mut p = nalgebra::Vector2::new(6.0 + 2.0 * c + noise_sd * dx, noise_sd * dy);
            if rotate {
                p = rot * p;
            }
            lat.set_column(j, &p);
        }
        &q * lat
    };
    let xs = blobs(false);
    let xt = blobs(true);
    DomainPair::new(
        Dataset::new(xs, Some(labels.clone()))?,
        Dataset::new(xt, Some(labels))?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    BinaryMatrix,
}

impl Format {
    /// `.csv` maps to CSV, anything else to the binary-matrix format.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::BinaryMatrix,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    match format {
        Format::Csv => load_csv(path),
        Format::BinaryMatrix => load_binary(path),
    }
}

pub fn write_dataset(path: &Path, d: &Dataset, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(path, d),
        Format::BinaryMatrix => write_binary(path, d),
    }
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(file));
    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, 0, e.to_string()))?
        .clone();
    let has_labels = header.iter().next_back() == Some("label");
    let m = header.len() - usize::from(has_labels);
    for (i, name) in header.iter().take(m).enumerate() {
        if name != format!("f{i}") {
            return Err(parse_err(1, i + 1, format!("expected header `f{i}`, found `{name}`")));
        }
    }
    if m == 0 {
        return Err(parse_err(1, 1, "no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| parse_err(row, 0, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(row, record.len(), format!("expected {} fields", header.len())));
        }
        for (i, field) in record.iter().take(m).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(row, i + 1, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(row, i + 1, format!("non-finite feature `{field}`")));
            }
            values.push(v);
        }
        if has_labels {
            let field = record.get(m).unwrap_or_default().trim();
            let l: i64 = field
                .parse()
                .map_err(|_| parse_err(row, m + 1, format!("`{field}` is not an integer label")))?;
            if l < 1 {
                return Err(parse_err(row, m + 1, format!("label {l} is below 1")));
            }
            labels.push(l as usize);
        }
    }
    let n = values.len() / m;
    // rows of the file are samples, i.e. columns of the matrix
    let x = Matrix::from_vec(m, n, values);
    Dataset::new(x, has_labels.then_some(labels))
}

fn write_csv(path: &Path, d: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let m = d.dim();
    let mut header: Vec<String> = (0..m).map(|i| format!("f{i}")).collect();
    if d.labels().is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(",")).map_err(io_err(path))?;
    for j in 0..d.len() {
        let mut fields: Vec<String> = d.features().column(j).iter().map(|v| v.to_string()).collect();
        if let Some(labels) = d.labels() {
            fields.push(labels[j].to_string());
        }
        writeln!(w, "{}", fields.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn load_binary(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(io_err(path))?;
    let bad = |offset: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        row: 0,
        column: offset,
        message: message.to_string(),
    };
    let take = |offset: usize, len: usize| -> Result<&[u8]> {
        buf.get(offset..offset + len).ok_or_else(|| bad(offset, "unexpected end of file"))
    };
    if take(0, 4)? != MAGIC {
        return Err(bad(0, "bad magic, expected SDAM"));
    }
    let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(4, &format!("unsupported version {version}")));
    }
    let m = u64::from_le_bytes(take(8, 8)?.try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(take(16, 8)?.try_into().unwrap()) as usize;
    let has_labels = match take(24, 1)?[0] {
        0 => false,
        1 => true,
        other => return Err(bad(24, &format!("has_labels flag {other} is not 0 or 1"))),
    };
    let mut offset = 25;
    let count = m.checked_mul(n).ok_or_else(|| bad(8, "matrix size overflows"))?;
    let body = take(offset, count.checked_mul(8).ok_or_else(|| bad(8, "matrix size overflows"))?)?;
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    offset += count * 8;
    let labels = if has_labels {
        let raw = take(offset, n * 4)?;
        let mut labels = Vec::with_capacity(n);
        for (j, c) in raw.chunks_exact(4).enumerate() {
            let l = i32::from_le_bytes(c.try_into().unwrap());
            if l < 1 {
                return Err(bad(offset + 4 * j, &format!("label {l} of sample {j} is below 1")));
            }
            labels.push(l as usize);
        }
        offset += n * 4;
        Some(labels)
    } else {
        None
    };
    if offset != buf.len() {
        return Err(bad(offset, "trailing bytes after payload"));
    }
    Dataset::new(Matrix::from_vec(m, n, values), labels)
}

fn write_binary(path: &Path, d: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut out = Vec::with_capacity(25 + 8 * d.dim() * d.len() + 4 * d.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(d.len() as u64).to_le_bytes());
    out.push(u8::from(d.labels().is_some()));
    // nalgebra storage is column-major already
    for v in d.features().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = d.labels() {
        for &l in labels {
            let l = i32::try_from(l).map_err(|_| Error::data(format!("label {l} does not fit in i32")))?;
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    w.write_all(&out).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Reads a label file: CSV with a `label` header, one integer per row.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let head = lines.next().unwrap_or_default().trim();
    if head != "label" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            column: 1,
            message: format!("expected header `label`, found `{head}`"),
        });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().ok().filter(|&v| v >= 1).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row: i + 2,
                column: 1,
                message: format!("`{}` is not a label >= 1", l.trim()),
            })
        })
        .collect()
}
