//! Embedding, label and class-catalog files, plus the synthetic open-set
//! generator used for desk-scale verification.
//!
//! # EMB1
//!
//! Little-endian binary matrix:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `b"EMB1"` |
//! | 4..8  | `u32` rows |
//! | 8..12 | `u32` dim |
//! | 12..  | `rows * dim` IEEE-754 `f32`, row-major |
//!
//! Files ending in `.csv` are read as comma-separated decimals, one row per
//! line, no header. Matrices are held in memory as `f64`; saving narrows to
//! `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_HEADER_LEN: usize = 12;

/// Tolerance on row norms for a matrix to count as L2-normalized.
pub const NORM_TOLERANCE: f64 = 1e-5;

/// Dense row-major matrix of feature vectors (samples or class anchors).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Validates shape and finiteness; the `normalized` flag is derived from
    /// the row norms.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (rows, dim) = data.dim();
        if rows == 0 || dim == 0 {
            return Err(Error::DimMismatch(format!(
                "embedding matrix must be at least 1x1, got {rows}x{dim}"
            )));
        }
        for ((row, col), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row, col });
            }
        }
        let normalized = data
            .rows()
            .into_iter()
            .all(|r| (l2_norm(r) - 1.0).abs() <= NORM_TOLERANCE);
        Ok(Self { data, normalized })
    }

    pub fn from_vec(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::DimMismatch(format!(
                "{rows}x{dim} matrix needs {} values, got {}",
                rows * dim,
                values.len()
            )));
        }
        let data = Array2::from_shape_vec((rows, dim), values)
            .map_err(|e| Error::DimMismatch(e.to_string()))?;
        Self::new(data)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// True when every row has unit L2 norm within [`NORM_TOLERANCE`].
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// Returns a copy with every non-zero row scaled to unit length.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for mut row in data.axis_iter_mut(Axis(0)) {
            let n = l2_norm(row.view());
            if n > 0.0 {
                row.mapv_inplace(|v| v / n);
            }
        }
        let normalized = data
            .rows()
            .into_iter()
            .all(|r| (l2_norm(r) - 1.0).abs() <= NORM_TOLERANCE);
        Self { data, normalized }
    }
}

pub(crate) fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Loads an EMB1 file, or a CSV file when the extension is `.csv`.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let bytes = fs::read(path)?;
    if is_csv {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Malformed(format!("{}: not UTF-8 text", path.display())))?;
        parse_csv(&text)
    } else {
        decode_emb1(&bytes).map_err(|e| match e {
            Error::MagicMismatch { .. } => Error::MagicMismatch {
                path: path.to_path_buf(),
            },
            other => other,
        })
    }
}

/// Parses an in-memory EMB1 buffer.
pub fn decode_emb1(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 || &bytes[..4] != EMB1_MAGIC {
        return Err(Error::MagicMismatch {
            path: Default::default(),
        });
    }
    if bytes.len() < EMB1_HEADER_LEN {
        return Err(Error::DimMismatch("truncated EMB1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[EMB1_HEADER_LEN..];
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::DimMismatch(format!("header {rows}x{dim} overflows")))?;
    if payload.len() != expected {
        return Err(Error::DimMismatch(format!(
            "header declares {rows}x{dim} ({expected} payload bytes), found {}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingMatrix::from_vec(rows, dim, values)
}

/// Serializes to EMB1 bytes. Values are narrowed to `f32`.
pub fn encode_emb1(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(matrix.rows())
        .map_err(|_| Error::DimMismatch("too many rows for EMB1".into()))?;
    let dim = u32::try_from(matrix.dim())
        .map_err(|_| Error::DimMismatch("dimension too large for EMB1".into()))?;
    let mut out = Vec::with_capacity(EMB1_HEADER_LEN + matrix.rows() * matrix.dim() * 4);
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for v in matrix.data.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn save_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_emb1(matrix)?)
}

fn parse_csv(text: &str) -> Result<EmbeddingMatrix> {
    let mut values = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Malformed(format!("line {}: cannot parse {field:?}", lineno + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    row: rows,
                    col: values.len() - before,
                });
            }
            values.push(v);
        }
        let width = values.len() - before;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::DimMismatch(format!(
                    "line {} has {width} values, expected {d}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    EmbeddingMatrix::from_vec(rows, dim.unwrap_or(0), values)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Ordered list of known class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidCatalog(format!(
                "need at least 2 classes, got {}",
                names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::InvalidCatalog("empty class name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidCatalog(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl TryFrom<Vec<String>> for ClassCatalog {
    type Error = Error;
    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<ClassCatalog> for Vec<String> {
    fn from(c: ClassCatalog) -> Self {
        c.names
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<ClassCatalog> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn save_catalog(catalog: &ClassCatalog, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &serde_json::to_vec(catalog)?)
}

/// Per-sample labels: `0..C` are known classes, `C` marks unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelFile", into = "LabelFile")]
pub struct LabelVector {
    labels: Vec<usize>,
    num_known: usize,
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    #[serde(rename = "C")]
    c: usize,
    labels: Vec<usize>,
}

impl TryFrom<LabelFile> for LabelVector {
    type Error = Error;
    fn try_from(f: LabelFile) -> Result<Self> {
        Self::new(f.labels, f.c)
    }
}

impl From<LabelVector> for LabelFile {
    fn from(v: LabelVector) -> Self {
        LabelFile {
            c: v.num_known,
            labels: v.labels,
        }
    }
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_known: usize) -> Result<Self> {
        if num_known == 0 {
            return Err(Error::InvalidLabels("C must be at least 1".into()));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l > num_known) {
            return Err(Error::InvalidLabels(format!(
                "label {l} at index {i} exceeds C = {num_known}"
            )));
        }
        Ok(Self { labels, num_known })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `C`, which doubles as the unknown label.
    pub fn num_known(&self) -> usize {
        self.num_known
    }

    pub fn unknown_label(&self) -> usize {
        self.num_known
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_unknown(&self, i: usize) -> bool {
        self.labels[i] == self.num_known
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn save_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &serde_json::to_vec(labels)?)
}

/// Parameters of the synthetic open-set generator.
///
/// Noise sigmas are per-coordinate standard deviations, so the expected
/// noise vector length is about `sigma * sqrt(dim)` against a unit centre.
/// The defaults put that length near 2.4 at `dim = 256`, which keeps
/// zero-shot accuracy imperfect and the known/unknown score modes overlapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub c_known: usize,
    pub c_unknown: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub known_noise_sigma: f64,
    pub unknown_noise_sigma: f64,
    /// Fraction of unknown classes whose centre sits near a known centre.
    pub tendency_fraction: f64,
    /// Offset length (orthogonal to the chosen known centre, before
    /// renormalisation) of a tendency centre; the angle is `atan(distance)`.
    pub tendency_distance: f64,
    pub anchor_perturb_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            c_known: 10,
            c_unknown: 10,
            dim: 256,
            samples_per_class: 50,
            known_noise_sigma: 0.15,
            unknown_noise_sigma: 0.15,
            tendency_fraction: 0.4,
            tendency_distance: 1.25,
            anchor_perturb_sigma: 0.03,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.c_known < 1 || self.c_unknown < 1 || self.dim < 1 || self.samples_per_class < 1 {
            return bad("all counts must be at least 1");
        }
        let sigmas = [
            self.known_noise_sigma,
            self.unknown_noise_sigma,
            self.anchor_perturb_sigma,
            self.tendency_distance,
        ];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("sigmas and tendency distance must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.tendency_fraction) {
            return bad("tendency_fraction must lie in [0, 1]");
        }
        if self.dim < 2 && self.tendency_fraction > 0.0 && self.tendency_distance > 0.0 {
            return bad("tendency offsets need dim >= 2");
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        (self.c_known + self.c_unknown) * self.samples_per_class
    }

    /// Number of unknown classes placed near a known centre.
    pub fn tendency_classes(&self) -> usize {
        (self.tendency_fraction * self.c_unknown as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub samples: EmbeddingMatrix,
    pub anchors: EmbeddingMatrix,
    pub labels: LabelVector,
    /// For each unknown class, the known class it leans toward (if any).
    pub tendency_targets: Vec<Option<usize>>,
}

/// Gaussian source with a frozen definition: ChaCha20 seeded via
/// `seed_from_u64`, uniforms from `Rng::random::<f64>()` (53-bit), and the
/// Box-Muller transform emitting the cosine branch then the sine branch.
/// Changing any of these changes every synthetic dataset.
struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    fn gaussian_vec(&mut self, dim: usize, std: f64) -> Vec<f64> {
        (0..dim).map(|_| std * self.standard_normal()).collect()
    }

    fn unit_vec(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let mut v = self.gaussian_vec(dim, 1.0);
            if normalize(&mut v) {
                return v;
            }
        }
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

fn add_scaled(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Unit vector orthogonal to `base` (assumed unit length).
fn orthogonal_unit(stream: &mut NormalStream, base: &[f64]) -> Vec<f64> {
    loop {
        let mut v = stream.gaussian_vec(base.len(), 1.0);
        let dot: f64 = v.iter().zip(base).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(base).for_each(|(x, b)| *x -= dot * b);
        if normalize(&mut v) {
            return v;
        }
    }
}

/// Rounds through `f32` so the in-memory matrix equals what EMB1 stores.
fn to_f32_grid(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

/// Deterministic synthetic open-set dataset.
///
/// Known classes come first (`samples_per_class` rows each, labels `0..C`),
/// then all unknown classes (label `C`). The first
/// [`SyntheticConfig::tendency_classes`] unknown classes lean toward a random
/// known class.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let dim = config.dim;
    let mut stream = NormalStream::new(config.seed);

    let known_centers: Vec<Vec<f64>> = (0..config.c_known).map(|_| stream.unit_vec(dim)).collect();

    let n_tendency = config.tendency_classes();
    let mut tendency_targets = Vec::with_capacity(config.c_unknown);
    let mut unknown_centers = Vec::with_capacity(config.c_unknown);
    for j in 0..config.c_unknown {
        if j < n_tendency {
            let k = stream.below(config.c_known);
            let offset = orthogonal_unit(&mut stream, &known_centers[k]);
            let mut c = add_scaled(&known_centers[k], &offset, config.tendency_distance);
            normalize(&mut c);
            unknown_centers.push(c);
            tendency_targets.push(Some(k));
        } else {
            unknown_centers.push(stream.unit_vec(dim));
            tendency_targets.push(None);
        }
    }

    let mut rows = Vec::with_capacity(config.total_samples() * dim);
    let mut labels = Vec::with_capacity(config.total_samples());
    let classes = known_centers
        .iter()
        .enumerate()
        .map(|(k, c)| (c, k, config.known_noise_sigma))
        .chain(
            unknown_centers
                .iter()
                .map(|c| (c, config.c_known, config.unknown_noise_sigma)),
        );
    for (center, label, sigma) in classes {
        for _ in 0..config.samples_per_class {
            let noise = stream.gaussian_vec(dim, sigma);
            let mut x = add_scaled(center, &noise, 1.0);
            if !normalize(&mut x) {
                x = center.clone();
            }
            rows.extend(to_f32_grid(x));
            labels.push(label);
        }
    }

    let mut anchors = Vec::with_capacity(config.c_known * dim);
    for center in &known_centers {
        let noise = stream.gaussian_vec(dim, config.anchor_perturb_sigma);
        let mut a = add_scaled(center, &noise, 1.0);
        if !normalize(&mut a) {
            a = center.clone();
        }
        anchors.extend(to_f32_grid(a));
    }

    Ok(SyntheticData {
        samples: EmbeddingMatrix::from_vec(labels.len(), dim, rows)?,
        anchors: EmbeddingMatrix::from_vec(config.c_known, dim, anchors)?,
        labels: LabelVector::new(labels, config.c_known)?,
        tendency_targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rows_load() {
        let mut bytes = b"EMB1".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for v in [1f32, 0., 0., 0., 1., 0.] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_emb1(&bytes).unwrap();
        assert_eq!((m.rows(), m.dim()), (2, 3));
        assert!(m.is_normalized());
        assert_eq!(m.row(1).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn payload_length_mismatch() {
        let mut bytes = b"EMB1".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&1f32.to_le_bytes());
        assert!(matches!(decode_emb1(&bytes), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn bad_magic_and_nan() {
        assert!(matches!(
            decode_emb1(b"EMB2\0\0\0\0\0\0\0\0"),
            Err(Error::MagicMismatch { .. })
        ));
        let mut bytes = b"EMB1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1f32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_emb1(&bytes),
            Err(Error::NonFiniteValue { row: 0, col: 1 })
        ));
    }

    #[test]
    fn minimal_file_is_sixteen_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.emb");
        let m = EmbeddingMatrix::from_vec(1, 1, vec![0.5]).unwrap();
        save_embeddings(&m, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 16);
        assert_eq!(load_embeddings(&path).unwrap(), m);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let m = EmbeddingMatrix::from_vec(1, 1, vec![0.5]).unwrap();
        let err = save_embeddings(&m, "/nonexistent-dir/x/y.emb").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn csv_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,0\n0.6, 0.8\n").unwrap();
        let m = load_embeddings(&path).unwrap();
        assert_eq!((m.rows(), m.dim()), (2, 2));
        assert!(m.is_normalized());
        fs::write(&path, "1,0\n0.6\n").unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::DimMismatch(_))));
        fs::write(&path, "1,inf\n").unwrap();
        assert!(matches!(
            load_embeddings(&path),
            Err(Error::NonFiniteValue { .. } | Error::Malformed(_))
        ));
    }

    #[test]
    fn label_sidecar_round_trip_and_validation() {
        let json = r#"{"C": 3, "labels": [0, 2, 3, 1]}"#;
        let l: LabelVector = serde_json::from_str(json).unwrap();
        assert_eq!(l.num_known(), 3);
        assert!(l.is_unknown(2));
        let back = serde_json::to_string(&l).unwrap();
        assert_eq!(back, r#"{"C":3,"labels":[0,2,3,1]}"#);
        assert!(serde_json::from_str::<LabelVector>(r#"{"C": 2, "labels": [3]}"#).is_err());
    }

    #[test]
    fn catalog_validation() {
        let c: ClassCatalog = serde_json::from_str(r#"["cat", "dog"]"#).unwrap();
        assert_eq!(c.len(), 2);
        assert!(serde_json::from_str::<ClassCatalog>(r#"["cat"]"#).is_err());
        assert!(serde_json::from_str::<ClassCatalog>(r#"["cat", "cat"]"#).is_err());
    }

    #[test]
    fn synthetic_counts() {
        let cfg = SyntheticConfig {
            c_known: 3,
            c_unknown: 2,
            samples_per_class: 10,
            dim: 16,
            ..Default::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        assert_eq!(d.samples.rows(), 50);
        assert_eq!(d.anchors.rows(), 3);
        assert_eq!(d.labels.labels().iter().filter(|&&l| l == 3).count(), 20);
        assert!(d.samples.is_normalized());
        assert!(d.anchors.is_normalized());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig {
            seed: 42,
            dim: 32,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(encode_emb1(&a.samples).unwrap(), encode_emb1(&b.samples).unwrap());
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn noiseless_known_samples_match_anchor() {
        let cfg = SyntheticConfig {
            known_noise_sigma: 0.0,
            unknown_noise_sigma: 0.0,
            anchor_perturb_sigma: 0.0,
            dim: 24,
            ..Default::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        for (i, &l) in d.labels.labels().iter().enumerate() {
            if l < cfg.c_known {
                let cos = d.samples.row(i).dot(&d.anchors.row(l));
                assert!((cos - 1.0).abs() < 1e-6, "row {i}: cos {cos}");
            }
        }
    }

    #[test]
    fn tendency_centres_lean_toward_target() {
        let cfg = SyntheticConfig {
            known_noise_sigma: 0.0,
            unknown_noise_sigma: 0.0,
            anchor_perturb_sigma: 0.0,
            tendency_fraction: 1.0,
            tendency_distance: 0.5,
            dim: 64,
            c_unknown: 4,
            samples_per_class: 1,
            ..Default::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        let expected = 1.0 / (1.0f64 + 0.25).sqrt();
        for (j, target) in d.tendency_targets.iter().enumerate() {
            let k = target.unwrap();
            let cos = d.samples.row(cfg.c_known + j).dot(&d.anchors.row(k));
            assert!((cos - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SyntheticConfig {
            tendency_fraction: 1.5,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
        let cfg = SyntheticConfig {
            c_known: 0,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
    }
}
