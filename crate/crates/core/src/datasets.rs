//! Labeled datasets: CSV ingestion, a flat binary format, and seeded
//! synthetic generators.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::numerics::Tensor;

pub const BINARY_MAGIC: &[u8; 4] = b"L3DS";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalize {
    #[default]
    None,
    /// Per-feature zero mean and unit standard deviation.
    Standardize,
}

/// Per-feature affine `x -> (x - mean) / scale` applied at ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Inputs `[N x in]` with dense labels `0..C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x: Tensor,
    y: Vec<usize>,
    num_classes: usize,
    class_names: Option<Vec<String>>,
    normalization: Option<Normalization>,
}

impl LabeledDataset {
    pub fn new(x: Tensor, y: Vec<usize>) -> Result<Self> {
        let (n, _) = x.dims2()?;
        if x.shape().len() != 2 {
            return Err(invalid("dataset inputs must be a matrix"));
        }
        if n == 0 {
            return Err(invalid("dataset has no samples"));
        }
        if y.len() != n {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                detail: format!("{} labels for {} samples", y.len(), n),
            });
        }
        let seen: BTreeSet<usize> = y.iter().copied().collect();
        let num_classes = seen.len();
        if seen.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(invalid("labels must cover 0..C without gaps"));
        }
        Ok(Self { x, y, num_classes, class_names: None, normalization: None })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(invalid(format!("{} class names for {} classes", names.len(), self.num_classes)));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Original label of each dense id, when ingested from a file.
    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// Rows at `idx`, keeping the full label space.
    pub fn subset(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.x.select_rows(idx)?;
        Ok((x, idx.iter().map(|&i| self.y[i]).collect()))
    }

    /// Per-class seeded split; `fraction` of every class goes to the second
    /// part (at least one sample when the class has two or more).
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(invalid(format!("split fraction must be in [0, 1), got {fraction}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = Vec::new();
        let mut held = Vec::new();
        for c in 0..self.num_classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.y[i] == c).collect();
            idx.shuffle(&mut rng);
            let mut k = (idx.len() as f64 * fraction).round() as usize;
            if fraction > 0.0 && k == 0 && idx.len() >= 2 {
                k = 1;
            }
            held.extend_from_slice(&idx[..k]);
            keep.extend_from_slice(&idx[k..]);
        }
        keep.sort_unstable();
        held.sort_unstable();
        Ok((keep, held))
    }

    /// The dataset restricted to `idx` as a standalone dataset with the same
    /// label ids; fails if a class disappears.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let (x, y) = self.subset(idx)?;
        let mut out = Self::new(x, y)?;
        if out.num_classes != self.num_classes {
            return Err(invalid("selection dropped a class"));
        }
        out.class_names = self.class_names.clone();
        out.normalization = self.normalization.clone();
        Ok(out)
    }
}

fn numeric_aware_order(labels: &BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = labels.iter().cloned().collect();
    let parsed: Option<Vec<f64>> = v.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    if let Some(nums) = parsed {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(v).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        v = pairs.into_iter().map(|p| p.1).collect();
    }
    v
}

/// Reads a headed CSV; every column other than `label_column` is a feature.
///
/// Labels are mapped to dense ids in sorted order (numeric order when all
/// labels parse as numbers), so reloading the same file is stable.
pub fn load_csv(path: &Path, label_column: &str, normalize: Normalize) -> Result<LabeledDataset> {
    let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_err(1, format!("no column named '{label_column}'")))?;
    let n_feat = headers.len() - 1;
    if n_feat == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut feats = Vec::new();
    let mut raw_labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for (j, field) in rec.iter().enumerate() {
            if j == label_idx {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric feature '{field}' in column '{}'", &headers[j])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature in column '{}'", &headers[j])));
            }
            feats.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(parse_err(1, "file has no data rows".into()));
    }

    let names = numeric_aware_order(&raw_labels.iter().cloned().collect());
    let ids: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let y: Vec<usize> = raw_labels.iter().map(|l| ids[l.as_str()]).collect();
    let n = raw_labels.len();
    let mut x = Tensor::matrix(n, n_feat, feats)?;
    let mut normalization = None;
    if normalize == Normalize::Standardize {
        let stats = standardize(&mut x);
        normalization = Some(stats);
    }
    let mut ds = LabeledDataset::new(x, y)?.with_class_names(names)?;
    ds.normalization = normalization;
    Ok(ds)
}

/// Writes a headed CSV with columns `x0..x{in-1}` and `label_column`.
pub fn write_csv(ds: &LabeledDataset, path: &Path, label_column: &str) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..ds.input_dim()).map(|j| format!("x{j}")).collect();
    header.push(label_column.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in ds.x.iter_rows().take(ds.len()).enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(match &ds.class_names {
            Some(names) => names[ds.y[i]].clone(),
            None => ds.y[i].to_string(),
        });
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Standardizes columns in place; constant columns are only centered.
fn standardize(x: &mut Tensor) -> Normalization {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; d];
    for row in x.iter_rows() {
        for j in 0..d {
            scale[j] += (row[j] - mean[j]).powi(2);
        }
    }
    for s in scale.iter_mut() {
        let sd = (*s / n as f64).sqrt();
        *s = if sd > 0.0 { sd } else { 1.0 };
    }
    let data = x.data_mut();
    for i in 0..n {
        for j in 0..d {
            data[i * d + j] = (data[i * d + j] - mean[j]) / scale[j];
        }
    }
    Normalization { mean, scale }
}

/// Serializes inputs and labels; layout `"L3DS"`, u32 version, u64 N, u64
/// in, u64 C, `N*in` f64, `N` i32, all little-endian.
pub fn to_binary(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(28 + ds.x.numel() * 8 + ds.len() * 4);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    for v in [ds.len(), ds.input_dim(), ds.num_classes()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in ds.x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &ds.y {
        let l = i32::try_from(l).map_err(|_| Error::Format(format!("label {l} exceeds i32")))?;
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn from_binary(bytes: &[u8]) -> Result<LabeledDataset> {
    let trunc = || Error::Format("dataset file truncated".into());
    if bytes.len() < 32 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
    let (n, d, c) = (word(0) as usize, word(1) as usize, word(2) as usize);
    let nx = n.checked_mul(d).ok_or_else(trunc)?;
    let expected = nx.checked_mul(8).and_then(|b| b.checked_add(32 + n.checked_mul(4)?)).ok_or_else(trunc)?;
    if bytes.len() != expected {
        return Err(Error::Format(format!("dataset file has {} bytes, expected {}", bytes.len(), expected)));
    }
    let mut pos = 32;
    let mut x = Vec::with_capacity(nx);
    for _ in 0..nx {
        x.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")));
        pos += 8;
    }
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let l = i32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
        pos += 4;
        y.push(usize::try_from(l).map_err(|_| Error::Format(format!("negative label {l}")))?);
    }
    let ds = LabeledDataset::new(Tensor::matrix(n, d, x)?, y)?;
    if ds.num_classes() != c {
        return Err(Error::Format(format!("header says {c} classes, labels have {}", ds.num_classes())));
    }
    Ok(ds)
}

pub fn write_binary(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let bytes = to_binary(ds)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<LabeledDataset> {
    from_binary(&fs::read(path)?)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim);
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Samples `per_class` points around each center with isotropic noise.
fn sample_around(centers: &[Vec<f64>], per_class: usize, spread: f64, rng: &mut ChaCha8Rng) -> Result<LabeledDataset> {
    let dim = centers[0].len();
    let mut x = Vec::with_capacity(centers.len() * per_class * dim);
    let mut y = Vec::with_capacity(centers.len() * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &m in center {
                let e: f64 = StandardNormal.sample(rng);
                x.push(m + spread * e);
            }
            y.push(c);
        }
    }
    LabeledDataset::new(Tensor::matrix(y.len(), dim, x)?, y)
}

fn check_generator(name: &str, vals: &[(&str, usize)]) -> Result<()> {
    for (field, v) in vals {
        if *v == 0 {
            return Err(invalid(format!("{name}: {field} must be positive")));
        }
    }
    Ok(())
}

/// Gaussian blobs around random unit-norm centers.
pub fn make_blobs(num_classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    check_generator("make_blobs", &[("num_classes", num_classes), ("per_class", per_class), ("dim", dim)])?;
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(invalid(format!("make_blobs: spread must be >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..num_classes).map(|_| unit_vec(&mut rng, dim)).collect();
    sample_around(&centers, per_class, spread, &mut rng)
}

/// Leaf centers of a random tree; level `l` (1-based) offsets have length
/// `0.5^(l-1)`, so siblings share more of their path than cousins.
pub fn tree_centers(branching: usize, depth: usize, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_generator("make_tree_data", &[("branching", branching), ("depth", depth), ("dim", dim)])?;
    let leaves = (0..depth).try_fold(1usize, |acc, _| acc.checked_mul(branching));
    if leaves.is_none_or(|l| l > 1 << 20) {
        return Err(invalid("make_tree_data: tree has too many leaves"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = vec![vec![0.0; dim]];
    for l in 1..=depth {
        let scale = 0.5f64.powi(l as i32 - 1);
        let mut next = Vec::with_capacity(level.len() * branching);
        for parent in &level {
            for _ in 0..branching {
                let dir = unit_vec(&mut rng, dim);
                next.push(parent.iter().zip(&dir).map(|(p, u)| p + scale * u).collect());
            }
        }
        level = next;
    }
    Ok(level)
}

/// Hierarchical classes: one class per leaf of a random tree of offsets,
/// samples drawn around each leaf center with stdev `noise`.
pub fn make_tree_data(
    branching: usize,
    depth: usize,
    per_leaf: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    check_generator("make_tree_data", &[("per_leaf", per_leaf)])?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(invalid(format!("make_tree_data: noise must be >= 0, got {noise}")));
    }
    let centers = tree_centers(branching, depth, dim, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    sample_around(&centers, per_leaf, noise, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_zero_spread_hit_centers() {
        let ds = make_blobs(3, 4, 5, 0.0, 9).unwrap();
        assert_eq!(ds.len(), 12);
        for c in 0..3 {
            let rows: Vec<&[f64]> = (0..12).filter(|&i| ds.y()[i] == c).map(|i| ds.x().row(i)).collect();
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
            let n: f64 = rows[0].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(make_blobs(2, 3, 4, 0.3, 5).unwrap(), make_blobs(2, 3, 4, 0.3, 5).unwrap());
        assert_ne!(make_blobs(2, 3, 4, 0.3, 5).unwrap(), make_blobs(2, 3, 4, 0.3, 6).unwrap());
        assert_eq!(make_tree_data(2, 3, 2, 4, 0.1, 1).unwrap(), make_tree_data(2, 3, 2, 4, 0.1, 1).unwrap());
    }

    #[test]
    fn tree_depth_one_is_blobs_shape() {
        let ds = make_tree_data(4, 1, 3, 6, 0.0, 2).unwrap();
        assert_eq!(ds.num_classes(), 4);
        for i in 0..ds.len() {
            let n: f64 = ds.x().row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(make_blobs(0, 1, 1, 0.1, 0).is_err());
        assert!(make_tree_data(2, 0, 1, 1, 0.1, 0).is_err());
        assert!(make_blobs(2, 1, 1, -1.0, 0).is_err());
    }

    #[test]
    fn stratified_split_keeps_every_class() {
        let ds = make_blobs(3, 10, 2, 0.1, 0).unwrap();
        let (a, b) = ds.stratified_split(0.2, 4).unwrap();
        assert_eq!(a.len() + b.len(), 30);
        assert_eq!(b.len(), 6);
        for c in 0..3 {
            assert_eq!(b.iter().filter(|&&i| ds.y()[i] == c).count(), 2);
        }
        assert_eq!(ds.stratified_split(0.2, 4).unwrap(), (a, b));
    }

    #[test]
    fn labels_must_be_dense() {
        let x = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(LabeledDataset::new(x, vec![0, 2]).is_err());
    }
}
