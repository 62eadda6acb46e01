//! Dataset loading, normalization, stratified splitting and synthetic data.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Default z-score clip applied after normalization.
pub const DEFAULT_CLIP_K: f64 = 5.0;

/// Binary-labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
    pub label_name: String,
    /// Column position of the label in the source CSV; preserved on write.
    pub label_position: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        let d = features.cols();
        Self::with_label(features, labels, feature_names, "Class".into(), d)
    }

    pub fn with_label(
        features: Matrix,
        labels: Vec<u8>,
        feature_names: Vec<String>,
        label_name: String,
        label_position: usize,
    ) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::invalid("dataset needs at least one row and one feature"));
        }
        if labels.len() != features.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::invalid("feature name count differs from column count"));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        if !features.is_finite() {
            return Err(Error::invalid("features contain NaN or infinite values"));
        }
        if label_position > features.cols() {
            return Err(Error::invalid("label position out of range"));
        }
        Ok(Dataset {
            features,
            labels,
            feature_names,
            label_name,
            label_position,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    /// `[count of 0, count of 1]`.
    pub fn class_counts(&self) -> [usize; 2] {
        class_counts(&self.labels)
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
            label_position: self.label_position,
        }
    }

    pub fn indices_of(&self, label: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Appends rows with the same schema.
    pub(crate) fn extend_rows(&mut self, rows: &[Vec<f64>], label: u8) {
        if rows.is_empty() {
            return;
        }
        let d = self.d();
        let mut data = self.features.as_slice().to_vec();
        for r in rows {
            debug_assert_eq!(r.len(), d);
            data.extend_from_slice(r);
        }
        self.features = Matrix::from_vec(data.len() / d, d, data).expect("row width");
        self.labels.extend(std::iter::repeat_n(label, rows.len()));
    }

    /// Header in file order, label included.
    pub fn header(&self) -> Vec<String> {
        let mut h = self.feature_names.clone();
        h.insert(self.label_position, self.label_name.clone());
        h
    }
}

pub fn class_counts(labels: &[u8]) -> [usize; 2] {
    let ones = labels.iter().filter(|&&y| y == 1).count();
    [labels.len() - ones, ones]
}

/// Reads a header-bearing numeric CSV. `label_column` must hold 0/1 values.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let parse_err = |row: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let label_pos = header.iter().position(|h| h == label_column).ok_or_else(|| {
        Error::invalid(format!(
            "label column '{label_column}' not found; available columns: {}",
            header.join(", ")
        ))
    })?;
    if header.len() < 2 {
        return Err(Error::invalid("need at least one feature column besides the label"));
    }
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_pos)
        .map(|(_, h)| h.clone())
        .collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        for (i, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(line, format!("column '{}': '{cell}' is not numeric", header[i]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column '{}': non-finite value", header[i])));
            }
            if i == label_pos {
                if v == 0.0 {
                    labels.push(0);
                } else if v == 1.0 {
                    labels.push(1);
                } else {
                    return Err(parse_err(line, format!("label '{cell}' is not 0 or 1")));
                }
            } else {
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let features = Matrix::from_vec(labels.len(), feature_names.len(), data)?;
    Dataset::with_label(
        features,
        labels,
        feature_names,
        label_column.to_string(),
        label_pos,
    )
}

/// Writes the dataset with its original column layout. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&ds.header().join(","));
    out.push('\n');
    for r in 0..ds.n() {
        let mut cells: Vec<String> = ds.features.row(r).iter().map(|v| v.to_string()).collect();
        cells.insert(ds.label_position, ds.labels[r].to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-feature normalization statistics, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub clip_k: f64,
    /// Indices of zero-variance features (their std is set to 1).
    #[serde(default)]
    pub constant_features: Vec<usize>,
}

impl NormStats {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

pub fn fit_normalize(train: &Dataset, clip_k: f64) -> Result<NormStats> {
    if !(clip_k > 0.0) {
        return Err(Error::invalid("clip_k must be positive"));
    }
    let n = train.n();
    if n == 0 {
        return Err(Error::invalid("cannot fit normalization on an empty set"));
    }
    let d = train.d();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(train.features.row(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut var = vec![0.0; d];
    for r in 0..n {
        for ((v, x), m) in var.iter_mut().zip(train.features.row(r)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let mut constant_features = Vec::new();
    let std = var
        .iter()
        .zip(&mean)
        .enumerate()
        .map(|(j, (v, m))| {
            let s = (v / n as f64).sqrt();
            if s > 1e-12 * m.abs().max(1.0) {
                s
            } else {
                constant_features.push(j);
                1.0
            }
        })
        .collect();
    Ok(NormStats {
        mean,
        std,
        clip_k,
        constant_features,
    })
}

pub fn apply_normalize(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if stats.mean.len() != ds.d() || stats.std.len() != ds.d() {
        return Err(Error::shape(
            "apply_normalize",
            format!("stats for {} features, data has {}", stats.mean.len(), ds.d()),
        ));
    }
    let d = ds.d();
    let k = stats.clip_k;
    let mut data = ds.features.as_slice().to_vec();
    for (i, x) in data.iter_mut().enumerate() {
        let j = i % d;
        let z = if stats.constant_features.contains(&j) {
            0.0
        } else {
            (*x - stats.mean[j]) / stats.std[j]
        };
        *x = z.clamp(-k, k);
    }
    let mut out = ds.clone();
    out.features = Matrix::from_vec(ds.n(), d, data)?;
    Ok(out)
}

/// Disjoint train/validation/test row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Class-stratified split. Rows of each class are shuffled with a seeded RNG
/// and sliced; per-class sizes use cumulative rounding across classes so the
/// split totals are also the rounded global proportions.
pub fn stratified_split(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    let counts = ds.class_counts();
    for (label, &c) in counts.iter().enumerate() {
        if c > 0 && c < 3 {
            return Err(Error::invalid(format!(
                "class {label} has only {c} rows; at least 3 are needed per class \
                 (augment the minority class synthetically first)"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut cum = 0usize;
    let mut prev = (0usize, 0usize);
    for label in [0u8, 1] {
        let mut idx = ds.indices_of(label);
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        cum += idx.len();
        let cum_train = round_half_up(fractions[0] * cum as f64);
        let cum_val = round_half_up(fractions[1] * cum as f64);
        let n_train = (cum_train - prev.0).min(idx.len());
        let n_val = (cum_val - prev.1).min(idx.len() - n_train);
        prev = (prev.0 + n_train, prev.1 + n_val);
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        val,
        test,
        seed,
    })
}

/// Majority rows ~ N(0, I_d) with label 0, then minority rows
/// ~ N(separation·e₁, I_d) with label 1.
pub fn synth_imbalanced(
    n_major: usize,
    n_minor: usize,
    d: usize,
    mean_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_major == 0 || n_minor == 0 || d == 0 {
        return Err(Error::invalid("n_major, n_minor and d must all be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_major + n_minor;
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            let shift = if i >= n_major && j == 0 {
                mean_separation
            } else {
                0.0
            };
            data.push(z + shift);
        }
    }
    let labels = (0..n).map(|i| u8::from(i >= n_major)).collect();
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    Dataset::new(Matrix::from_vec(n, d, data)?, labels, names)
}
