//! Diagnostic artifacts: loss curves, threshold sweeps and 2-D embeddings.

mod pca;
mod tsne;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use pca::pca2d;
pub use tsne::{joint_probabilities, row_entropy, tsne_exact, TsneParams, TSNE_MAX_POINTS};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::metrics::{confusion_at_threshold, precision_recall_f1};
use crate::model::{TraceRecord, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMethod {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    /// n×2
    pub coords: Matrix,
    pub labels: Vec<u8>,
    pub method: EmbeddingMethod,
    /// Top-two covariance eigenvalues (PCA only).
    pub eigenvalues: Vec<f64>,
    /// KL(P‖Q) per iteration (t-SNE only).
    pub kl_history: Vec<f64>,
}

impl Embedding2D {
    pub fn n(&self) -> usize {
        self.coords.rows()
    }

    pub fn captured_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn silhouette(&self) -> Result<f64> {
        silhouette(&self.coords, &self.labels)
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            msg: format!("{other:?}"),
        },
    }
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let got = rdr.headers().map_err(|e| csv_err(path, e))?;
    if got.iter().ne(want.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            msg: format!("expected header {}", want.join(",")),
        });
    }
    Ok(())
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path)?;
    expect_header(path, &mut rdr, header)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                row: line,
                msg: e.to_string(),
            })?;
        if vals.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: line,
                msg: format!("expected {} fields", header.len()),
            });
        }
        out.push(vals);
    }
    Ok(out)
}

const LOSS_HEADER: [&str; 3] = ["iteration", "train_loss", "test_loss"];
const SWEEP_HEADER: [&str; 4] = ["threshold", "precision", "recall", "f1"];
const EMBED_HEADER: [&str; 3] = ["x", "y", "label"];

pub fn export_loss_csv(trace: &TrainTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if trace.is_empty() {
        return Err(Error::Contract("cannot export an empty trace".into()));
    }
    let mut w = writer(path)?;
    w.write_record(LOSS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in &trace.records {
        w.write_record([r.iteration.to_string(), r.train_loss.to_string(), r.test_loss.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<TrainTrace> {
    let path = path.as_ref();
    let mut trace = TrainTrace::default();
    for v in read_rows(path, &LOSS_HEADER)? {
        trace.push(TraceRecord {
            iteration: v[0] as usize,
            train_loss: v[1],
            test_loss: v[2],
        })?;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn threshold_sweep(scores: &[f64], labels: &[u8], grid: &[f64]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("threshold grid must be nonempty and within [0, 1]"));
    }
    grid.iter()
        .map(|&t| {
            let prf = precision_recall_f1(&confusion_at_threshold(scores, labels, t)?);
            Ok(SweepRow {
                threshold: t,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
            })
        })
        .collect()
}

/// `steps + 1` evenly spaced thresholds from 0 to 1.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(SWEEP_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.threshold.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    Ok(read_rows(path.as_ref(), &SWEEP_HEADER)?
        .into_iter()
        .map(|v| SweepRow {
            threshold: v[0],
            precision: v[1],
            recall: v[2],
            f1: v[3],
        })
        .collect())
}

pub fn write_embedding_csv(emb: &Embedding2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(EMBED_HEADER).map_err(|e| csv_err(path, e))?;
    for (r, label) in emb.labels.iter().enumerate() {
        w.write_record([
            emb.coords.get(r, 0).to_string(),
            emb.coords.get(r, 1).to_string(),
            label.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Coordinates (n×2) and labels from an embedding CSV.
pub fn read_embedding_csv(path: impl AsRef<Path>) -> Result<(Matrix, Vec<u8>)> {
    let rows = read_rows(path.as_ref(), &EMBED_HEADER)?;
    let labels = rows.iter().map(|v| v[2] as u8).collect();
    let coords = Matrix::from_vec(rows.len(), 2, rows.iter().flat_map(|v| [v[0], v[1]]).collect())?;
    Ok((coords, labels))
}

/// Mean silhouette coefficient under Euclidean distance. Points alone in
/// their class score 0.
pub fn silhouette(points: &Matrix, labels: &[u8]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n || n == 0 {
        return Err(Error::invalid("silhouette needs one label per point"));
    }
    let dist = |i: usize, j: usize| -> f64 {
        points
            .row(i)
            .iter()
            .zip(points.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for j in 0..n {
            if j != i {
                let c = labels[j] as usize;
                sums[c] += dist(i, j);
                counts[c] += 1;
            }
        }
        let own = labels[i] as usize;
        let other = 1 - own;
        if counts[own] == 0 || counts[other] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = sums[other] / counts[other] as f64;
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Seeded subsample of `size` indices preserving class proportions
/// (largest remainder, at least one row per present class). Sorted.
pub fn stratified_subsample(labels: &[u8], size: usize, seed: u64) -> Result<Vec<usize>> {
    let n = labels.len();
    if size == 0 {
        return Err(Error::invalid("subsample size must be positive"));
    }
    if size >= n {
        return Ok((0..n).collect());
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[(l != 0) as usize].push(i);
    }
    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * size as f64 / n as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = size - take.iter().sum::<usize>();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &c in &order {
        if left > 0 && take[c] < by_class[c].len() {
            take[c] += 1;
            left -= 1;
        }
    }
    for c in 0..2 {
        if take[c] == 0 && !by_class[c].is_empty() {
            let donor = 1 - c;
            if take[donor] > 1 {
                take[donor] -= 1;
                take[c] = 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for (c, pool) in by_class.iter_mut().enumerate() {
        pool.shuffle(&mut rng);
        out.extend_from_slice(&pool[..take[c]]);
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut t = TrainTrace::default();
        for (i, v) in [0.1f64, 1.0 / 3.0, 2e-17].iter().enumerate() {
            t.push(TraceRecord {
                iteration: i * 10,
                train_loss: *v,
                test_loss: v * 1.5,
            })
            .unwrap();
        }
        export_loss_csv(&t, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);
        assert_eq!(read_loss_csv(&path).unwrap(), t);
        assert!(export_loss_csv(&TrainTrace::default(), &path).is_err());
    }

    #[test]
    fn sweep_bounds() {
        let scores = [0.2, 0.7, 0.9, 0.1];
        let labels = [0, 1, 1, 0];
        let rows = threshold_sweep(&scores, &labels, &[0.0, 1.0]).unwrap();
        assert_eq!(rows[0].recall, 1.0);
        assert_eq!(rows[1].recall, 0.0);
        assert!(threshold_sweep(&scores, &labels, &[]).is_err());
        assert!(threshold_sweep(&scores, &labels, &[1.5]).is_err());
    }

    #[test]
    fn silhouette_of_separated_pairs() {
        let p = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]]).unwrap();
        let s = silhouette(&p, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.85);
    }

    #[test]
    fn subsample_keeps_classes() {
        let mut labels = vec![0u8; 990];
        labels.extend([1u8; 10]);
        let idx = stratified_subsample(&labels, 100, 5).unwrap();
        assert_eq!(idx.len(), 100);
        assert_eq!(idx.iter().filter(|&&i| labels[i] == 1).count(), 1);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(idx, stratified_subsample(&labels, 100, 5).unwrap());
    }
}
