//! Class weights and minority resampling: random under/over-sampling,
//! SMOTE and ADASYN.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::data::{class_counts, Dataset};
use crate::error::{Error, Result};

/// Per-class loss multipliers. The majority class always weighs 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_minority: f64,
    pub w_majority: f64,
    pub n_major: usize,
    pub n_minor: usize,
    pub minority_label: u8,
}

impl ClassWeights {
    /// Unit weights for both classes.
    pub fn uniform(labels: &[u8]) -> Result<Self> {
        Ok(ClassWeights {
            w_minority: 1.0,
            ..class_weights(labels)?
        })
    }

    pub fn custom(labels: &[u8], w_minority: f64) -> Result<Self> {
        if !(w_minority > 0.0 && w_minority.is_finite()) {
            return Err(Error::invalid("custom minority weight must be positive"));
        }
        Ok(ClassWeights {
            w_minority,
            ..class_weights(labels)?
        })
    }

    pub fn weight(&self, label: u8) -> f64 {
        if label == self.minority_label {
            self.w_minority
        } else {
            self.w_majority
        }
    }

    pub fn per_sample(&self, labels: &[u8]) -> Vec<f64> {
        labels.iter().map(|&y| self.weight(y)).collect()
    }
}

fn minority_label(counts: [usize; 2]) -> u8 {
    // ties resolve to label 1
    u8::from(counts[1] <= counts[0])
}

/// `w_minority = N_major / N_minor`, `w_majority = 1`.
pub fn class_weights(labels: &[u8]) -> Result<ClassWeights> {
    let counts = class_counts(labels);
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::invalid("class weights need both classes present"));
    }
    let minority = minority_label(counts);
    let n_minor = counts[minority as usize];
    let n_major = counts[1 - minority as usize];
    Ok(ClassWeights {
        w_minority: n_major as f64 / n_minor as f64,
        w_majority: 1.0,
        n_major,
        n_minor,
        minority_label: minority,
    })
}

/// Sorted k-nearest-neighbour lists (Euclidean, ties by lower row index).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    pub k: usize,
    /// For each query, `(row, distance)` pairs with non-decreasing distance.
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl NeighborIndex {
    /// For each row in `queries`, the `k` nearest rows of `pool`, never itself.
    pub fn build(features: &Matrix, queries: &[usize], pool: &[usize], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let neighbors = queries
            .iter()
            .map(|&q| {
                let x = features.row(q);
                let mut cand: Vec<(f64, usize)> = pool
                    .iter()
                    .filter(|&&p| p != q)
                    .map(|&p| {
                        let d2 = x
                            .iter()
                            .zip(features.row(p))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>();
                        (d2, p)
                    })
                    .collect();
                if cand.len() < k {
                    return Err(Error::invalid(format!(
                        "k = {k} but only {} candidate neighbours",
                        cand.len()
                    )));
                }
                let by_key = |a: &(f64, usize), b: &(f64, usize)| {
                    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
                };
                if cand.len() > k {
                    cand.select_nth_unstable_by(k - 1, by_key);
                    cand.truncate(k);
                }
                cand.sort_by(by_key);
                Ok(cand.into_iter().map(|(d2, p)| (p, d2.sqrt())).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NeighborIndex { k, neighbors })
    }
}

fn require_both(ds: &Dataset) -> Result<(u8, Vec<usize>, Vec<usize>)> {
    let counts = ds.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::invalid("resampling needs both classes present"));
    }
    let minority = minority_label(counts);
    Ok((minority, ds.indices_of(minority), ds.indices_of(1 - minority)))
}

/// Majority rows subsampled without replacement down to the minority count.
/// Row order of the survivors is preserved.
pub fn random_undersample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (_, minor, mut major) = require_both(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    major.shuffle(&mut rng);
    major.truncate(minor.len());
    let mut keep: Vec<usize> = major.into_iter().chain(minor).collect();
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Minority rows duplicated (with replacement) until both classes are equal.
/// Copies are appended after the original rows.
pub fn random_oversample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (minority, minor, major) = require_both(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra: Vec<Vec<f64>> = (minor.len()..major.len())
        .map(|_| {
            let i = minor[rng.random_range(0..minor.len())];
            ds.features.row(i).to_vec()
        })
        .collect();
    let mut out = ds.clone();
    out.extend_rows(&extra, minority);
    Ok(out)
}

/// `parent + λ (neighbor − parent)`.
pub fn interpolate(parent: &[f64], neighbor: &[f64], lambda: f64) -> Vec<f64> {
    parent
        .iter()
        .zip(neighbor)
        .map(|(p, n)| p + lambda * (n - p))
        .collect()
}

/// Where a synthetic row came from: row indices into the input dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOrigin {
    pub parent: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct Resampled {
    pub dataset: Dataset,
    /// One entry per appended synthetic row, in order.
    pub origins: Vec<SynthOrigin>,
}

struct MinorityView {
    label: u8,
    rows: Vec<usize>,
    knn: NeighborIndex,
    budget: usize,
}

fn minority_view(ds: &Dataset, k: usize, target: Option<usize>) -> Result<MinorityView> {
    let (label, minor, major) = require_both(ds)?;
    if minor.len() < 2 {
        return Err(Error::invalid("need at least 2 minority rows to interpolate"));
    }
    if k == 0 || k >= minor.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={} for {} minority rows",
            minor.len() - 1,
            minor.len()
        )));
    }
    let target = target.unwrap_or(major.len());
    if target < minor.len() {
        return Err(Error::invalid(format!(
            "target minority count {target} is below the current {}",
            minor.len()
        )));
    }
    let knn = NeighborIndex::build(&ds.features, &minor, &minor, k)?;
    Ok(MinorityView {
        label,
        budget: target - minor.len(),
        rows: minor,
        knn,
    })
}

/// Equal share per minority row; the remainder goes to a seeded random subset.
fn uniform_allocation(n: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut alloc = vec![budget / n; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &i in order.iter().take(budget % n) {
        alloc[i] += 1;
    }
    alloc
}

/// Largest-remainder apportionment of `budget` proportional to `share`
/// (ties to the lower index). Sums to `budget` exactly.
fn proportional_allocation(share: &[f64], budget: usize) -> Vec<usize> {
    let total: f64 = share.iter().sum();
    let exact: Vec<f64> = share.iter().map(|s| s / total * budget as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..share.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(budget.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

fn synthesize(
    ds: &Dataset,
    view: &MinorityView,
    alloc: &[usize],
    rng: &mut ChaCha8Rng,
) -> Resampled {
    let mut rows = Vec::with_capacity(view.budget);
    let mut origins = Vec::with_capacity(view.budget);
    for (pos, &count) in alloc.iter().enumerate() {
        let parent = view.rows[pos];
        let nn = &view.knn.neighbors[pos];
        for _ in 0..count {
            let neighbor = nn[rng.random_range(0..nn.len())].0;
            let lambda: f64 = rng.random();
            rows.push(interpolate(
                ds.features.row(parent),
                ds.features.row(neighbor),
                lambda,
            ));
            origins.push(SynthOrigin {
                parent,
                neighbor,
                lambda,
            });
        }
    }
    let mut dataset = ds.clone();
    dataset.extend_rows(&rows, view.label);
    Resampled { dataset, origins }
}

/// SMOTE with provenance for every synthetic row. `target` defaults to the
/// majority count.
pub fn smote_detailed(ds: &Dataset, k: usize, target: Option<usize>, seed: u64) -> Result<Resampled> {
    let view = minority_view(ds, k, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alloc = uniform_allocation(view.rows.len(), view.budget, &mut rng);
    Ok(synthesize(ds, &view, &alloc, &mut rng))
}

pub fn smote(ds: &Dataset, k: usize, target: Option<usize>, seed: u64) -> Result<Dataset> {
    smote_detailed(ds, k, target, seed).map(|r| r.dataset)
}

/// ADASYN difficulty ratios: share of majority rows among each minority row's
/// `k` nearest neighbours over the whole dataset. Order follows minority rows.
pub fn adasyn_ratios(ds: &Dataset, k: usize) -> Result<Vec<f64>> {
    let (label, minor, _) = require_both(ds)?;
    let all: Vec<usize> = (0..ds.n()).collect();
    let knn = NeighborIndex::build(&ds.features, &minor, &all, k)?;
    Ok(knn
        .neighbors
        .iter()
        .map(|nn| nn.iter().filter(|(j, _)| ds.labels[*j] != label).count() as f64 / k as f64)
        .collect())
}

pub fn adasyn_detailed(
    ds: &Dataset,
    k: usize,
    target: Option<usize>,
    seed: u64,
) -> Result<Resampled> {
    let view = minority_view(ds, k, target)?;
    let ratios = adasyn_ratios(ds, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let degenerate = ratios.iter().all(|&r| r == 0.0) || ratios.iter().all(|&r| r == 1.0);
    let alloc = if degenerate {
        uniform_allocation(view.rows.len(), view.budget, &mut rng)
    } else {
        proportional_allocation(&ratios, view.budget)
    };
    Ok(synthesize(ds, &view, &alloc, &mut rng))
}

pub fn adasyn(ds: &Dataset, k: usize, target: Option<usize>, seed: u64) -> Result<Dataset> {
    adasyn_detailed(ds, k, target, seed).map(|r| r.dataset)
}

/// Per-minority-row synthesis counts, in minority row order.
pub fn allocation_counts(ds: &Dataset, resampled: &Resampled) -> Vec<usize> {
    let minority = minority_label(ds.class_counts());
    let rows = ds.indices_of(minority);
    rows.iter()
        .map(|&r| resampled.origins.iter().filter(|o| o.parent == r).count())
        .collect()
}
