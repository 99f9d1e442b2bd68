//! Labeled batches for training and evaluating the density-ratio classifier.
//!
//! A joint batch is a uniform subsample of the data (label 1). A product
//! batch (label 0) approximates `p(x|z) p(y, z)`. Isolated k-NN builds it by
//! drawing an isolation set `I_m`; each `i` in `I_m` keeps `(y_i, z_i)` and is
//! paired with the `x_j` of its `k` nearest `z`-neighbors outside `I_m`.
//!
//! The MI-Diff baseline instead pairs independently drawn indices, giving
//! product batches for `I(X;Z)` (pairs `(x_i, z_j)`) and `I(X;Y,Z)`
//! (`(x_i, y_j, z_j)`).

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::knn::{KnnStructure, NeighborIndex};
use crate::rng::{rng_from_seed, sample_without_replacement};

/// How a batch was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchOrigin {
    Joint,
    IsolatedKnn,
    MidiffXz,
    MidiffXyz,
}

/// Isolation set and neighbor count behind an isolated k-NN batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationProvenance {
    pub m: usize,
    pub k: usize,
    pub isolated: Vec<usize>,
}

/// A batch of triples with its class label.
///
/// Pair batches (`MidiffXz`) store a zero-column `y`; their classifier input
/// is `[x | z]`. Dataset indices behind each sample are kept so structural
/// invariants can be checked after the fact.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub z: Array2<f64>,
    pub origin: BatchOrigin,
    pub provenance: Option<IsolationProvenance>,
    /// Dataset index of each sample's `x`.
    pub x_source: Vec<usize>,
    /// Dataset index of each sample's `y` (empty for pair batches).
    pub y_source: Vec<usize>,
    /// Dataset index of each sample's `z`.
    pub z_source: Vec<usize>,
}

impl LabeledBatch {
    /// 1 for joint batches, 0 for product batches.
    pub fn label(&self) -> u8 {
        u8::from(self.origin == BatchOrigin::Joint)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Classifier input width `d_x + d_y + d_z`.
    pub fn input_dim(&self) -> usize {
        self.x.ncols() + self.y.ncols() + self.z.ncols()
    }

    /// Samples as rows of `[x | y | z]`.
    pub fn features(&self) -> Array2<f64> {
        concatenate(Axis(1), &[self.x.view(), self.y.view(), self.z.view()])
            .expect("batch parts share a row count")
    }

    /// The same joint samples with `y` dropped, for the `I(X;Z)` term.
    pub fn without_y(&self) -> LabeledBatch {
        LabeledBatch {
            x: self.x.clone(),
            y: Array2::zeros((self.len(), 0)),
            z: self.z.clone(),
            origin: self.origin,
            provenance: self.provenance.clone(),
            x_source: self.x_source.clone(),
            y_source: Vec::new(),
            z_source: self.z_source.clone(),
        }
    }

    fn gather(
        ds: &Dataset,
        origin: BatchOrigin,
        x_source: Vec<usize>,
        y_source: Vec<usize>,
        z_source: Vec<usize>,
    ) -> Self {
        let y = if origin == BatchOrigin::MidiffXz {
            Array2::zeros((x_source.len(), 0))
        } else {
            ds.y().select(Axis(0), &y_source)
        };
        LabeledBatch {
            x: ds.x().select(Axis(0), &x_source),
            y,
            z: ds.z().select(Axis(0), &z_source),
            origin,
            provenance: None,
            x_source,
            y_source,
            z_source,
        }
    }
}

/// `b` distinct triples drawn uniformly without replacement (label 1).
pub fn joint_batch(dataset: &Dataset, b: usize, seed: u64) -> Result<LabeledBatch> {
    let n = dataset.len();
    if b > n {
        return Err(Error::Schedule(format!(
            "joint batch size b = {b} exceeds the {n} available samples"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let idx = sample_without_replacement(&mut rng, n, b);
    Ok(LabeledBatch::gather(
        dataset,
        BatchOrigin::Joint,
        idx.clone(),
        idx.clone(),
        idx,
    ))
}

/// Isolated k-NN product batch of exactly `m * k` samples (label 0).
pub fn isolated_knn_batch(dataset: &Dataset, m: usize, k: usize, seed: u64) -> Result<LabeledBatch> {
    isolated_knn_batch_with(dataset, m, k, seed, KnnStructure::Auto)
}

/// As [`isolated_knn_batch`] with an explicit neighbor-search structure.
pub fn isolated_knn_batch_with(
    dataset: &Dataset,
    m: usize,
    k: usize,
    seed: u64,
    structure: KnnStructure,
) -> Result<LabeledBatch> {
    let n = dataset.len();
    check_isolation(n, m, k)?;
    let mut rng = rng_from_seed(seed);
    let isolated = sample_without_replacement(&mut rng, n, m);
    isolated_knn_from_set(dataset, &isolated, k, structure)
}

fn check_isolation(n: usize, m: usize, k: usize) -> Result<()> {
    if m == 0 || k == 0 {
        return Err(Error::Schedule(format!(
            "isolated k-NN needs m >= 1 and k >= 1 (got m = {m}, k = {k})"
        )));
    }
    if m >= n || k > n - m {
        return Err(Error::Schedule(format!(
            "isolated k-NN needs k <= n - m (got n = {n}, m = {m}, k = {k})"
        )));
    }
    Ok(())
}

/// Isolated k-NN batch for a given isolation set (dataset indices).
///
/// Samples are emitted grouped by isolation index in the order of
/// `isolated`, neighbors nearest first.
pub fn isolated_knn_from_set(
    dataset: &Dataset,
    isolated: &[usize],
    k: usize,
    structure: KnnStructure,
) -> Result<LabeledBatch> {
    let n = dataset.len();
    let m = isolated.len();
    check_isolation(n, m, k)?;
    let mut in_set = vec![false; n];
    for &i in isolated {
        if i >= n || in_set[i] {
            return Err(Error::config(format!("invalid or repeated isolation index {i}")));
        }
        in_set[i] = true;
    }
    let complement: Vec<usize> = (0..n).filter(|&i| !in_set[i]).collect();
    let z = dataset.z();
    let index = NeighborIndex::build(z.select(Axis(0), &complement).view(), &complement, structure)?;

    let mut x_source = Vec::with_capacity(m * k);
    let mut yz_source = Vec::with_capacity(m * k);
    let mut query = vec![0.0; z.ncols()];
    for &i in isolated {
        for (q, v) in query.iter_mut().zip(z.row(i)) {
            *q = *v;
        }
        for j in index.query(&query, k)? {
            x_source.push(j);
            yz_source.push(i);
        }
    }
    let mut batch = LabeledBatch::gather(
        dataset,
        BatchOrigin::IsolatedKnn,
        x_source,
        yz_source.clone(),
        yz_source,
    );
    batch.provenance = Some(IsolationProvenance {
        m,
        k,
        isolated: isolated.to_vec(),
    });
    Ok(batch)
}

fn independent_pairs(n: usize, b: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if b > n {
        return Err(Error::Schedule(format!(
            "product batch size b = {b} exceeds the {n} available samples"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let first = sample_without_replacement(&mut rng, n, b);
    let second = sample_without_replacement(&mut rng, n, b);
    Ok((first, second))
}

/// MI-Diff product batch `{(x_i, z_j)}` for the `I(X;Z)` term.
pub fn midiff_product_batch_xz(dataset: &Dataset, b: usize, seed: u64) -> Result<LabeledBatch> {
    let (xi, zj) = independent_pairs(dataset.len(), b, seed)?;
    Ok(LabeledBatch::gather(dataset, BatchOrigin::MidiffXz, xi, Vec::new(), zj))
}

/// MI-Diff product batch `{(x_i, y_j, z_j)}` for the `I(X;Y,Z)` term.
pub fn midiff_product_batch_xyz(dataset: &Dataset, b: usize, seed: u64) -> Result<LabeledBatch> {
    let (xi, j) = independent_pairs(dataset.len(), b, seed)?;
    Ok(LabeledBatch::gather(dataset, BatchOrigin::MidiffXyz, xi, j.clone(), j))
}

/// How `k` and `m` are chosen for a given `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScheduleMode {
    /// `k = ceil(n^(1/2 + eps0))`, `m = max(k, floor(b / k))`.
    Theory { epsilon_0: f64 },
    /// User `k`, `m = min(floor(b / k), n - k)`.
    FixedK { k: usize },
}

/// Batch sizes for one dataset size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub b: usize,
    pub b_prime: usize,
    pub epsilon_0: Option<f64>,
}

impl BatchSchedule {
    /// Joint-class prior `b / (b + b')`.
    pub fn p1(&self) -> f64 {
        self.b as f64 / (self.b + self.b_prime) as f64
    }
}

/// Derives `(k, m, b')` for `n` samples and joint batch size `b_target`.
pub fn schedule_from_n(n: usize, mode: ScheduleMode, b_target: usize) -> Result<BatchSchedule> {
    let (k, m, eps) = match mode {
        ScheduleMode::Theory { epsilon_0 } => {
            if !(epsilon_0 > 0.0 && epsilon_0 < 0.5) {
                return Err(Error::Schedule(format!(
                    "epsilon_0 must lie in (0, 0.5), got {epsilon_0}"
                )));
            }
            let k = (n as f64).powf(0.5 + epsilon_0).ceil() as usize;
            (k, k.max(b_target / k.max(1)), Some(epsilon_0))
        }
        ScheduleMode::FixedK { k } => {
            if k == 0 {
                return Err(Error::Schedule("k must be at least 1".into()));
            }
            (k, (b_target / k).min(n.saturating_sub(k)), None)
        }
    };
    if k == 0 || m < k || n < k || n - k < m {
        return Err(Error::Schedule(format!(
            "need n - k >= m >= k, got n = {n}, k = {k}, m = {m}"
        )));
    }
    if b_target > n {
        return Err(Error::Schedule(format!(
            "joint batch size b = {b_target} exceeds n = {n}"
        )));
    }
    Ok(BatchSchedule {
        n,
        k,
        m,
        b: b_target,
        b_prime: m * k,
        epsilon_0: eps,
    })
}

/// Checks that `x` rows came from outside the isolation set and that each
/// borrowed `z_j` is among the `k` nearest to `z_i` in the complement
/// (within the k-th distance, so ties are accepted).
pub fn verify_isolated_batch(dataset: &Dataset, batch: &LabeledBatch) -> Result<()> {
    let prov = batch
        .provenance
        .as_ref()
        .ok_or_else(|| Error::config("batch carries no isolation provenance"))?;
    if batch.len() != prov.m * prov.k {
        return Err(Error::config("batch size differs from m * k"));
    }
    let n = dataset.len();
    let mut in_set = vec![false; n];
    for &i in &prov.isolated {
        in_set[i] = true;
    }
    let z = dataset.z();
    let dist = |a: usize, b: usize| -> f64 { sq_dist_rows(z, a, b) };
    for s in 0..batch.len() {
        let (j, i) = (batch.x_source[s], batch.y_source[s]);
        if in_set[j] || !in_set[i] || batch.z_source[s] != i {
            return Err(Error::config(format!("sample {s} violates isolation")));
        }
        let mut others: Vec<f64> = (0..n).filter(|&c| !in_set[c]).map(|c| dist(i, c)).collect();
        others.sort_unstable_by(f64::total_cmp);
        if dist(i, j) > others[prov.k - 1] {
            return Err(Error::config(format!("sample {s} borrows a non-neighbor")));
        }
    }
    Ok(())
}

fn sq_dist_rows(z: ArrayView2<'_, f64>, a: usize, b: usize) -> f64 {
    z.row(a)
        .iter()
        .zip(z.row(b))
        .map(|(p, q)| (p - q) * (p - q))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_gaussian_chain, GaussianChainConfig};
    use ndarray::Array2;

    fn toy() -> Dataset {
        let col = |v: [f64; 4]| Array2::from_shape_vec((4, 1), v.to_vec()).unwrap();
        Dataset::new(
            col([100.0, 200.0, 300.0, 400.0]),
            col([-1.0, -2.0, -3.0, -4.0]),
            col([0.0, 1.0, 10.0, 11.0]),
        )
        .unwrap()
    }

    #[test]
    fn joint_sizes() {
        let ds = toy();
        assert!(joint_batch(&ds, 0, 1).unwrap().is_empty());
        let full = joint_batch(&ds, 4, 1).unwrap();
        let mut idx = full.x_source.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(full.label(), 1);
        let two = joint_batch(&ds, 2, 9).unwrap();
        assert_ne!(two.x_source[0], two.x_source[1]);
        assert_eq!(two.x_source, two.y_source);
        assert!(joint_batch(&ds, 5, 1).is_err());
    }

    #[test]
    fn forced_isolation_set() {
        // 1-based example: I_m = {1}, k = 2 -> neighbors of z_1 = 0 among
        // {2, 3, 4} are 2 and 3.
        let ds = toy();
        let batch = isolated_knn_from_set(&ds, &[0], 2, KnnStructure::Brute).unwrap();
        assert_eq!(batch.x_source, vec![1, 2]);
        assert_eq!(batch.y_source, vec![0, 0]);
        assert_eq!(batch.x.column(0).to_vec(), vec![200.0, 300.0]);
        assert_eq!(batch.y.column(0).to_vec(), vec![-1.0, -1.0]);
        assert_eq!(batch.z.column(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(batch.label(), 0);
    }

    #[test]
    fn one_by_one_batch() {
        let ds = toy();
        let b = isolated_knn_batch(&ds, 1, 1, 3).unwrap();
        assert_eq!(b.len(), 1);
        assert_ne!(b.x_source[0], b.y_source[0]);
    }

    #[test]
    fn isolation_errors() {
        let ds = toy();
        assert!(isolated_knn_batch(&ds, 2, 3, 0).is_err());
        assert!(isolated_knn_batch(&ds, 0, 1, 0).is_err());
        assert!(isolated_knn_batch(&ds, 1, 0, 0).is_err());
        assert!(isolated_knn_batch(&ds, 2, 2, 0).is_ok());
    }

    #[test]
    fn isolation_and_neighbor_certificate() {
        let cfg = GaussianChainConfig::standard(2);
        let ds = sample_gaussian_chain(&cfg, 400, 4).unwrap();
        for structure in [KnnStructure::Brute, KnnStructure::KdTree] {
            let b = isolated_knn_batch_with(&ds, 30, 5, 8, structure).unwrap();
            assert_eq!(b.len(), 150);
            verify_isolated_batch(&ds, &b).unwrap();
        }
        let a = isolated_knn_batch_with(&ds, 30, 5, 8, KnnStructure::Brute).unwrap();
        let t = isolated_knn_batch_with(&ds, 30, 5, 8, KnnStructure::KdTree).unwrap();
        assert_eq!(a, t);
    }

    #[test]
    fn midiff_batches() {
        let ds = toy();
        let xz = midiff_product_batch_xz(&ds, 1, 2).unwrap();
        assert_eq!(xz.len(), 1);
        assert_eq!(xz.y.ncols(), 0);
        assert_eq!(xz.input_dim(), 2);
        let full = midiff_product_batch_xz(&ds, 4, 2).unwrap();
        let mut a = full.x_source.clone();
        let mut b = full.z_source.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);
        assert_eq!(b, vec![0, 1, 2, 3]);
        assert_eq!(full, midiff_product_batch_xz(&ds, 4, 2).unwrap());

        let xyz = midiff_product_batch_xyz(&ds, 4, 5).unwrap();
        assert_eq!(xyz.y_source, xyz.z_source);
        for s in 0..4 {
            assert_eq!(xyz.y[[s, 0]], -(xyz.y_source[s] as f64 + 1.0));
        }
        assert_eq!(xyz, midiff_product_batch_xyz(&ds, 4, 5).unwrap());
        assert!(midiff_product_batch_xyz(&ds, 5, 5).is_err());
    }

    #[test]
    fn schedules() {
        let s = schedule_from_n(80_000, ScheduleMode::FixedK { k: 2 }, 40_000).unwrap();
        assert_eq!((s.m, s.b_prime), (20_000, 40_000));
        assert_eq!(s.p1(), 0.5);

        let t = schedule_from_n(10_000, ScheduleMode::Theory { epsilon_0: 0.1 }, 5_000).unwrap();
        assert_eq!(t.k, 252);
        assert_eq!(t.m, 252);

        assert!(schedule_from_n(100, ScheduleMode::FixedK { k: 20 }, 100).is_err());
        assert!(schedule_from_n(100, ScheduleMode::FixedK { k: 10 }, 50).is_err());
    }
}
