//! Exact k-nearest-neighbor search under the Euclidean metric.
//!
//! Results are ordered by `(squared distance, original index)`, so ties in
//! distance always resolve to the smaller original index regardless of the
//! order in which points were inserted or the index structure used.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points per k-d tree leaf.
pub const LEAF_SIZE: usize = 16;

/// Backing structure of a [`NeighborIndex`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnStructure {
    Brute,
    KdTree,
    /// k-d tree when the dimension is small next to `log2(n)`, brute force otherwise.
    #[default]
    Auto,
}

impl KnnStructure {
    fn resolve(self, n: usize, dim: usize) -> KnnStructure {
        match self {
            KnnStructure::Auto => {
                if n > LEAF_SIZE && (dim as f64) <= (n as f64).log2() / 2.0 {
                    KnnStructure::KdTree
                } else {
                    KnnStructure::Brute
                }
            }
            s => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct KdTree {
    nodes: Vec<Node>,
    /// Permutation of storage slots; leaves own contiguous ranges.
    order: Vec<usize>,
}

/// Immutable nearest-neighbor index over a point set.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<f64>,
    dim: usize,
    original: Vec<usize>,
    structure: KnnStructure,
    tree: Option<KdTree>,
}

impl NeighborIndex {
    /// Builds an index over `points` (one per row) labelled with
    /// `original_indices`.
    pub fn build(
        points: ArrayView2<'_, f64>,
        original_indices: &[usize],
        structure: KnnStructure,
    ) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::Empty("cannot index an empty point set".into()));
        }
        if original_indices.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: original_indices.len(),
            });
        }
        let dim = points.ncols();
        let flat: Vec<f64> = points.iter().copied().collect();
        Self::from_flat(flat, dim, original_indices.to_vec(), structure)
    }

    /// Builds an index from ragged rows; rows must share one dimension.
    pub fn from_rows(
        rows: &[Vec<f64>],
        original_indices: &[usize],
        structure: KnnStructure,
    ) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("cannot index an empty point set".into()))?;
        let dim = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.len(),
            });
        }
        if original_indices.len() != rows.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                got: original_indices.len(),
            });
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::from_flat(flat, dim, original_indices.to_vec(), structure)
    }

    fn from_flat(
        points: Vec<f64>,
        dim: usize,
        original: Vec<usize>,
        structure: KnnStructure,
    ) -> Result<Self> {
        let mut seen = original.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("original indices must be distinct"));
        }
        let n = original.len();
        let structure = structure.resolve(n, dim);
        let mut index = Self {
            points,
            dim,
            original,
            structure,
            tree: None,
        };
        if structure == KnnStructure::KdTree {
            index.tree = Some(index.build_tree());
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn structure(&self) -> KnnStructure {
        self.structure
    }

    pub fn original_indices(&self) -> &[usize] {
        &self.original
    }

    /// Depth of the k-d tree (a single leaf has depth 0); 0 for brute force.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        self.tree.as_ref().map_or(0, |t| walk(&t.nodes, 0))
    }

    #[inline]
    fn point(&self, slot: usize) -> &[f64] {
        &self.points[slot * self.dim..(slot + 1) * self.dim]
    }

    #[inline]
    fn sq_dist(&self, slot: usize, query: &[f64]) -> f64 {
        self.point(slot)
            .iter()
            .zip(query)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum()
    }

    fn build_tree(&self) -> KdTree {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        self.build_node(&mut order, 0, n, &mut nodes);
        KdTree { nodes, order }
    }

    fn build_node(&self, order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
        let id = nodes.len();
        if end - start <= LEAF_SIZE || self.dim == 0 {
            nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Widest-spread coordinate.
        let mut best_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..self.dim {
            let (lo, hi) = order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                let v = self.points[s * self.dim + d];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let dim = self.dim;
        let pts = &self.points;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a * dim + best_dim].total_cmp(&pts[b * dim + best_dim])
        });
        let value = pts[order[mid] * dim + best_dim];
        nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(order, start, mid, nodes);
        let right = self.build_node(order, mid, end, nodes);
        nodes[id] = Node::Split {
            dim: best_dim,
            value,
            left,
            right,
        };
        id
    }

    /// Original indices of the `k` nearest points to `query`, ascending by
    /// `(distance, original index)`.
    pub fn query(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        Ok(self
            .query_with_distances(query, k)?
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    }

    /// As [`NeighborIndex::query`], paired with squared distances.
    pub fn query_with_distances(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: query.len(),
            });
        }
        if k > self.len() {
            return Err(Error::config(format!(
                "k = {k} exceeds the {} indexed points",
                self.len()
            )));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut found = match &self.tree {
            Some(tree) => self.search_tree(tree, query, k),
            None => self.search_brute(query, k),
        };
        found.sort_unstable();
        Ok(found.into_iter().map(|c| (c.index, c.dist)).collect())
    }

    fn search_brute(&self, query: &[f64], k: usize) -> Vec<Candidate> {
        let mut all: Vec<Candidate> = (0..self.len())
            .map(|slot| Candidate {
                dist: self.sq_dist(slot, query),
                index: self.original[slot],
            })
            .collect();
        if k < all.len() {
            all.select_nth_unstable(k - 1);
            all.truncate(k);
        }
        all
    }

    fn search_tree(&self, tree: &KdTree, query: &[f64], k: usize) -> Vec<Candidate> {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.visit(tree, 0, query, k, &mut heap);
        heap.into_vec()
    }

    fn visit(&self, tree: &KdTree, node: usize, query: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match tree.nodes[node] {
            Node::Leaf { start, end } => {
                for &slot in &tree.order[start..end] {
                    let cand = Candidate {
                        dist: self.sq_dist(slot, query),
                        index: self.original[slot],
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.visit(tree, near, query, k, heap);
                // A far-side point is at least |diff| away along `dim`. Equal
                // bounds must still be explored: a tie there may carry a
                // smaller original index.
                let bound = diff * diff;
                if heap.len() < k || bound <= heap.peek().expect("heap holds k items").dist {
                    self.visit(tree, far, query, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::Array2;
    use rand::Rng;

    fn line(points: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((points.len(), 1), points.to_vec()).unwrap()
    }

    #[test]
    fn single_point() {
        for s in [KnnStructure::Brute, KnnStructure::KdTree] {
            let idx = NeighborIndex::build(line(&[2.5]).view(), &[7], s).unwrap();
            assert_eq!(idx.len(), 1);
            assert_eq!(idx.query(&[0.0], 1).unwrap(), vec![7]);
        }
    }

    #[test]
    fn hand_enumerated_neighbors() {
        let pts = line(&[0.0, 1.0, 10.0, 11.0]);
        for s in [KnnStructure::Brute, KnnStructure::KdTree] {
            let idx = NeighborIndex::build(pts.view(), &[1, 2, 3, 4], s).unwrap();
            assert_eq!(idx.query(&[0.0], 2).unwrap(), vec![1, 2]);
            assert_eq!(idx.query(&[10.0], 1).unwrap(), vec![3]);
        }
    }

    #[test]
    fn ties_prefer_smaller_original_index() {
        let pts = line(&[1.0, -1.0]);
        for s in [KnnStructure::Brute, KnnStructure::KdTree] {
            let idx = NeighborIndex::build(pts.view(), &[2, 1], s).unwrap();
            assert_eq!(idx.query(&[0.0], 1).unwrap(), vec![1]);
        }
    }

    #[test]
    fn errors() {
        assert!(NeighborIndex::build(Array2::<f64>::zeros((0, 2)).view(), &[], KnnStructure::Brute).is_err());
        assert!(NeighborIndex::from_rows(&[vec![1.0, 2.0], vec![1.0]], &[0, 1], KnnStructure::Brute).is_err());
        let idx = NeighborIndex::build(line(&[0.0, 1.0]).view(), &[0, 1], KnnStructure::Brute).unwrap();
        assert!(idx.query(&[0.0], 3).is_err());
        assert!(idx.query(&[0.0, 1.0], 1).is_err());
        assert!(NeighborIndex::build(line(&[0.0, 1.0]).view(), &[0, 0], KnnStructure::Brute).is_err());
    }

    #[test]
    fn balanced_depth() {
        let mut rng = rng_from_seed(1);
        let n = 10_000;
        let pts = Array2::from_shape_fn((n, 5), |_| rng.gen::<f64>());
        let ids: Vec<usize> = (0..n).collect();
        let idx = NeighborIndex::build(pts.view(), &ids, KnnStructure::KdTree).unwrap();
        let bound = (n as f64).log2().ceil() as usize;
        assert!(idx.depth() <= bound + 1, "depth {}", idx.depth());
        assert!(idx.depth() >= 9);
    }

    #[test]
    fn auto_picks_tree_for_low_dimension() {
        let pts = Array2::<f64>::zeros((1000, 2));
        let ids: Vec<usize> = (0..1000).collect();
        let idx = NeighborIndex::build(pts.view(), &ids, KnnStructure::Auto).unwrap();
        assert_eq!(idx.structure(), KnnStructure::KdTree);
        let wide = Array2::<f64>::zeros((1000, 9));
        let idx = NeighborIndex::build(wide.view(), &ids, KnnStructure::Auto).unwrap();
        assert_eq!(idx.structure(), KnnStructure::Brute);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn cloud() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize, bool)> {
            (1usize..4, 1usize..200, any::<bool>()).prop_flat_map(|(d, n, lattice)| {
                let coord = if lattice {
                    (-3i32..4).prop_map(f64::from).boxed()
                } else {
                    (-10.0f64..10.0).boxed()
                };
                (
                    prop::collection::vec(prop::collection::vec(coord.clone(), d), n),
                    prop::collection::vec(coord, d),
                    1usize..=n,
                    Just(lattice),
                )
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn tree_matches_brute_and_is_metric_correct((rows, q, k, _lat) in cloud()) {
                let ids: Vec<usize> = (0..rows.len()).map(|i| 3 * i + 1).collect();
                let brute = NeighborIndex::from_rows(&rows, &ids, KnnStructure::Brute).unwrap();
                let tree = NeighborIndex::from_rows(&rows, &ids, KnnStructure::KdTree).unwrap();
                let a = brute.query_with_distances(&q, k).unwrap();
                let b = tree.query_with_distances(&q, k).unwrap();
                prop_assert_eq!(&a, &b);
                let worst = a.last().unwrap().1;
                for (slot, id) in ids.iter().enumerate() {
                    if !a.iter().any(|(i, _)| i == id) {
                        let d: f64 = rows[slot].iter().zip(&q).map(|(x, y)| (x - y) * (x - y)).sum();
                        prop_assert!(d >= worst);
                    }
                }
            }

            #[test]
            fn insertion_order_does_not_matter((rows, q, k, _lat) in cloud(), seed in any::<u64>()) {
                let n = rows.len();
                let ids: Vec<usize> = (0..n).collect();
                let mut perm = ids.clone();
                let mut rng = rng_from_seed(seed);
                for i in (1..n).rev() {
                    perm.swap(i, rng.gen_range(0..=i));
                }
                let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
                let a = NeighborIndex::from_rows(&rows, &ids, KnnStructure::KdTree).unwrap();
                let b = NeighborIndex::from_rows(&shuffled, &perm, KnnStructure::KdTree).unwrap();
                prop_assert_eq!(a.query(&q, k).unwrap(), b.query(&q, k).unwrap());
            }
        }
    }
}
