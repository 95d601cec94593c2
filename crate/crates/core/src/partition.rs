//! Recursive median splits of a sample batch.
//!
//! For a batch of `N = 2^m` joint draws `(X, Y)` two block families are
//! built level by level:
//!
//! * value blocks: every block at level `d - 1` is split into the lower and
//!   upper halves of its samples ordered by outer coordinate
//!   `k = (d - 1) mod K` (ties broken by sample index);
//! * index blocks: the same parent value block is split into the lower and
//!   upper halves by sample index alone.
//!
//! Each level is stored as one permutation of `0..N`; the blocks of level `d`
//! are the consecutive chunks of length `2^(m-d)`, in lexicographic order of
//! their binary labels. Children of block `u` are therefore blocks `2u` and
//! `2u + 1` of the next level.
//!
//! Sample indices are 0-based throughout.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N` joint draws stored row-major: `x` is `N x J`, `y` is `N x K`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    j_dim: usize,
    k_dim: usize,
}

impl SampleBatch {
    pub fn new(x: Vec<f64>, y: Vec<f64>, j_dim: usize, k_dim: usize) -> Result<Self> {
        if j_dim == 0 || k_dim == 0 {
            return Err(Error::InvalidParameter(
                "inner and outer dimensions must be at least 1".into(),
            ));
        }
        if !x.len().is_multiple_of(j_dim) {
            return Err(Error::DimensionMismatch {
                expected: j_dim,
                actual: x.len() % j_dim,
            });
        }
        let n = x.len() / j_dim;
        if y.len() != n * k_dim {
            return Err(Error::DimensionMismatch {
                expected: n * k_dim,
                actual: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "outer samples must be finite".into(),
            ));
        }
        Ok(SampleBatch {
            x,
            y,
            n,
            j_dim,
            k_dim,
        })
    }

    /// Builds a batch from per-sample rows.
    pub fn from_rows(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: y.len(),
            });
        }
        let j_dim = x.first().map_or(1, Vec::len);
        let k_dim = y.first().map_or(1, Vec::len);
        if x.iter().any(|r| r.len() != j_dim) || y.iter().any(|r| r.len() != k_dim) {
            return Err(Error::InvalidParameter("ragged rows".into()));
        }
        SampleBatch::new(x.concat(), y.concat(), j_dim, k_dim)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn j_dim(&self) -> usize {
        self.j_dim
    }

    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    #[inline]
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.j_dim..(i + 1) * self.j_dim]
    }

    #[inline]
    pub fn y_row(&self, i: usize) -> &[f64] {
        &self.y[i * self.k_dim..(i + 1) * self.k_dim]
    }

    #[inline]
    pub fn y_at(&self, i: usize, k: usize) -> f64 {
        self.y[i * self.k_dim + k]
    }

    pub fn x_data(&self) -> &[f64] {
        &self.x
    }

    pub fn y_data(&self) -> &[f64] {
        &self.y
    }

    /// `m` such that `len() == 2^m`.
    pub fn depth(&self) -> Result<u32> {
        if self.n.is_power_of_two() {
            Ok(self.n.trailing_zeros())
        } else {
            Err(Error::NotPowerOfTwo(self.n))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Blocks split by outer-coordinate value.
    Value,
    /// Blocks split by sample index.
    Index,
}

/// Both block families for every level `0..=m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    m: u32,
    k_dims: usize,
    value: Vec<Vec<usize>>,
    // index[0] is empty: the index family starts at level 1
    index: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn depth(&self) -> u32 {
        self.m
    }

    pub fn k_dims(&self) -> usize {
        self.k_dims
    }

    pub fn len(&self) -> usize {
        1 << self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn block_size(&self, d: usize) -> usize {
        1 << (self.m as usize - d)
    }

    pub fn num_blocks(&self, d: usize) -> usize {
        1 << d
    }

    /// Outer coordinate (0-based) used for the value split producing level `d >= 1`.
    pub fn split_dim(&self, d: usize) -> usize {
        (d - 1) % self.k_dims
    }

    /// Full permutation for one level; `None` for the index family at level 0.
    pub fn level(&self, family: Family, d: usize) -> Option<&[usize]> {
        let levels = match family {
            Family::Value => &self.value,
            Family::Index => &self.index,
        };
        levels.get(d).filter(|l| !l.is_empty()).map(Vec::as_slice)
    }

    pub fn blocks(&self, family: Family, d: usize) -> impl Iterator<Item = &[usize]> {
        let size = self.block_size(d.min(self.m as usize));
        self.level(family, d).unwrap_or(&[]).chunks(size)
    }

    pub fn block(&self, family: Family, d: usize, u: usize) -> Option<&[usize]> {
        let size = self.block_size(d);
        self.level(family, d)
            .and_then(|l| l.get(u * size..(u + 1) * size))
    }
}

#[inline]
fn value_order(batch: &SampleBatch, k: usize, a: usize, b: usize) -> Ordering {
    batch
        .y_at(a, k)
        .partial_cmp(&batch.y_at(b, k))
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Builds both block families for a batch of `2^m` samples.
///
/// Each level re-sorts every parent block, so the total work is
/// `O(m N log N)`.
pub fn build_partitions(batch: &SampleBatch) -> Result<PartitionPlan> {
    let m = batch.depth()?;
    let n = batch.len();
    let k_dims = batch.k_dim();

    let mut value: Vec<Vec<usize>> = Vec::with_capacity(m as usize + 1);
    let mut index: Vec<Vec<usize>> = Vec::with_capacity(m as usize + 1);
    value.push((0..n).collect());
    index.push(Vec::new());

    for d in 1..=m as usize {
        let k = (d - 1) % k_dims;
        let parent = &value[d - 1];
        let parent_size = 1usize << (m as usize - d + 1);

        let mut by_value = parent.clone();
        for chunk in by_value.chunks_mut(parent_size) {
            chunk.sort_unstable_by(|&a, &b| value_order(batch, k, a, b));
        }
        let mut by_index = parent.clone();
        for chunk in by_index.chunks_mut(parent_size) {
            chunk.sort_unstable();
        }
        value.push(by_value);
        index.push(by_index);
    }

    Ok(PartitionPlan {
        m,
        k_dims,
        value,
        index,
    })
}

/// Mean of `X` over every block of one family, level by level.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMeans {
    family: Family,
    j_dim: usize,
    levels: Vec<Vec<f64>>,
}

impl BlockMeans {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn j_dim(&self) -> usize {
        self.j_dim
    }

    /// Number of stored levels (`m + 1`).
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// All block means of level `d`, row-major (`2^d x J`); empty for the
    /// index family at level 0.
    pub fn level(&self, d: usize) -> &[f64] {
        &self.levels[d]
    }

    pub fn means(&self, d: usize) -> impl Iterator<Item = &[f64]> {
        self.levels[d].chunks(self.j_dim)
    }

    pub fn mean(&self, d: usize, u: usize) -> &[f64] {
        &self.levels[d][u * self.j_dim..(u + 1) * self.j_dim]
    }
}

/// Block means for one family.
///
/// Every block is averaged from its rows in ascending index order, so a
/// block appearing in both families gets bit-identical means.
pub fn block_mean_tree(batch: &SampleBatch, plan: &PartitionPlan, family: Family) -> BlockMeans {
    let j = batch.j_dim();
    let m = plan.depth() as usize;
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); m + 1];
    let first = match family {
        Family::Value => 0,
        Family::Index => 1,
    };
    let mut rows = Vec::with_capacity(batch.len());

    for (d, slot) in levels.iter_mut().enumerate().skip(first) {
        let size = plan.block_size(d);
        let mut means = vec![0.0; (1 << d) * j];
        for (block, out) in plan.blocks(family, d).zip(means.chunks_mut(j)) {
            rows.clear();
            rows.extend_from_slice(block);
            rows.sort_unstable();
            out.copy_from_slice(batch.x_row(rows[0]));
            for &i in &rows[1..] {
                for (o, x) in out.iter_mut().zip(batch.x_row(i)) {
                    *o += x;
                }
            }
            if size > 1 {
                let inv = 1.0 / size as f64;
                out.iter_mut().for_each(|o| *o *= inv);
            }
        }
        *slot = means;
    }

    BlockMeans {
        family,
        j_dim: j,
        levels,
    }
}

/// Per-dimension empirical CDF of the outer samples, mapped to `[0, 1]`.
///
/// The sample of 0-based rank `r` maps to `r / (N - 1)`; tied values share
/// their averaged rank. With a single sample every value maps to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RankTransform {
    k_dim: usize,
    values: Vec<f64>,
}

impl RankTransform {
    pub fn new(batch: &SampleBatch) -> Self {
        let n = batch.len();
        let k_dim = batch.k_dim();
        let mut values = vec![0.0; n * k_dim];
        if n > 1 {
            let scale = 1.0 / (n - 1) as f64;
            let mut order: Vec<usize> = (0..n).collect();
            for k in 0..k_dim {
                order.sort_unstable_by(|&a, &b| value_order(batch, k, a, b));
                let mut start = 0;
                while start < n {
                    let v = batch.y_at(order[start], k);
                    let mut end = start + 1;
                    while end < n && batch.y_at(order[end], k) == v {
                        end += 1;
                    }
                    let rank = 0.5 * (start + end - 1) as f64;
                    for &i in &order[start..end] {
                        values[i * k_dim + k] = rank * scale;
                    }
                    start = end;
                }
            }
        }
        RankTransform { k_dim, values }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k_dim..(i + 1) * self.k_dim]
    }
}

/// Block-width statistics for one level under the rank transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthDiagnostic {
    pub level: usize,
    /// Average over blocks of the transformed range in each outer dimension.
    pub w_per_dim: Vec<f64>,
    /// `2 / 2^(d/K)`, the bound on each entry of `w_per_dim`.
    pub w_bound: f64,
    /// Average over blocks of the squared transformed diameter.
    pub lemma_lhs: f64,
    /// `2K / 2^(d/K)`.
    pub lemma_rhs: f64,
}

impl WidthDiagnostic {
    pub fn lemma_satisfied(&self) -> bool {
        self.lemma_lhs <= self.lemma_rhs
    }

    pub fn width_satisfied(&self, k: usize) -> bool {
        self.w_per_dim[k] <= self.w_bound
    }

    pub fn satisfied(&self) -> bool {
        self.lemma_satisfied() && (0..self.w_per_dim.len()).all(|k| self.width_satisfied(k))
    }
}

pub fn width_diagnostic(
    batch: &SampleBatch,
    plan: &PartitionPlan,
    d: usize,
) -> Result<WidthDiagnostic> {
    width_diagnostic_with(&RankTransform::new(batch), plan, d)
}

/// Same as [`width_diagnostic`], reusing a precomputed transform.
pub fn width_diagnostic_with(
    transform: &RankTransform,
    plan: &PartitionPlan,
    d: usize,
) -> Result<WidthDiagnostic> {
    let m = plan.depth() as usize;
    if d > m {
        return Err(Error::LevelOutOfRange { level: d, max: m });
    }
    let k_dim = plan.k_dims();
    let mut width_sum = vec![0.0; k_dim];
    let mut diam_sum = 0.0;
    let mut lo = vec![0.0; k_dim];
    let mut hi = vec![0.0; k_dim];

    for block in plan.blocks(Family::Value, d) {
        lo.fill(f64::INFINITY);
        hi.fill(f64::NEG_INFINITY);
        for &i in block {
            for (k, &t) in transform.row(i).iter().enumerate() {
                lo[k] = lo[k].min(t);
                hi[k] = hi[k].max(t);
            }
        }
        for k in 0..k_dim {
            width_sum[k] += hi[k] - lo[k];
        }
        diam_sum += squared_diameter(transform, block, &lo, &hi);
    }

    let blocks = (1usize << d) as f64;
    let decay = 2f64.powf(d as f64 / k_dim as f64);
    Ok(WidthDiagnostic {
        level: d,
        w_per_dim: width_sum.into_iter().map(|w| w / blocks).collect(),
        w_bound: 2.0 / decay,
        lemma_lhs: diam_sum / blocks,
        lemma_rhs: 2.0 * k_dim as f64 / decay,
    })
}

/// Exact maximum squared distance between two points of a block.
///
/// Points are visited in decreasing order of their distance bound to the
/// block's bounding box; once that bound cannot beat the running maximum,
/// no remaining pair can either.
fn squared_diameter(t: &RankTransform, block: &[usize], lo: &[f64], hi: &[f64]) -> f64 {
    if block.len() < 2 {
        return 0.0;
    }
    let mut cand: Vec<(f64, usize)> = block
        .iter()
        .map(|&i| {
            let bound = t
                .row(i)
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&l, &h))| (v - l).max(h - v).powi(2))
                .sum::<f64>();
            (bound, i)
        })
        .collect();
    cand.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut best = 0.0f64;
    for (a, &(bound_a, i)) in cand.iter().enumerate() {
        if bound_a <= best {
            break;
        }
        let ti = t.row(i);
        for &(bound_b, j) in &cand[a + 1..] {
            if bound_b <= best {
                break;
            }
            let dist: f64 = ti
                .iter()
                .zip(t.row(j))
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            best = best.max(dist);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    // 1-indexed Y = (0.9, 0.1, 0.5, 0.7), X = (1, 2, 3, 4)
    fn worked() -> SampleBatch {
        SampleBatch::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.9, 0.1, 0.5, 0.7], 1, 1).unwrap()
    }

    fn sets(plan: &PartitionPlan, family: Family, d: usize) -> Vec<Vec<usize>> {
        plan.blocks(family, d)
            .map(|b| {
                let mut v: Vec<usize> = b.iter().map(|i| i + 1).collect();
                v.sort();
                v
            })
            .collect()
    }

    #[test]
    fn worked_example_blocks() {
        let plan = build_partitions(&worked()).unwrap();
        assert_eq!(sets(&plan, Family::Value, 1), vec![vec![2, 3], vec![1, 4]]);
        assert_eq!(sets(&plan, Family::Index, 1), vec![vec![1, 2], vec![3, 4]]);
        assert_eq!(
            sets(&plan, Family::Value, 2),
            vec![vec![2], vec![3], vec![4], vec![1]]
        );
        assert_eq!(
            sets(&plan, Family::Index, 2),
            vec![vec![2], vec![3], vec![1], vec![4]]
        );
    }

    #[test]
    fn increasing_y_makes_families_coincide() {
        let n = 16;
        let y: Vec<f64> = (0..n * 2).map(|v| v as f64).collect();
        let batch = SampleBatch::new(vec![0.0; n], y, 1, 2).unwrap();
        let plan = build_partitions(&batch).unwrap();
        for d in 1..=4 {
            assert_eq!(sets(&plan, Family::Value, d), sets(&plan, Family::Index, d));
        }
    }

    #[test]
    fn signed_zeros_tie() {
        let batch = SampleBatch::new(vec![0.0; 4], vec![0.0, -0.0, 0.0, -0.0], 1, 1).unwrap();
        let plan = build_partitions(&batch).unwrap();
        assert_eq!(sets(&plan, Family::Value, 1), sets(&plan, Family::Index, 1));
    }

    #[test]
    fn rejects_non_finite_outer_samples() {
        assert!(matches!(
            SampleBatch::new(vec![0.0, 0.0], vec![1.0, f64::NAN], 1, 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn first_split_uses_first_coordinate() {
        let batch = SampleBatch::new(vec![0.0, 0.0], vec![0.3, 0.9, 0.7, 0.1], 1, 2).unwrap();
        let plan = build_partitions(&batch).unwrap();
        assert_eq!(sets(&plan, Family::Value, 1), vec![vec![1], vec![2]]);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let batch = SampleBatch::new(vec![0.0; 3], vec![0.0; 3], 1, 1).unwrap();
        assert_eq!(build_partitions(&batch), Err(Error::NotPowerOfTwo(3)));
    }

    #[test]
    fn worked_example_means() {
        let batch = worked();
        let plan = build_partitions(&batch).unwrap();
        let value = block_mean_tree(&batch, &plan, Family::Value);
        assert_eq!(value.level(1), &[2.5, 2.5]);
        assert_eq!(value.level(0), &[2.5]);
        assert_eq!(value.level(2), &[2.0, 3.0, 4.0, 1.0]);
        let index = block_mean_tree(&batch, &plan, Family::Index);
        assert_eq!(index.level(1), &[1.5, 3.5]);
        assert!(index.level(0).is_empty());
    }

    #[test]
    fn constant_x_gives_constant_means() {
        let batch = SampleBatch::new(
            vec![3.25; 32],
            (0..32).map(|v| (v * 7 % 13) as f64).collect(),
            2,
            2,
        )
        .unwrap();
        let plan = build_partitions(&batch).unwrap();
        for family in [Family::Value, Family::Index] {
            let means = block_mean_tree(&batch, &plan, family);
            for d in 0..=4 {
                assert!(means.level(d).iter().all(|&v| v == 3.25));
            }
        }
    }

    #[test]
    fn rank_transform_averages_ties() {
        let batch = SampleBatch::new(vec![0.0; 4], vec![0.5, 0.1, 0.5, 0.9], 1, 1).unwrap();
        let t = RankTransform::new(&batch);
        let got: Vec<f64> = (0..4).map(|i| t.row(i)[0]).collect();
        assert_eq!(got, vec![0.5, 0.0, 0.5, 1.0]);
        let single = SampleBatch::new(vec![0.0], vec![4.0], 1, 1).unwrap();
        assert_eq!(RankTransform::new(&single).row(0), &[0.0]);
    }

    #[test]
    fn worked_example_width() {
        let batch = worked();
        let plan = build_partitions(&batch).unwrap();
        let diag = width_diagnostic(&batch, &plan, 1).unwrap();
        assert!((diag.w_per_dim[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(diag.w_bound, 1.0);
        assert!(diag.satisfied());

        let root = width_diagnostic(&batch, &plan, 0).unwrap();
        assert_eq!(root.lemma_rhs, 2.0);
        assert!(root.lemma_lhs <= 1.0);

        let leaves = width_diagnostic(&batch, &plan, 2).unwrap();
        assert_eq!(leaves.lemma_lhs, 0.0);

        assert_eq!(
            width_diagnostic(&batch, &plan, 3),
            Err(Error::LevelOutOfRange { level: 3, max: 2 })
        );
    }

    #[test]
    fn diameter_matches_all_pairs() {
        let y: Vec<f64> = (0..64 * 3)
            .map(|v| ((v * 2654435761u64 as usize) % 1000) as f64)
            .collect();
        let batch = SampleBatch::new(vec![0.0; 64], y, 1, 3).unwrap();
        let plan = build_partitions(&batch).unwrap();
        let t = RankTransform::new(&batch);
        for d in 0..=6 {
            let mut brute = 0.0;
            for block in plan.blocks(Family::Value, d) {
                let mut best = 0.0f64;
                for &i in block {
                    for &j in block {
                        let s: f64 = t
                            .row(i)
                            .iter()
                            .zip(t.row(j))
                            .map(|(a, b)| (a - b).powi(2))
                            .sum();
                        best = best.max(s);
                    }
                }
                brute += best;
            }
            brute /= (1 << d) as f64;
            let diag = width_diagnostic_with(&t, &plan, d).unwrap();
            assert_eq!(diag.lemma_lhs, brute, "level {d}");
        }
    }
}
