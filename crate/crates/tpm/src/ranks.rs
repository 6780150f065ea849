//! Ordinal ranks and decomposition trees.
//!
//! Watch time is quantized into `m` ordinal intervals by a grid of
//! boundaries `γ_0 ≤ … ≤ γ_m` placed at empirical quantiles of the training
//! labels. A [`DecompositionTree`] then arranges those intervals as the
//! leaves of a binary tree: every internal node carries the index of a
//! binary classifier head that decides, conditioned on the watch time lying
//! in the node's interval, whether it lies in the right child's interval.
//!
//! Interval convention: `[γ_k, γ_{k+1})`, left-closed right-open, with the
//! last interval closed at `γ_m`. Out-of-range values clamp to the extreme
//! leaves, since the grid is fitted on training data and test labels may
//! exceed it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Sorted watch-time boundaries `γ_0 … γ_m` defining `m` ordinal intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalScale {
    boundaries: Vec<f64>,
}

impl OrdinalScale {
    /// Builds a scale with `num_leaves` intervals from raw watch times by
    /// placing boundaries at the quantiles `0, 1/m, …, 1` (linear
    /// interpolation between order statistics).
    ///
    /// Duplicate boundaries caused by heavily tied labels are nudged up by
    /// the smallest representable increment so every interval keeps positive
    /// width. If the labels have fewer distinct values than `num_leaves`,
    /// returns [`Error::InsufficientLabelDiversity`].
    pub fn from_watch_times(watch_times: &[f64], num_leaves: usize) -> Result<Self> {
        if num_leaves < 2 {
            return Err(Error::InvalidArgument(format!(
                "num_leaves must be at least 2, got {num_leaves}"
            )));
        }
        if watch_times.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot build a scale from an empty label set".into(),
            ));
        }
        if let Some(bad) = watch_times.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::NonFinite(format!(
                "watch times must be finite and non-negative, got {bad}"
            )));
        }

        let mut sorted = watch_times.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut distinct = 1usize;
        for w in sorted.windows(2) {
            if w[1] > w[0] {
                distinct += 1;
            }
        }
        if distinct < num_leaves {
            return Err(Error::InsufficientLabelDiversity {
                distinct,
                required: num_leaves,
            });
        }

        let m = num_leaves;
        let mut boundaries: Vec<f64> = (0..=m)
            .map(|i| quantile_sorted(&sorted, i as f64 / m as f64))
            .collect();
        // Collapse ties in the quantile grid by nudging upward; strict
        // ordering preserves the requested tree arity.
        for i in 1..boundaries.len() {
            if boundaries[i] <= boundaries[i - 1] {
                boundaries[i] = boundaries[i - 1].next_up();
            }
        }

        Ok(Self { boundaries })
    }

    /// Constructs a scale directly from boundaries. They must be strictly
    /// increasing and finite.
    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 3 {
            return Err(Error::InvalidArgument(
                "a scale needs at least 3 boundaries (2 intervals)".into(),
            ));
        }
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("scale boundaries must be finite".into()));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "scale boundaries must be strictly increasing".into(),
            ));
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Number of ordinal intervals `m`.
    pub fn num_intervals(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// The `[γ_k, γ_{k+1})` interval of leaf `k`.
    pub fn interval(&self, leaf: usize) -> (f64, f64) {
        (self.boundaries[leaf], self.boundaries[leaf + 1])
    }

    /// Midpoint `(γ_k + γ_{k+1}) / 2`, the conditional watch-time estimate
    /// for leaf `k`.
    pub fn midpoint(&self, leaf: usize) -> f64 {
        let (lo, hi) = self.interval(leaf);
        0.5 * (lo + hi)
    }

    /// Maps a watch time to its leaf index. Values below `γ_0` or at/above
    /// `γ_m` clamp to the extreme leaves. NaN is rejected.
    pub fn leaf_of(&self, t: f64) -> Result<usize> {
        if t.is_nan() {
            return Err(Error::NonFinite("watch time is NaN".into()));
        }
        let m = self.num_intervals();
        // Count interior boundaries <= t; exact boundary hits land in the
        // right-hand interval per the half-open convention.
        let k = self.boundaries[1..m].partition_point(|b| *b <= t);
        Ok(k.min(m - 1))
    }
}

/// Whether the decomposition splits ranks in halves (binary search) or peels
/// one rank at a time (linear search).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeKind {
    Balanced,
    Linear,
}

impl std::fmt::Display for TreeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TreeKind::Balanced => write!(f, "balanced"),
            TreeKind::Linear => write!(f, "linear"),
        }
    }
}

/// One node of a decomposition tree.
///
/// `leaf ⇔ span width 1 ⇔ head absent ⇔ midpoint present`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Half-open interval of leaf indices covered by this node.
    pub leaf_span: (usize, usize),
    /// `(left, right)` node indices for internal nodes.
    pub children: Option<(usize, usize)>,
    /// Classifier-head index for internal nodes, assigned breadth-first.
    pub head: Option<usize>,
    /// `(γ_k + γ_{k+1}) / 2` for leaves.
    pub leaf_midpoint: Option<f64>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.leaf_span.1 - self.leaf_span.0 == 1
    }
}

/// One root-to-leaf decision: which head fires and whether the path takes
/// the right branch (the positive label).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub head: usize,
    pub right: bool,
}

/// Binary tree over ordinal ranks. Nodes are stored in breadth-first order
/// with the root at index 0; head indices follow the same order.
///
/// Immutable after construction, so shared references may be used freely
/// across threads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTree {
    nodes: Vec<TreeNode>,
    leaf_count: usize,
    kind: TreeKind,
    /// Root-to-leaf decision sequence per leaf, precomputed.
    paths: Vec<Vec<PathStep>>,
    /// Midpoint per leaf index, precomputed for moment computations.
    midpoints: Vec<f64>,
}

impl DecompositionTree {
    /// Near-balanced tree: every internal node gives its left child
    /// `⌈span/2⌉` leaves. On a power-of-two leaf count the tree is complete
    /// and every classifier sees a balanced label split on quantile ranks.
    pub fn balanced(scale: &OrdinalScale) -> Result<Self> {
        Self::build(scale, TreeKind::Balanced)
    }

    /// Left-spine tree mirroring linear search: a node spanning `[k, m)`
    /// splits into the single leaf `[k, k+1)` and the remainder `[k+1, m)`.
    pub fn linear(scale: &OrdinalScale) -> Result<Self> {
        Self::build(scale, TreeKind::Linear)
    }

    pub fn build(scale: &OrdinalScale, kind: TreeKind) -> Result<Self> {
        let m = scale.num_intervals();
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "a decomposition tree needs at least 2 intervals, got {m}"
            )));
        }

        let mut nodes: Vec<TreeNode> = Vec::with_capacity(2 * m - 1);
        let mut queue = std::collections::VecDeque::new();
        nodes.push(Self::node_for_span(scale, 0, m));
        queue.push_back(0usize);
        while let Some(idx) = queue.pop_front() {
            let (start, end) = nodes[idx].leaf_span;
            if end - start == 1 {
                continue;
            }
            let split = match kind {
                TreeKind::Balanced => start + (end - start).div_ceil(2),
                TreeKind::Linear => start + 1,
            };
            let left = nodes.len();
            nodes.push(Self::node_for_span(scale, start, split));
            let right = nodes.len();
            nodes.push(Self::node_for_span(scale, split, end));
            nodes[idx].children = Some((left, right));
            queue.push_back(left);
            queue.push_back(right);
        }

        // Head indices in breadth-first order, which is node order here.
        let mut next_head = 0usize;
        for node in &mut nodes {
            if !node.is_leaf() {
                node.head = Some(next_head);
                next_head += 1;
            }
        }
        debug_assert_eq!(next_head, m - 1);

        let mut tree = Self {
            nodes,
            leaf_count: m,
            kind,
            paths: Vec::new(),
            midpoints: (0..m).map(|k| scale.midpoint(k)).collect(),
        };
        tree.paths = (0..m).map(|leaf| tree.trace_path(leaf)).collect();
        Ok(tree)
    }

    fn node_for_span(scale: &OrdinalScale, start: usize, end: usize) -> TreeNode {
        let leaf = end - start == 1;
        TreeNode {
            leaf_span: (start, end),
            children: None,
            head: None,
            leaf_midpoint: leaf.then(|| scale.midpoint(start)),
        }
    }

    fn trace_path(&self, leaf: usize) -> Vec<PathStep> {
        let mut steps = Vec::new();
        let mut idx = 0;
        while let Some((left, right)) = self.nodes[idx].children {
            let head = self.nodes[idx].head.expect("internal node has a head");
            let go_right = leaf >= self.nodes[right].leaf_span.0;
            steps.push(PathStep {
                head,
                right: go_right,
            });
            idx = if go_right { right } else { left };
        }
        debug_assert_eq!(self.nodes[idx].leaf_span.0, leaf);
        steps
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Number of classifier heads: one per internal node, `leaf_count - 1`.
    pub fn num_heads(&self) -> usize {
        self.leaf_count - 1
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    /// Midpoint watch time per leaf index.
    pub fn leaf_midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// Root-to-leaf decisions for `leaf`: the heads visited in order and the
    /// binary label at each (1 when the path descends into the right child).
    pub fn path_and_labels(&self, leaf: usize) -> Result<&[PathStep]> {
        self.paths
            .get(leaf)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("leaf {leaf} out of range")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale(bounds: &[f64]) -> OrdinalScale {
        OrdinalScale::from_boundaries(bounds.to_vec()).unwrap()
    }

    #[test]
    fn quantile_boundaries_on_one_to_eight() {
        let watch: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        let s = OrdinalScale::from_watch_times(&watch, 4).unwrap();
        assert_eq!(s.boundaries(), &[1.0, 2.75, 4.5, 6.25, 8.0]);
    }

    #[test]
    fn two_point_scale_splits_at_midpoint() {
        let s = OrdinalScale::from_watch_times(&[0.0, 10.0], 2).unwrap();
        assert_eq!(s.boundaries(), &[0.0, 5.0, 10.0]);
    }

    #[test]
    fn constant_labels_are_rejected() {
        let err = OrdinalScale::from_watch_times(&[5.0, 5.0, 5.0, 5.0], 2).unwrap_err();
        assert!(err.to_string().contains("insufficient label diversity"));
    }

    #[test]
    fn tied_labels_nudge_duplicate_boundaries() {
        let watch = [0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let s = OrdinalScale::from_watch_times(&watch, 4).unwrap();
        for w in s.boundaries().windows(2) {
            assert!(w[1] > w[0], "boundaries must stay strictly increasing");
        }
        assert_eq!(s.boundaries()[0], 0.0);
        assert_eq!(*s.boundaries().last().unwrap(), 5.0);
    }

    #[test]
    fn leaf_of_uses_half_open_intervals_and_clamps() {
        let s = scale(&[1.0, 2.75, 4.5, 6.25, 8.0]);
        assert_eq!(s.leaf_of(3.0).unwrap(), 1);
        assert_eq!(s.leaf_of(4.5).unwrap(), 2, "boundary belongs to the right");
        assert_eq!(s.leaf_of(100.0).unwrap(), 3, "clamp above range");
        assert_eq!(s.leaf_of(0.0).unwrap(), 0, "clamp below range");
        assert!(s.leaf_of(f64::NAN).is_err());
    }

    #[test]
    fn balanced_tree_m4_shape() {
        let s = scale(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let t = DecompositionTree::balanced(&s).unwrap();
        assert_eq!(t.nodes().len(), 7);
        assert_eq!(t.num_heads(), 3);
        assert_eq!(t.nodes()[0].leaf_span, (0, 4));
        let (l, r) = t.nodes()[0].children.unwrap();
        assert_eq!(t.nodes()[l].leaf_span, (0, 2));
        assert_eq!(t.nodes()[r].leaf_span, (2, 4));
        assert_eq!(t.nodes()[0].head, Some(0));
        assert_eq!(t.nodes()[l].head, Some(1));
        assert_eq!(t.nodes()[r].head, Some(2));
    }

    #[test]
    fn smallest_tree_has_one_head() {
        let s = scale(&[0.0, 1.0, 2.0]);
        let b = DecompositionTree::balanced(&s).unwrap();
        let l = DecompositionTree::linear(&s).unwrap();
        assert_eq!(b.nodes().len(), 3);
        assert_eq!(b.num_heads(), 1);
        // Binary and linear coincide at 2 leaves.
        assert_eq!(b.nodes().len(), l.nodes().len());
        for (a, c) in b.nodes().iter().zip(l.nodes()) {
            assert_eq!(a.leaf_span, c.leaf_span);
        }
    }

    #[test]
    fn balanced_tree_m3_left_child_takes_ceil() {
        let s = scale(&[0.0, 1.0, 2.0, 3.0]);
        let t = DecompositionTree::balanced(&s).unwrap();
        let (l, r) = t.nodes()[0].children.unwrap();
        assert_eq!(t.nodes()[l].leaf_span, (0, 2));
        assert_eq!(t.nodes()[r].leaf_span, (2, 3));
        assert_eq!(t.num_heads(), 2);
    }

    #[test]
    fn linear_tree_is_a_left_spine() {
        let s = scale(&[0.0, 1.0, 2.0, 3.0]);
        let t = DecompositionTree::linear(&s).unwrap();
        let (l0, r0) = t.nodes()[0].children.unwrap();
        assert_eq!(t.nodes()[l0].leaf_span, (0, 1));
        assert_eq!(t.nodes()[r0].leaf_span, (1, 3));
        let (l1, r1) = t.nodes()[r0].children.unwrap();
        assert_eq!(t.nodes()[l1].leaf_span, (1, 2));
        assert_eq!(t.nodes()[r1].leaf_span, (2, 3));
    }

    #[test]
    fn linear_tree_m4_depth_three_spine() {
        let s = scale(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let t = DecompositionTree::linear(&s).unwrap();
        assert_eq!(t.path_and_labels(3).unwrap().len(), 3);
        assert_eq!(t.path_and_labels(0).unwrap().len(), 1);
    }

    #[test]
    fn paths_for_extreme_leaves() {
        let s = scale(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let t = DecompositionTree::balanced(&s).unwrap();
        let rightmost = t.path_and_labels(3).unwrap();
        assert_eq!(
            rightmost,
            &[
                PathStep {
                    head: 0,
                    right: true
                },
                PathStep {
                    head: 2,
                    right: true
                }
            ]
        );
        let leftmost = t.path_and_labels(0).unwrap();
        assert_eq!(
            leftmost,
            &[
                PathStep {
                    head: 0,
                    right: false
                },
                PathStep {
                    head: 1,
                    right: false
                }
            ]
        );
    }

    #[test]
    fn watch_time_past_the_median_is_positive_at_root_and_right_child() {
        // Four quantile intervals over [0, 1]; 0.8 lands in the last one, so
        // the root head and the right child's head both see a positive label.
        let s = scale(&[0.0, 0.25, 0.5, 0.75, 1.0]);
        let t = DecompositionTree::balanced(&s).unwrap();
        let leaf = s.leaf_of(0.8).unwrap();
        assert_eq!(leaf, 3);
        let path = t.path_and_labels(leaf).unwrap();
        let positives: Vec<usize> = path
            .iter()
            .filter(|s| s.right)
            .map(|s| s.head)
            .collect();
        assert_eq!(positives, vec![0, 2]);
    }

    #[test]
    fn leaf_intervals_partition_the_scale() {
        for m in [2usize, 3, 5, 8, 13] {
            let bounds: Vec<f64> = (0..=m).map(|i| (i * i) as f64).collect();
            let s = scale(&bounds);
            for kind in [TreeKind::Balanced, TreeKind::Linear] {
                let t = DecompositionTree::build(&s, kind).unwrap();
                let leaves: Vec<&TreeNode> =
                    t.nodes().iter().filter(|n| n.is_leaf()).collect();
                assert_eq!(leaves.len(), m);
                let mut spans: Vec<(usize, usize)> =
                    leaves.iter().map(|n| n.leaf_span).collect();
                spans.sort();
                for (k, span) in spans.iter().enumerate() {
                    assert_eq!(*span, (k, k + 1));
                }
                // Parent interval is the union of the children's.
                for n in t.nodes() {
                    if let Some((l, r)) = n.children {
                        assert_eq!(t.nodes()[l].leaf_span.0, n.leaf_span.0);
                        assert_eq!(t.nodes()[l].leaf_span.1, t.nodes()[r].leaf_span.0);
                        assert_eq!(t.nodes()[r].leaf_span.1, n.leaf_span.1);
                    }
                }
            }
        }
    }

    #[test]
    fn paths_are_injective_and_heads_unique() {
        for m in [2usize, 3, 6, 9, 16] {
            let bounds: Vec<f64> = (0..=m).map(|i| i as f64).collect();
            let s = scale(&bounds);
            for kind in [TreeKind::Balanced, TreeKind::Linear] {
                let t = DecompositionTree::build(&s, kind).unwrap();
                let mut seen = std::collections::HashSet::new();
                for leaf in 0..m {
                    let key: Vec<(usize, bool)> = t
                        .path_and_labels(leaf)
                        .unwrap()
                        .iter()
                        .map(|s| (s.head, s.right))
                        .collect();
                    assert!(seen.insert(key), "duplicate path for leaf {leaf}");
                }
                let mut heads: Vec<usize> = t
                    .nodes()
                    .iter()
                    .filter_map(|n| n.head)
                    .collect();
                heads.sort();
                assert_eq!(heads, (0..m - 1).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn midpoint_round_trips_through_leaf_of() {
        for m in [2usize, 4, 7, 32] {
            let watch: Vec<f64> = (0..1000).map(|i| (i as f64).sqrt() * 3.0).collect();
            let s = OrdinalScale::from_watch_times(&watch, m).unwrap();
            for k in 0..m {
                assert_eq!(s.leaf_of(s.midpoint(k)).unwrap(), k);
            }
        }
    }

    #[test]
    fn power_of_two_leaves_sit_at_equal_depth() {
        for m in [2usize, 4, 8, 16, 32] {
            let bounds: Vec<f64> = (0..=m).map(|i| i as f64).collect();
            let t = DecompositionTree::balanced(&scale(&bounds)).unwrap();
            let depth = (m as f64).log2() as usize;
            for leaf in 0..m {
                assert_eq!(t.path_and_labels(leaf).unwrap().len(), depth);
            }
        }
    }

    #[test]
    fn quantile_scale_gives_each_head_a_near_even_split() {
        // Deterministic long-tailed sample; quantile boundaries should give
        // every balanced-tree head close to a 50/50 label split.
        let watch: Vec<f64> = (0..4096)
            .map(|i| {
                let u = (i as f64 + 0.5) / 4096.0;
                -30.0 * (1.0 - u).ln()
            })
            .collect();
        let s = OrdinalScale::from_watch_times(&watch, 8).unwrap();
        let t = DecompositionTree::balanced(&s).unwrap();
        let mut pos = vec![0usize; t.num_heads()];
        let mut tot = vec![0usize; t.num_heads()];
        for &w in &watch {
            let leaf = s.leaf_of(w).unwrap();
            for step in t.path_and_labels(leaf).unwrap() {
                tot[step.head] += 1;
                if step.right {
                    pos[step.head] += 1;
                }
            }
        }
        for h in 0..t.num_heads() {
            let frac = pos[h] as f64 / tot[h] as f64;
            assert!(
                (frac - 0.5).abs() < 0.05,
                "head {h} split {frac:.3} strays from 0.5"
            );
        }
    }
}
