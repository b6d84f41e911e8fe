//! Genealogical distances and the q-thinning of the extremal configuration.
//!
//! Leaf indices in this module are 0-based ranks in the decreasing
//! [`ExtremalConfiguration`]: rank 0 is the maximal particle.

use serde::{Deserialize, Serialize};

use crate::bbm_sim::{front_centering, leaf_configuration, BranchingTree, ExtremalConfiguration};
use crate::error::{LabError, Result};

/// Default cap on the side of a dense overlap matrix.
pub const DEFAULT_MATRIX_CAP: usize = 4096;

/// Branch time of the most recent common ancestor of leaves `i` and `j`
/// (tree node ids). Equals the horizon when `i == j`.
pub fn overlap(tree: &BranchingTree, i: usize, j: usize) -> Result<f64> {
    for id in [i, j] {
        if !tree.is_live_leaf(id) {
            return Err(LabError::UnknownLeaf(id));
        }
    }
    Ok(tree.node(mrca(tree, i, j)).end_time)
}

/// Most recent common ancestor of two nodes.
///
/// Ancestors are born strictly earlier than their descendants, so stepping
/// up whichever node was born later meets at the common ancestor.
pub fn mrca(tree: &BranchingTree, mut a: usize, mut b: usize) -> usize {
    while a != b {
        let (na, nb) = (tree.node(a), tree.node(b));
        if na.birth_time >= nb.birth_time {
            a = na.parent.expect("non-root node has a parent") as usize;
        } else {
            b = nb.parent.expect("non-root node has a parent") as usize;
        }
    }
    a
}

/// Normalized genealogical distances `Q_ij / t`, row-major, rows in the
/// order of `leaf_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    size: usize,
    horizon: f64,
    entries: Vec<f64>,
    leaf_ids: Vec<usize>,
}

impl OverlapMatrix {
    pub fn from_entries(size: usize, horizon: f64, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(LabError::SizeMismatch(format!(
                "{} entries for a {size}x{size} matrix",
                entries.len()
            )));
        }
        Ok(Self {
            size,
            horizon,
            entries,
            leaf_ids: (0..size).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn leaf_ids(&self) -> &[usize] {
        &self.leaf_ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    /// Unnormalized overlap `t * Q̄_ij`.
    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        self.horizon * self.get(i, j)
    }

    /// Restriction to the given rows/columns, in the given order.
    pub fn submatrix(&self, indices: &[usize]) -> Self {
        let n = indices.len();
        let mut entries = Vec::with_capacity(n * n);
        for &i in indices {
            for &j in indices {
                entries.push(self.get(i, j));
            }
        }
        Self {
            size: n,
            horizon: self.horizon,
            entries,
            leaf_ids: indices.iter().map(|&i| self.leaf_ids[i]).collect(),
        }
    }

    pub fn is_symmetric_unit_diagonal(&self) -> bool {
        (0..self.size).all(|i| {
            self.get(i, i) == 1.0 && (0..i).all(|j| self.get(i, j) == self.get(j, i))
        })
    }

    /// Literal check of `Q̄_ik >= min(Q̄_ij, Q̄_jk)` over every ordered triple.
    pub fn triples_ultrametric(&self) -> bool {
        let n = self.size;
        for i in 0..n {
            for j in 0..n {
                let qij = self.get(i, j);
                for k in 0..n {
                    if self.get(i, k) < qij.min(self.get(j, k)) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// The triple inequality for all triples, checked in O(n^2).
    ///
    /// The inequality holds for every triple iff every entry dominates the
    /// max-min path value between its endpoints, and that value is attained
    /// on a maximum spanning tree. Builds the tree with Prim's algorithm and
    /// compares each entry with the bottleneck value along the tree path.
    pub fn ultrametric(&self) -> bool {
        let n = self.size;
        if n <= 2 {
            return true;
        }
        // Prim, dense version.
        let mut in_tree = vec![false; n];
        let mut best = vec![f64::NEG_INFINITY; n];
        let mut link = vec![usize::MAX; n];
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        best[0] = f64::INFINITY;
        for _ in 0..n {
            let mut u = usize::MAX;
            for v in 0..n {
                if !in_tree[v] && (u == usize::MAX || best[v] > best[u]) {
                    u = v;
                }
            }
            in_tree[u] = true;
            if link[u] != usize::MAX {
                let w = self.get(u, link[u]);
                adjacency[u].push((link[u], w));
                adjacency[link[u]].push((u, w));
            }
            for v in 0..n {
                if !in_tree[v] && self.get(u, v) > best[v] {
                    best[v] = self.get(u, v);
                    link[v] = u;
                }
            }
        }
        // Bottleneck from every source along the tree.
        let mut bottleneck = vec![0.0; n];
        let mut stack = Vec::with_capacity(n);
        let mut seen = vec![usize::MAX; n];
        for source in 0..n {
            bottleneck[source] = f64::INFINITY;
            seen[source] = source;
            stack.push(source);
            while let Some(u) = stack.pop() {
                for &(v, w) in &adjacency[u] {
                    if seen[v] != source {
                        seen[v] = source;
                        bottleneck[v] = bottleneck[u].min(w);
                        stack.push(v);
                    }
                }
            }
            for k in 0..n {
                if k != source && self.get(source, k) < bottleneck[k] {
                    return false;
                }
            }
        }
        true
    }
}

/// Dense matrix of `overlap / t` for the given leaves (tree node ids).
pub fn overlap_matrix_for(
    tree: &BranchingTree,
    leaf_ids: &[usize],
    cap: usize,
) -> Result<OverlapMatrix> {
    let n = leaf_ids.len();
    if n > cap {
        return Err(LabError::Capacity {
            what: "overlap matrix side",
            limit: cap,
            progress: format!("{n} leaves requested"),
        });
    }
    for &id in leaf_ids {
        if !tree.is_live_leaf(id) {
            return Err(LabError::UnknownLeaf(id));
        }
    }
    let t = tree.horizon();
    let mut entries = vec![0.0; n * n];
    for a in 0..n {
        entries[a * n + a] = tree.node(leaf_ids[a]).end_time / t;
        for b in 0..a {
            let q = tree.node(mrca(tree, leaf_ids[a], leaf_ids[b])).end_time / t;
            entries[a * n + b] = q;
            entries[b * n + a] = q;
        }
    }
    Ok(OverlapMatrix {
        size: n,
        horizon: t,
        entries,
        leaf_ids: leaf_ids.to_vec(),
    })
}

/// Overlap matrix with rows in rank order of the leaf configuration.
pub fn normalized_overlap_matrix(tree: &BranchingTree, cap: usize) -> Result<OverlapMatrix> {
    let config = leaf_configuration(tree)?;
    overlap_matrix_for(tree, &config.leaf_ids, cap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinnedProcess {
    pub positions: Vec<f64>,
    /// 0-based ranks into the source configuration, strictly increasing.
    pub selected_indices: Vec<usize>,
    pub q: f64,
    pub horizon: f64,
}

impl ThinnedProcess {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Points strictly above `y`.
    pub fn above(&self, y: f64) -> Vec<f64> {
        self.positions.iter().copied().take_while(|&x| x > y).collect()
    }
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(LabError::InvalidParameter(format!(
            "thinning parameter must lie in (0, 1), got {q}"
        )))
    }
}

/// The greedy recursion: keep the top point, then every later point whose
/// overlap with all points kept so far is below `q`. The list ends when no
/// admissible index remains.
pub fn q_thinning_matrix(
    config: &ExtremalConfiguration,
    overlaps: &OverlapMatrix,
    q: f64,
) -> Result<ThinnedProcess> {
    check_q(q)?;
    if config.len() != overlaps.size() {
        return Err(LabError::SizeMismatch(format!(
            "configuration has {} points, overlap matrix is {}x{}",
            config.len(),
            overlaps.size(),
            overlaps.size()
        )));
    }
    let mut selected: Vec<usize> = Vec::new();
    for j in 0..config.len() {
        if selected.iter().all(|&l| overlaps.get(l, j) < q) {
            selected.push(j);
        }
    }
    Ok(ThinnedProcess {
        positions: selected.iter().map(|&i| config.positions[i]).collect(),
        selected_indices: selected,
        q,
        horizon: config.horizon,
    })
}

/// For every leaf rank, the id of its cluster: the topmost ancestor whose
/// branch time `s` satisfies `s / t >= q`.
fn cluster_roots(tree: &BranchingTree, config: &ExtremalConfiguration, q: f64) -> Vec<usize> {
    let t = tree.horizon();
    let nodes = tree.nodes();
    // Parents always carry smaller ids than their children.
    let mut root = vec![usize::MAX; nodes.len()];
    for (id, node) in nodes.iter().enumerate() {
        if node.end_time / t < q {
            continue;
        }
        root[id] = match node.parent {
            Some(p) if root[p as usize] != usize::MAX => root[p as usize],
            _ => id,
        };
    }
    config.leaf_ids.iter().map(|&leaf| root[leaf]).collect()
}

/// Thinning from the tree cut at time `q t`, for a precomputed configuration.
pub fn q_thinning_tree_with(
    tree: &BranchingTree,
    config: &ExtremalConfiguration,
    q: f64,
) -> Result<ThinnedProcess> {
    check_q(q)?;
    let roots = cluster_roots(tree, config, q);
    let mut seen = vec![false; tree.len()];
    let mut selected = Vec::new();
    // Ranks are visited in decreasing position, so the first hit of a
    // cluster is its maximum.
    for (rank, &r) in roots.iter().enumerate() {
        if !seen[r] {
            seen[r] = true;
            selected.push(rank);
        }
    }
    Ok(ThinnedProcess {
        positions: selected.iter().map(|&i| config.positions[i]).collect(),
        selected_indices: selected,
        q,
        horizon: config.horizon,
    })
}

pub fn q_thinning_tree(tree: &BranchingTree, q: f64) -> Result<ThinnedProcess> {
    let config = leaf_configuration(tree)?;
    q_thinning_tree_with(tree, &config, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDecomposition {
    /// Blocks of ranks, each ascending; blocks ordered by their maximum.
    pub blocks: Vec<Vec<usize>>,
    pub representatives: Vec<usize>,
    pub positions: Vec<f64>,
    pub q: f64,
    pub horizon: f64,
}

impl ClusterDecomposition {
    pub fn size(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// Whether every block of `self` lies inside a block of `coarser`.
    pub fn refines(&self, coarser: &ClusterDecomposition) -> bool {
        let n = coarser.size();
        if self.size() != n {
            return false;
        }
        let mut owner = vec![usize::MAX; n];
        for (b, block) in coarser.blocks.iter().enumerate() {
            for &i in block {
                owner[i] = b;
            }
        }
        self.blocks
            .iter()
            .all(|block| block.iter().all(|&i| owner[i] == owner[block[0]]))
    }
}

pub fn cluster_decomposition_with(
    tree: &BranchingTree,
    config: &ExtremalConfiguration,
    q: f64,
) -> Result<ClusterDecomposition> {
    check_q(q)?;
    let roots = cluster_roots(tree, config, q);
    let mut block_of = vec![usize::MAX; tree.len()];
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for (rank, &r) in roots.iter().enumerate() {
        if block_of[r] == usize::MAX {
            block_of[r] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[block_of[r]].push(rank);
    }
    let representatives: Vec<usize> = blocks.iter().map(|b| b[0]).collect();
    Ok(ClusterDecomposition {
        positions: representatives.iter().map(|&i| config.positions[i]).collect(),
        representatives,
        blocks,
        q,
        horizon: config.horizon,
    })
}

pub fn cluster_decomposition(tree: &BranchingTree, q: f64) -> Result<ClusterDecomposition> {
    let config = leaf_configuration(tree)?;
    cluster_decomposition_with(tree, &config, q)
}

/// Branch times of the common ancestors of pairs among the leaves of
/// `config` strictly above `y` (one entry per branching node that separates
/// at least two such leaves).
pub fn extremal_pair_branch_times(
    tree: &BranchingTree,
    config: &ExtremalConfiguration,
    y: f64,
) -> Vec<f64> {
    let extremal: Vec<usize> = config
        .positions
        .iter()
        .zip(&config.leaf_ids)
        .take_while(|(&x, _)| x > y)
        .map(|(_, &id)| id)
        .collect();
    if extremal.len() < 2 {
        return Vec::new();
    }
    // Count marked children per node by walking each leaf up until it meets
    // a node that is already marked.
    let mut marked = vec![false; tree.len()];
    let mut marked_children = vec![0u32; tree.len()];
    for &leaf in &extremal {
        let mut v = leaf;
        marked[v] = true;
        while let Some(p) = tree.node(v).parent {
            let p = p as usize;
            marked_children[p] += 1;
            if marked[p] {
                break;
            }
            marked[p] = true;
            v = p;
        }
    }
    let mut times: Vec<f64> = marked_children
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= 2)
        .map(|(id, _)| tree.node(id).end_time)
        .collect();
    times.sort_by(f64::total_cmp);
    times
}

/// Whether some pair above `m(t) + y` has overlap in `(r_d, t - r_g)`.
pub fn has_genealogical_gap(
    tree: &BranchingTree,
    config: &ExtremalConfiguration,
    y: f64,
    r_d: f64,
    r_g: f64,
) -> bool {
    let t = tree.horizon();
    extremal_pair_branch_times(tree, config, y)
        .iter()
        .any(|&s| s > r_d && s < t - r_g)
}

pub fn check_gap_horizon(t: f64, r_d: f64, r_g: f64) -> Result<()> {
    if t > 3.0 * r_d.max(r_g) {
        Ok(())
    } else {
        Err(LabError::HorizonConstraint(format!(
            "need t > 3 max(r_d, r_g), got t = {t}, r_d = {r_d}, r_g = {r_g}"
        )))
    }
}

/// Fraction of trees with an extremal pair whose overlap falls in
/// `(r_d, t - r_g)`.
pub fn genealogical_gap_fraction(
    trees: &[BranchingTree],
    y: f64,
    r_d: f64,
    r_g: f64,
) -> Result<f64> {
    if trees.is_empty() {
        return Err(LabError::InvalidParameter("no trees".into()));
    }
    let mut hits = 0usize;
    for tree in trees {
        if r_d + r_g >= tree.horizon() {
            continue;
        }
        check_gap_horizon(tree.horizon(), r_d, r_g)?;
        front_centering(tree.horizon())?;
        let config = leaf_configuration(tree)?;
        if has_genealogical_gap(tree, &config, y, r_d, r_g) {
            hits += 1;
        }
    }
    Ok(hits as f64 / trees.len() as f64)
}

/// `count` equally spaced values covering `[low, high]`.
pub fn q_grid(low: f64, high: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![low],
        _ => (0..count)
            .map(|i| low + (high - low) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Whether the thinned process restricted to `(y, ∞)` is identical for all
/// `q` in the grid.
pub fn thinning_stable(
    tree: &BranchingTree,
    config: &ExtremalConfiguration,
    grid: &[f64],
    y: f64,
) -> Result<bool> {
    let mut reference: Option<Vec<f64>> = None;
    for &q in grid {
        let above = q_thinning_tree_with(tree, config, q)?.above(y);
        match &reference {
            None => reference = Some(above),
            Some(r) if *r != above => return Ok(false),
            Some(_) => {}
        }
    }
    Ok(true)
}
