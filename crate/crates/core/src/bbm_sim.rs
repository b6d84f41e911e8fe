//! Exact event-driven simulation of branching Brownian motion.
//!
//! A particle lives for an Exp(1) time, moves as a standard Brownian motion
//! while alive and is replaced at its death by `k` offspring with probability
//! `p_k`. Positions are only ever sampled at branch events, at the horizon and
//! at the configured checkpoint times, so there is no discretization bias.

use std::io::{BufRead, Write};

use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fmt::{f64_17, json_f64};
use crate::rng::{child_key, StreamRng};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Coefficient of the logarithmic correction of the front, `3 / (2 sqrt 2)`.
pub const LOG_CORRECTION: f64 = 3.0 / (2.0 * SQRT2);

const LAW_TOLERANCE: f64 = 1e-12;

/// Default bound on the number of nodes a single tree may allocate.
pub const DEFAULT_NODE_CAP: usize = 20_000_000;

/// Position of the front, `m(t) = sqrt(2) t - 3/(2 sqrt 2) ln t`.
pub fn front_centering(t: f64) -> Result<f64> {
    if !(t > 1.0) || !t.is_finite() {
        return Err(LabError::HorizonTooSmall(t));
    }
    Ok(SQRT2 * t - LOG_CORRECTION * t.ln())
}

/// Finite-support offspring distribution; `probs[k - 1]` is `p_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OffspringLaw {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    factorial_moment: f64,
}

impl OffspringLaw {
    /// A law with `sum p_k = 1` and mean offspring number 2.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let law = Self::unnormalized(probs)?;
        if (law.mean() - 2.0).abs() > LAW_TOLERANCE {
            return Err(LabError::InvalidConfig(format!(
                "offspring mean must be 2, got {}",
                law.mean()
            )));
        }
        Ok(law)
    }

    /// A law that only needs `sum p_k = 1`.
    ///
    /// Degenerate laws such as `p_1 = 1` are useful for testing the
    /// simulator, but the front centering does not apply to them.
    pub fn unnormalized(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(LabError::InvalidConfig("offspring law is empty".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(LabError::InvalidConfig(
                "offspring probabilities must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > LAW_TOLERANCE {
            return Err(LabError::InvalidConfig(format!(
                "offspring probabilities sum to {total}, not 1"
            )));
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let factorial_moment = probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let k = (i + 1) as f64;
                k * (k - 1.0) * p
            })
            .sum();
        Ok(Self {
            probs,
            cumulative,
            factorial_moment,
        })
    }

    pub fn binary() -> Self {
        Self::new(vec![0.0, 1.0]).expect("binary law is valid")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn probability(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.probs.get(k - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn k_max(&self) -> usize {
        self.probs.len()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    /// `K = sum k (k - 1) p_k`.
    pub fn factorial_moment(&self) -> f64 {
        self.factorial_moment
    }

    /// Probability generating function `sum p_k u^k`.
    pub fn generating(&self, u: f64) -> f64 {
        // Horner on sum_{k>=1} p_k u^k = u * (p_1 + u (p_2 + ...)).
        let inner = self.probs.iter().rev().fold(0.0, |acc, p| acc * u + p);
        inner * u
    }

    /// Offspring count for a uniform draw `u` in (0, 1).
    #[inline]
    pub fn sample(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.probs.len() - 1)
            + 1
    }
}

impl TryFrom<Vec<f64>> for OffspringLaw {
    type Error = LabError;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::unnormalized(probs)
    }
}

impl From<OffspringLaw> for Vec<f64> {
    fn from(law: OffspringLaw) -> Self {
        law.probs
    }
}

impl Default for OffspringLaw {
    fn default() -> Self {
        Self::binary()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub offspring: OffspringLaw,
    pub seed: u64,
    /// Prune particles below `sqrt(2) s - L` at branch events.
    pub barrier_offset: Option<f64>,
    pub checkpoint_times: Vec<f64>,
    pub node_cap: usize,
}

impl SimConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            offspring: OffspringLaw::binary(),
            seed,
            barrier_offset: None,
            checkpoint_times: Vec::new(),
            node_cap: DEFAULT_NODE_CAP,
        }
    }

    pub fn with_offspring(mut self, offspring: OffspringLaw) -> Self {
        self.offspring = offspring;
        self
    }

    pub fn with_barrier(mut self, offset: f64) -> Self {
        self.barrier_offset = Some(offset);
        self
    }

    pub fn with_checkpoints(mut self, times: Vec<f64>) -> Self {
        self.checkpoint_times = times;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(LabError::InvalidConfig(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if let Some(l) = self.barrier_offset {
            if !(l >= 0.0) {
                return Err(LabError::InvalidConfig(format!(
                    "barrier offset must be >= 0, got {l}"
                )));
            }
        }
        let mut prev = 0.0;
        for &c in &self.checkpoint_times {
            if !(c > prev) {
                return Err(LabError::InvalidConfig(
                    "checkpoint times must be positive and strictly increasing".into(),
                ));
            }
            prev = c;
        }
        if prev > self.horizon {
            return Err(LabError::InvalidConfig(
                "last checkpoint lies beyond the horizon".into(),
            ));
        }
        if self.node_cap == 0 {
            return Err(LabError::InvalidConfig("node cap must be positive".into()));
        }
        Ok(())
    }
}

/// One edge of the genealogical tree: a particle's life from birth to death
/// (or to the horizon).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub birth_time: f64,
    pub end_time: f64,
    pub birth_position: f64,
    pub end_position: f64,
    pub parent: Option<u32>,
    /// Children occupy the id range `first_child .. first_child + child_count`.
    pub first_child: u32,
    pub child_count: u32,
    pub pruned: bool,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.child_count == 0
    }

    pub fn children(&self) -> std::ops::Range<usize> {
        let first = self.first_child as usize;
        first..first + self.child_count as usize
    }
}

/// Positions of all particles alive at a recorded time, ordered by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub time: f64,
    pub node_ids: Vec<u32>,
    pub positions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchingTree {
    nodes: Vec<Node>,
    horizon: f64,
    seed: u64,
    offspring: OffspringLaw,
    barrier_offset: Option<f64>,
    pruned_count: usize,
    checkpoints: Vec<Checkpoint>,
}

impl BranchingTree {
    pub fn root(&self) -> usize {
        0
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn offspring(&self) -> &OffspringLaw {
        &self.offspring
    }

    pub fn barrier_offset(&self) -> Option<f64> {
        self.barrier_offset
    }

    pub fn pruned_count(&self) -> usize {
        self.pruned_count
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn checkpoint_at(&self, time: f64) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.time == time)
    }

    /// Ids of leaves that reached the horizon, in increasing id order.
    pub fn leaf_ids(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_leaf() && !n.pruned)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf() && !n.pruned).count()
    }

    pub fn is_live_leaf(&self, id: usize) -> bool {
        self.nodes
            .get(id)
            .map(|n| n.is_leaf() && !n.pruned)
            .unwrap_or(false)
    }

    /// Positions of the particles alive at `time` (horizon or checkpoint),
    /// ordered by node id.
    pub fn positions_at(&self, time: f64) -> Result<Vec<f64>> {
        if let Some(c) = self.checkpoint_at(time) {
            return Ok(c.positions.clone());
        }
        if time == self.horizon {
            return Ok(self
                .nodes
                .iter()
                .filter(|n| n.is_leaf() && !n.pruned)
                .map(|n| n.end_position)
                .collect());
        }
        Err(LabError::TimeNotRecorded(time))
    }

    /// Rebuild a tree from its node table, checking the structural invariants.
    pub fn from_parts(
        header: TreeHeader,
        nodes: Vec<Node>,
    ) -> Result<Self> {
        let tree = Self {
            nodes,
            horizon: header.horizon,
            seed: header.seed,
            offspring: header.offspring,
            barrier_offset: header.barrier_offset,
            pruned_count: header.pruned_count,
            checkpoints: Vec::new(),
        };
        tree.check_structure()?;
        Ok(tree)
    }

    /// Continuity and timing invariants of every node.
    pub fn check_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::Parse(msg));
        let Some(root) = self.nodes.first() else {
            return bad("tree has no nodes".into());
        };
        if root.birth_time != 0.0 || root.birth_position != 0.0 || root.parent.is_some() {
            return bad("root must be born at time 0 and position 0".into());
        }
        let mut pruned = 0;
        for (id, node) in self.nodes.iter().enumerate() {
            if !(node.end_time > node.birth_time) {
                return bad(format!("node {id} has non-positive duration"));
            }
            if node.is_leaf() {
                if node.pruned {
                    pruned += 1;
                } else if node.end_time != self.horizon {
                    return bad(format!("unpruned leaf {id} ends before the horizon"));
                }
            }
            for c in node.children() {
                let Some(child) = self.nodes.get(c) else {
                    return bad(format!("node {id} references missing child {c}"));
                };
                if child.parent != Some(id as u32)
                    || child.birth_time != node.end_time
                    || child.birth_position != node.end_position
                {
                    return bad(format!("child {c} is not continuous with parent {id}"));
                }
            }
        }
        if pruned != self.pruned_count {
            return bad(format!(
                "header reports {} pruned leaves, found {pruned}",
                self.pruned_count
            ));
        }
        Ok(())
    }

    pub fn header(&self) -> TreeHeader {
        TreeHeader {
            horizon: self.horizon,
            seed: self.seed,
            offspring: self.offspring.clone(),
            barrier_offset: self.barrier_offset,
            pruned_count: self.pruned_count,
        }
    }

    /// Newline-delimited JSON: a header line, then one line per node.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        let probs: Vec<String> = self.offspring.probs().iter().map(|&p| f64_17(p)).collect();
        writeln!(
            out,
            "{{\"horizon\":{},\"seed\":{},\"offspring\":[{}],\"barrier_offset\":{},\"pruned_count\":{}}}",
            f64_17(self.horizon),
            self.seed,
            probs.join(","),
            self.barrier_offset.map(json_f64).unwrap_or_else(|| "null".into()),
            self.pruned_count
        )?;
        for (id, n) in self.nodes.iter().enumerate() {
            let parent = n
                .parent
                .map(|p| p.to_string())
                .unwrap_or_else(|| "null".into());
            writeln!(
                out,
                "{{\"id\":{id},\"parent\":{parent},\"birth_time\":{},\"end_time\":{},\"birth_position\":{},\"end_position\":{}}}",
                f64_17(n.birth_time),
                f64_17(n.end_time),
                f64_17(n.birth_position),
                f64_17(n.end_position)
            )?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| LabError::Parse("empty tree file".into()))??;
        let header: TreeHeader = serde_json::from_str(&header_line)?;
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: NodeRecord = serde_json::from_str(&line)?;
            if rec.id != records.len() {
                return Err(LabError::Parse(format!(
                    "node ids must be consecutive, found {} at line {}",
                    rec.id,
                    records.len() + 2
                )));
            }
            records.push(rec);
        }
        let mut nodes: Vec<Node> = records
            .iter()
            .map(|r| Node {
                birth_time: r.birth_time,
                end_time: r.end_time,
                birth_position: r.birth_position,
                end_position: r.end_position,
                parent: r.parent,
                first_child: 0,
                child_count: 0,
                pruned: false,
            })
            .collect();
        for (id, r) in records.iter().enumerate() {
            let Some(p) = r.parent else { continue };
            let p = p as usize;
            if p >= id {
                return Err(LabError::Parse(format!("node {id} precedes its parent {p}")));
            }
            let parent = &mut nodes[p];
            if parent.child_count == 0 {
                parent.first_child = id as u32;
            } else if parent.first_child as usize + parent.child_count as usize != id {
                return Err(LabError::Parse(format!(
                    "children of node {p} are not contiguous"
                )));
            }
            parent.child_count += 1;
        }
        let horizon = header.horizon;
        for n in nodes.iter_mut() {
            n.pruned = n.child_count == 0 && n.end_time < horizon;
        }
        Self::from_parts(header, nodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeHeader {
    pub horizon: f64,
    pub seed: u64,
    pub offspring: OffspringLaw,
    pub barrier_offset: Option<f64>,
    pub pruned_count: usize,
}

#[derive(Debug, Deserialize)]
struct NodeRecord {
    id: usize,
    parent: Option<u32>,
    birth_time: f64,
    end_time: f64,
    birth_position: f64,
    end_position: f64,
}

struct Pending {
    id: u32,
    key: u64,
}

/// Simulate one tree. Deterministic in `config`.
pub fn simulate_tree(config: &SimConfig) -> Result<BranchingTree> {
    config.validate()?;
    let horizon = config.horizon;
    let checkpoints = &config.checkpoint_times;
    let mut nodes: Vec<Node> = Vec::with_capacity(1024);
    let mut recorded: Vec<Vec<(u32, f64)>> = vec![Vec::new(); checkpoints.len()];
    let mut pruned_count = 0usize;

    nodes.push(Node {
        birth_time: 0.0,
        end_time: 0.0,
        birth_position: 0.0,
        end_position: 0.0,
        parent: None,
        first_child: 0,
        child_count: 0,
        pruned: false,
    });
    let mut stack = vec![Pending { id: 0, key: 0 }];

    while let Some(Pending { id, key }) = stack.pop() {
        let mut rng = StreamRng::for_key(config.seed, key);
        let (birth_time, birth_position) = {
            let n = &nodes[id as usize];
            (n.birth_time, n.birth_position)
        };
        let lifetime: f64 = Exp1.sample(&mut rng);
        let branch_u = rng.open01();
        let branches = birth_time + lifetime < horizon;
        let end_time = if branches { birth_time + lifetime } else { horizon };

        // Forward Gaussian increments, cut at every checkpoint the edge spans.
        let mut time = birth_time;
        let mut position = birth_position;
        let first_cp = checkpoints.partition_point(|&c| c <= birth_time);
        for (slot, &c) in checkpoints.iter().enumerate().skip(first_cp) {
            if c > end_time {
                break;
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            position += z * (c - time).sqrt();
            time = c;
            recorded[slot].push((id, position));
        }
        if end_time > time {
            let z: f64 = StandardNormal.sample(&mut rng);
            position += z * (end_time - time).sqrt();
        }

        {
            let node = &mut nodes[id as usize];
            node.end_time = end_time;
            node.end_position = position;
            if !branches {
                continue;
            }
            if let Some(offset) = config.barrier_offset {
                if position < SQRT2 * end_time - offset {
                    node.pruned = true;
                    pruned_count += 1;
                    continue;
                }
            }
        }
        let k = config.offspring.sample(branch_u);
        if nodes.len() + k > config.node_cap {
            return Err(LabError::Capacity {
                what: "tree nodes",
                limit: config.node_cap,
                progress: format!(
                    "{} nodes created, {} pending, simulated up to time {end_time:.3} on the current lineage",
                    nodes.len(),
                    stack.len()
                ),
            });
        }
        let first = nodes.len() as u32;
        nodes[id as usize].first_child = first;
        nodes[id as usize].child_count = k as u32;
        for i in 0..k {
            nodes.push(Node {
                birth_time: end_time,
                end_time,
                birth_position: position,
                end_position: position,
                parent: Some(id),
                first_child: 0,
                child_count: 0,
                pruned: false,
            });
            stack.push(Pending {
                id: first + i as u32,
                key: child_key(key, i as u64),
            });
        }
    }

    let checkpoints = checkpoints
        .iter()
        .zip(recorded)
        .map(|(&time, mut entries)| {
            entries.sort_unstable_by_key(|e| e.0);
            let (node_ids, positions) = entries.into_iter().unzip();
            Checkpoint {
                time,
                node_ids,
                positions,
            }
        })
        .collect();

    Ok(BranchingTree {
        nodes,
        horizon,
        seed: config.seed,
        offspring: config.offspring.clone(),
        barrier_offset: config.barrier_offset,
        pruned_count,
        checkpoints,
    })
}

/// Centered leaf positions in decreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalConfiguration {
    pub positions: Vec<f64>,
    pub leaf_ids: Vec<usize>,
    pub horizon: f64,
}

impl ExtremalConfiguration {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn max(&self) -> Option<f64> {
        self.positions.first().copied()
    }
}

/// Sort `(position, id)` pairs by decreasing position, smaller id first on ties.
pub fn sort_decreasing(entries: &mut [(f64, usize)]) {
    entries.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
}

pub fn leaf_configuration(tree: &BranchingTree) -> Result<ExtremalConfiguration> {
    let m = front_centering(tree.horizon())?;
    let mut entries: Vec<(f64, usize)> = tree
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.is_leaf() && !n.pruned)
        .map(|(id, n)| (n.end_position - m, id))
        .collect();
    if entries.is_empty() {
        return Err(LabError::EmptyConfiguration);
    }
    sort_decreasing(&mut entries);
    let (positions, leaf_ids) = entries.into_iter().unzip();
    Ok(ExtremalConfiguration {
        positions,
        leaf_ids,
        horizon: tree.horizon(),
    })
}

/// Restriction of `config` to the window `(low, high]`, order preserved.
pub fn leaves_in_window(
    config: &ExtremalConfiguration,
    low: f64,
    high: f64,
) -> ExtremalConfiguration {
    let (positions, leaf_ids) = config
        .positions
        .iter()
        .zip(&config.leaf_ids)
        .filter(|(&x, _)| x > low && x <= high)
        .map(|(&x, &id)| (x, id))
        .unzip();
    ExtremalConfiguration {
        positions,
        leaf_ids,
        horizon: config.horizon,
    }
}

/// Final positions of a BBM run without building the tree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Endpoints {
    /// Positions at the horizon of the particles that were never pruned,
    /// in depth-first visiting order.
    pub positions: Vec<f64>,
    /// `(time, position)` of every particle removed by the pruning rule.
    pub pruned: Vec<(f64, f64)>,
    pub nodes: usize,
}

/// Leaf positions of one BBM run, with an arbitrary pruning rule consulted
/// at every branch event.
///
/// Uses the same random streams as [`simulate_tree`], so with a rule that
/// never prunes the positions are those of the tree's leaves.
pub fn simulate_endpoints<F>(
    horizon: f64,
    offspring: &OffspringLaw,
    seed: u64,
    node_cap: usize,
    mut prune: F,
) -> Result<Endpoints>
where
    F: FnMut(f64, f64) -> bool,
{
    let mut out = Endpoints::default();
    // (birth time, birth position, key)
    let mut stack: Vec<(f64, f64, u64)> = vec![(0.0, 0.0, 0)];
    while let Some((birth_time, birth_position, key)) = stack.pop() {
        out.nodes += 1;
        let mut rng = StreamRng::for_key(seed, key);
        let lifetime: f64 = Exp1.sample(&mut rng);
        let branch_u = rng.open01();
        let branches = birth_time + lifetime < horizon;
        let end_time = if branches { birth_time + lifetime } else { horizon };
        let z: f64 = StandardNormal.sample(&mut rng);
        let position = birth_position + z * (end_time - birth_time).sqrt();
        if !branches {
            out.positions.push(position);
            continue;
        }
        if prune(end_time, position) {
            out.pruned.push((end_time, position));
            continue;
        }
        let k = offspring.sample(branch_u);
        if out.nodes + stack.len() + k > node_cap {
            return Err(LabError::Capacity {
                what: "tree nodes",
                limit: node_cap,
                progress: format!("{} nodes visited, {} pending", out.nodes, stack.len()),
            });
        }
        for i in 0..k {
            stack.push((end_time, position, child_key(key, i as u64)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn front_centering_values() {
        let e = std::f64::consts::E;
        let m = front_centering(e).unwrap();
        assert!((m - (SQRT2 * e - LOG_CORRECTION)).abs() < 1e-12);
        assert!((m - 2.78357).abs() < 1e-5);
        // sqrt(2) * 100 - (3 / (2 sqrt 2)) ln 100 = 141.421356 - 4.884521
        assert!((front_centering(100.0).unwrap() - 136.536836).abs() < 1e-5);
        let t = 1e9;
        assert!((front_centering(t).unwrap() / t - SQRT2).abs() < 1e-6);
    }

    #[test]
    fn front_centering_rejects_small_t() {
        assert!(matches!(front_centering(1.0), Err(LabError::HorizonTooSmall(_))));
        assert!(front_centering(0.5).is_err());
        assert!(front_centering(f64::NAN).is_err());
    }

    #[test]
    fn offspring_law_validation() {
        assert!(OffspringLaw::new(vec![0.0, 1.0]).is_ok());
        assert!(OffspringLaw::new(vec![0.5, 0.0, 0.5]).is_ok());
        assert!(OffspringLaw::new(vec![1.0]).is_err());
        assert!(OffspringLaw::new(vec![0.3, 0.3]).is_err());
        assert!(OffspringLaw::new(vec![-0.1, 1.1]).is_err());
        assert!(OffspringLaw::unnormalized(vec![1.0]).is_ok());
        let law = OffspringLaw::new(vec![0.5, 0.0, 0.5]).unwrap();
        assert!((law.factorial_moment() - 3.0).abs() < 1e-15);
        assert_eq!(OffspringLaw::binary().factorial_moment(), 2.0);
    }

    #[test]
    fn offspring_sampling_and_pgf() {
        let law = OffspringLaw::new(vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(law.sample(0.1), 1);
        assert_eq!(law.sample(0.3), 2);
        assert_eq!(law.sample(0.9), 3);
        let u = 0.3;
        let expect = 0.25 * u + 0.5 * u * u + 0.25 * u * u * u;
        assert!((law.generating(u) - expect).abs() < 1e-15);
        assert_eq!(law.generating(1.0), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0.0, 1).validate().is_err());
        assert!(SimConfig::new(5.0, 1)
            .with_checkpoints(vec![2.0, 1.0])
            .validate()
            .is_err());
        assert!(SimConfig::new(5.0, 1)
            .with_checkpoints(vec![1.0, 6.0])
            .validate()
            .is_err());
        assert!(SimConfig::new(5.0, 1).with_barrier(-1.0).validate().is_err());
        assert!(SimConfig::new(5.0, 1)
            .with_checkpoints(vec![1.0, 5.0])
            .validate()
            .is_ok());
    }

    #[test]
    fn single_lineage_has_one_leaf() {
        let law = OffspringLaw::unnormalized(vec![1.0]).unwrap();
        for &t in &[0.5, 3.0, 20.0] {
            let tree = simulate_tree(&SimConfig::new(t, 9).with_offspring(law.clone())).unwrap();
            assert_eq!(tree.leaf_count(), 1);
            tree.check_structure().unwrap();
        }
    }

    #[test]
    fn single_lineage_configuration() {
        let law = OffspringLaw::unnormalized(vec![1.0]).unwrap();
        let tree = simulate_tree(&SimConfig::new(4.0, 3).with_offspring(law)).unwrap();
        let leaf = tree.leaf_ids()[0];
        let conf = leaf_configuration(&tree).unwrap();
        let x = tree.node(leaf).end_position;
        assert_eq!(conf.positions, vec![x - front_centering(4.0).unwrap()]);
        assert_eq!(conf.leaf_ids, vec![leaf]);
    }

    #[test]
    fn determinism_and_structure() {
        let cfg = SimConfig::new(5.0, 1234).with_checkpoints(vec![1.0, 2.5, 5.0]);
        let a = simulate_tree(&cfg).unwrap();
        let b = simulate_tree(&cfg).unwrap();
        assert_eq!(a, b);
        a.check_structure().unwrap();
        let c = simulate_tree(&cfg.clone().with_seed(1235)).unwrap();
        assert_ne!(a.nodes(), c.nodes());
    }

    #[test]
    fn checkpoints_do_not_change_topology() {
        let plain = simulate_tree(&SimConfig::new(5.0, 77)).unwrap();
        let cp = simulate_tree(&SimConfig::new(5.0, 77).with_checkpoints(vec![2.0, 4.0])).unwrap();
        assert_eq!(plain.len(), cp.len());
        for (a, b) in plain.nodes().iter().zip(cp.nodes()) {
            assert_eq!(a.end_time, b.end_time);
            assert_eq!(a.child_count, b.child_count);
        }
    }

    #[test]
    fn checkpoint_at_horizon_matches_leaves() {
        let tree = simulate_tree(&SimConfig::new(4.0, 5).with_checkpoints(vec![2.0, 4.0])).unwrap();
        let cp = tree.checkpoint_at(4.0).unwrap();
        let leaves: Vec<f64> = tree
            .leaf_ids()
            .into_iter()
            .map(|i| tree.node(i).end_position)
            .collect();
        assert_eq!(cp.positions, leaves);
        // Population alive at 2.0: one entry per edge spanning it.
        let spanning = tree
            .nodes()
            .iter()
            .filter(|n| n.birth_time < 2.0 && n.end_time >= 2.0)
            .count();
        assert_eq!(tree.checkpoint_at(2.0).unwrap().positions.len(), spanning);
        assert!(tree.positions_at(3.0).is_err());
    }

    #[test]
    fn capacity_error_reports_progress() {
        let cfg = SimConfig {
            node_cap: 50,
            ..SimConfig::new(8.0, 1)
        };
        match simulate_tree(&cfg) {
            Err(LabError::Capacity { limit, progress, .. }) => {
                assert_eq!(limit, 50);
                assert!(progress.contains("nodes created"));
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn configuration_is_sorted_and_consistent() {
        let tree = simulate_tree(&SimConfig::new(6.0, 11)).unwrap();
        let conf = leaf_configuration(&tree).unwrap();
        assert_eq!(conf.len(), tree.leaf_count());
        assert!(conf.positions.windows(2).all(|w| w[0] > w[1]));
        let m = front_centering(6.0).unwrap();
        let max_leaf = tree
            .leaf_ids()
            .iter()
            .map(|&i| tree.node(i).end_position)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(conf.max().unwrap() + m, max_leaf);
        for (x, &id) in conf.positions.iter().zip(&conf.leaf_ids) {
            assert_eq!(*x, tree.node(id).end_position - m);
        }
    }

    #[test]
    fn ties_break_by_smaller_id() {
        let mut e = vec![(1.0, 5), (2.0, 9), (1.0, 3)];
        sort_decreasing(&mut e);
        assert_eq!(e, vec![(2.0, 9), (1.0, 3), (1.0, 5)]);
    }

    #[test]
    fn window_restriction() {
        let tree = simulate_tree(&SimConfig::new(6.0, 2)).unwrap();
        let conf = leaf_configuration(&tree).unwrap();
        let all = leaves_in_window(&conf, f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!(all, conf);
        let above = leaves_in_window(&conf, conf.max().unwrap(), f64::INFINITY);
        assert!(above.is_empty());
        let mid = leaves_in_window(&conf, -2.0, 0.5);
        assert!(mid.positions.iter().all(|&x| x > -2.0 && x <= 0.5));
        assert!(mid.positions.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn everything_pruned_is_an_error() {
        let tree = simulate_tree(&SimConfig::new(8.0, 4).with_barrier(0.0)).unwrap();
        if tree.leaf_count() == 0 {
            assert!(matches!(leaf_configuration(&tree), Err(LabError::EmptyConfiguration)));
        }
        assert!(tree.pruned_count() > 0);
        tree.check_structure().unwrap();
    }

    #[test]
    fn ndjson_round_trip() {
        let tree = simulate_tree(&SimConfig::new(4.0, 8).with_barrier(3.0)).unwrap();
        let mut buf = Vec::new();
        tree.write_ndjson(&mut buf).unwrap();
        let back = BranchingTree::read_ndjson(buf.as_slice()).unwrap();
        assert_eq!(back.nodes(), tree.nodes());
        assert_eq!(back.header(), tree.header());
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().contains("\"pruned_count\""));
        assert_eq!(text.lines().count(), tree.len() + 1);
    }

    #[test]
    fn endpoints_match_tree_leaves() {
        let law = OffspringLaw::binary();
        for seed in 0..5 {
            let tree = simulate_tree(&SimConfig::new(5.0, seed)).unwrap();
            let mut a: Vec<f64> = tree
                .leaf_ids()
                .iter()
                .map(|&id| tree.node(id).end_position)
                .collect();
            let mut b = simulate_endpoints(5.0, &law, seed, DEFAULT_NODE_CAP, |_, _| false)
                .unwrap()
                .positions;
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn endpoints_pruning_rule_applies() {
        let law = OffspringLaw::binary();
        let all = simulate_endpoints(6.0, &law, 3, DEFAULT_NODE_CAP, |_, _| false).unwrap();
        let cut = simulate_endpoints(6.0, &law, 3, DEFAULT_NODE_CAP, |s, x| x < SQRT2 * s - 1.0)
            .unwrap();
        assert!(cut.nodes < all.nodes);
        assert!(!cut.pruned.is_empty());
        assert!(cut.pruned.iter().all(|&(s, x)| x < SQRT2 * s - 1.0));
        assert!(simulate_endpoints(6.0, &law, 3, 10, |_, _| false).is_err());
    }
}
