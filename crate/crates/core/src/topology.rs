//! Hierarchical bipartition of the variable set and the bit-interleaved
//! mapping between Cartesian grid sites and variable indices.
//!
//! Nodes are stored in heap order: node `0` is the root, the children of node
//! `id` are `2 id + 1` and `2 id + 2`. Heap order coincides with level-major
//! order, so the node at level `l` and 1-based block `k` has id
//! `2^l - 1 + (k - 1)`. The block at that node covers the 1-based variables
//! `2^(L-l) (k-1) + 1 ..= 2^(L-l) k`.
//!
//! Library code works with 0-based variable indices; serialized trees and grid
//! coordinates use 1-based indices.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{FhtError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRole {
    Root,
    Internal,
    Leaf,
}

/// Rank bookkeeping for the edge between a node and its parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeBudget {
    pub rank: usize,
    pub oversample: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub level: usize,
    /// 1-based block index within the level.
    pub block: usize,
    start: usize,
    len: usize,
    /// `None` only at the root.
    pub budget: Option<EdgeBudget>,
    /// Bond dimension actually retained by the last fit on this edge.
    pub effective_rank: Option<usize>,
}

impl TreeNode {
    /// 0-based variable range covered by the node.
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    /// 1-based index set, as written in serialized trees.
    pub fn index_set(&self) -> Vec<usize> {
        (self.start + 1..=self.start + self.len).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TreeRepr", into = "TreeRepr")]
pub struct DimensionTree {
    d: usize,
    depth: usize,
    nodes: Vec<TreeNode>,
}

impl DimensionTree {
    /// Balanced binary bipartition of `d = 2^L` variables. Every non-root node
    /// receives the same rank budget and oversampling size.
    pub fn balanced(d: usize, default_rank: usize, oversample: usize) -> Result<Self> {
        if d < 2 || !d.is_power_of_two() {
            return Err(FhtError::NotPowerOfTwo(d));
        }
        if default_rank == 0 {
            return Err(FhtError::InvalidParameter("rank must be positive".into()));
        }
        if oversample < default_rank {
            return Err(FhtError::InvalidParameter(format!(
                "oversampling size {oversample} is below the rank {default_rank}"
            )));
        }
        let depth = d.trailing_zeros() as usize;
        let mut nodes = Vec::with_capacity(2 * d - 1);
        for level in 0..=depth {
            let width = d >> level;
            for k in 0..(1usize << level) {
                nodes.push(TreeNode {
                    level,
                    block: k + 1,
                    start: width * k,
                    len: width,
                    budget: (level > 0).then_some(EdgeBudget {
                        rank: default_rank,
                        oversample,
                    }),
                    effective_rank: None,
                });
            }
        }
        Ok(Self { d, depth, nodes })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of levels below the root (`L`).
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn id_of(&self, level: usize, block: usize) -> Option<usize> {
        (level <= self.depth && block >= 1 && block <= 1 << level).then(|| (1usize << level) - 1 + block - 1)
    }

    pub fn role(&self, id: usize) -> NodeRole {
        if id == 0 {
            NodeRole::Root
        } else if self.nodes[id].level == self.depth {
            NodeRole::Leaf
        } else {
            NodeRole::Internal
        }
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        (self.nodes[id].level < self.depth).then(|| (2 * id + 1, 2 * id + 2))
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        (id > 0).then(|| (id - 1) / 2)
    }

    pub fn sibling(&self, id: usize) -> Option<usize> {
        (id > 0).then(|| if id % 2 == 1 { id + 1 } else { id - 1 })
    }

    /// Node id of the leaf holding 0-based variable `var`.
    pub fn leaf_id(&self, var: usize) -> usize {
        (1usize << self.depth) - 1 + var
    }

    /// 0-based variable held by a leaf node.
    pub fn leaf_var(&self, id: usize) -> usize {
        id + 1 - (1usize << self.depth)
    }

    /// Ids of the node and its ancestors, from the node up to the root.
    pub fn path_to_root(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path
    }

    pub fn budget(&self, id: usize) -> Option<EdgeBudget> {
        self.nodes[id].budget
    }

    /// Overrides the rank budget of the edge above node `id`.
    pub fn set_budget(&mut self, id: usize, rank: usize, oversample: usize) -> Result<()> {
        if id == 0 || id >= self.nodes.len() {
            return Err(FhtError::OutOfRange(format!("node {id} has no parent edge")));
        }
        if rank == 0 || oversample < rank {
            return Err(FhtError::InvalidParameter(format!(
                "need 0 < rank <= oversample, got rank {rank}, oversample {oversample}"
            )));
        }
        self.nodes[id].budget = Some(EdgeBudget { rank, oversample });
        Ok(())
    }

    pub fn set_effective_rank(&mut self, id: usize, rank: usize) {
        self.nodes[id].effective_rank = Some(rank);
    }
}

#[derive(Serialize, Deserialize)]
struct NodeRepr {
    level: usize,
    block: usize,
    index_set: Vec<usize>,
    rank: Option<usize>,
    oversample: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    effective_rank: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeRepr {
    d: usize,
    #[serde(rename = "L")]
    depth: usize,
    nodes: Vec<NodeRepr>,
}

impl From<DimensionTree> for TreeRepr {
    fn from(tree: DimensionTree) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| NodeRepr {
                level: n.level,
                block: n.block,
                index_set: n.index_set(),
                rank: n.budget.map(|b| b.rank),
                oversample: n.budget.map(|b| b.oversample),
                effective_rank: n.effective_rank,
            })
            .collect();
        TreeRepr {
            d: tree.d,
            depth: tree.depth,
            nodes,
        }
    }
}

impl TryFrom<TreeRepr> for DimensionTree {
    type Error = FhtError;

    fn try_from(repr: TreeRepr) -> Result<Self> {
        let mut tree = DimensionTree::balanced(repr.d, 1, 1)?;
        if tree.depth != repr.depth || repr.nodes.len() != tree.nodes.len() {
            return Err(FhtError::Format("tree shape does not match d".into()));
        }
        for (node, r) in tree.nodes.iter_mut().zip(repr.nodes) {
            if node.level != r.level || node.block != r.block || node.index_set() != r.index_set {
                return Err(FhtError::Format(format!(
                    "node (level {}, block {}) does not match the balanced layout",
                    r.level, r.block
                )));
            }
            node.budget = match (node.level, r.rank, r.oversample) {
                (0, None, None) => None,
                (l, Some(rank), Some(oversample)) if l > 0 && rank > 0 && oversample >= rank => {
                    Some(EdgeBudget { rank, oversample })
                }
                _ => {
                    return Err(FhtError::Format(format!(
                        "bad rank budget at node (level {}, block {})",
                        r.level, r.block
                    )))
                }
            };
            node.effective_rank = r.effective_rank;
        }
        Ok(tree)
    }
}

/// Cartesian lattice with `m = 2^bits` points per axis in `dims` physical
/// dimensions, spacing `h = 1/(m+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    dims: usize,
    m: usize,
}

impl GridSpec {
    pub fn new(dims: usize, m: usize) -> Result<Self> {
        if !(1..=3).contains(&dims) {
            return Err(FhtError::InvalidParameter(format!(
                "physical dimension must be 1, 2 or 3, got {dims}"
            )));
        }
        if !m.is_power_of_two() || (dims == 1 && m < 2) {
            return Err(FhtError::InvalidParameter(format!(
                "points per axis must be a power of two, got {m}"
            )));
        }
        Ok(Self { dims, m })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn bits(&self) -> usize {
        self.m.trailing_zeros() as usize
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.m as f64 + 1.0)
    }

    /// Total number of variables `m^dims`.
    pub fn size(&self) -> usize {
        self.m.pow(self.dims as u32)
    }

    /// Maps 1-based grid coordinates to the 1-based linear variable index.
    ///
    /// The binary word of `k - 1` interleaves the MSB-first expansions of
    /// `i_1 - 1, ..., i_dims - 1`, cycling through the axes at each bit.
    pub fn interleave(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims {
            return Err(FhtError::DimensionMismatch {
                expected: self.dims,
                got: coords.len(),
            });
        }
        if let Some(c) = coords.iter().find(|&&c| c == 0 || c > self.m) {
            return Err(FhtError::OutOfRange(format!(
                "grid coordinate {c} outside 1..={}",
                self.m
            )));
        }
        let bits = self.bits();
        let mut word = 0usize;
        for b in (0..bits).rev() {
            for &c in coords {
                word = (word << 1) | (((c - 1) >> b) & 1);
            }
        }
        Ok(word + 1)
    }

    /// Inverse of [`GridSpec::interleave`].
    pub fn deinterleave(&self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.size() {
            return Err(FhtError::OutOfRange(format!(
                "linear index {k} outside 1..={}",
                self.size()
            )));
        }
        let bits = self.bits();
        let word = k - 1;
        let mut coords = vec![0usize; self.dims];
        let mut pos = bits * self.dims;
        for b in (0..bits).rev() {
            for c in coords.iter_mut() {
                pos -= 1;
                *c |= ((word >> pos) & 1) << b;
            }
        }
        Ok(coords.into_iter().map(|c| c + 1).collect())
    }

    /// For each 0-based variable, the 0-based variables adjacent to it on the
    /// lattice. Sites with fewer than `2 dims` neighbors touch the boundary.
    pub fn neighbor_table(&self) -> Vec<Vec<usize>> {
        let coords: Vec<Vec<usize>> = (1..=self.size())
            .map(|k| self.deinterleave(k).expect("k in range"))
            .collect();
        coords
            .iter()
            .map(|c| {
                let mut nbrs = Vec::with_capacity(2 * self.dims);
                for axis in 0..self.dims {
                    for step in [-1i64, 1] {
                        let v = c[axis] as i64 + step;
                        if v >= 1 && v <= self.m as i64 {
                            let mut n = c.clone();
                            n[axis] = v as usize;
                            nbrs.push(self.interleave(&n).expect("neighbor in range") - 1);
                        }
                    }
                }
                nbrs
            })
            .collect()
    }

    /// Lattice (Manhattan) distance from every variable to the nearest member
    /// of `sources`. Unreachable variables get `usize::MAX`.
    pub fn distances_from(&self, neighbors: &[Vec<usize>], sources: &[usize]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; neighbors.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            dist[s] = 0;
            queue.push_back(s);
        }
        while let Some(v) = queue.pop_front() {
            for &w in &neighbors[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}
