//! Sketch functions and their batched evaluation on sample snapshots.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::FourierBasis;
use crate::error::{FhtError, NodeLabel, Result};
use crate::topology::{DimensionTree, GridSpec};

use super::SketchConfig;

/// A cheap function of a block of variables. Variable indices are 0-based
/// and basis indices follow [`FourierBasis`] ordering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SketchFunction {
    Constant,
    /// `prod (var, i) psi_i(x_var)`.
    Monomial {
        factors: Vec<(usize, usize)>,
    },
    /// `((1/|h|) sum_{j in h} psi_mode(x_j))^power`, with the cluster `h`
    /// given as half-open variable ranges.
    CoarseGrain {
        cluster: Vec<(usize, usize)>,
        mode: usize,
        power: u32,
    },
}

impl SketchFunction {
    /// Evaluates at a full `d`-vector (no clamping).
    pub fn eval(&self, basis: &FourierBasis, x: &[f64]) -> f64 {
        match self {
            SketchFunction::Constant => 1.0,
            SketchFunction::Monomial { factors } => factors.iter().map(|&(v, i)| basis.eval_one(i, x[v])).product(),
            SketchFunction::CoarseGrain { cluster, mode, power } => {
                let len = cluster_len(cluster) as f64;
                let sum: f64 = cluster
                    .iter()
                    .flat_map(|&(s, e)| s..e)
                    .map(|j| basis.eval_one(*mode, x[j]))
                    .sum();
                (sum / len).powi(*power as i32)
            }
        }
    }

    /// Variables the function depends on.
    pub fn support(&self) -> Vec<usize> {
        match self {
            SketchFunction::Constant => Vec::new(),
            SketchFunction::Monomial { factors } => factors.iter().map(|f| f.0).collect(),
            SketchFunction::CoarseGrain { cluster, .. } => cluster.iter().flat_map(|&(s, e)| s..e).collect(),
        }
    }
}

fn cluster_len(cluster: &[(usize, usize)]) -> usize {
    cluster.iter().map(|(s, e)| e - s).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchSide {
    /// Functions of the node's own block `I`.
    Own,
    /// Functions of the complement `[d] - I`.
    Complement,
}

/// A list that could not be filled to the requested oversampling size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub node: NodeLabel,
    pub side: SketchSide,
    pub requested: usize,
    pub available: usize,
}

/// Per-node sketch lists. Index by node id; the root has empty lists.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchSet {
    pub own: Vec<Vec<SketchFunction>>,
    pub complement: Vec<Vec<SketchFunction>>,
    pub shortfalls: Vec<Shortfall>,
}

impl SketchSet {
    pub fn list(&self, id: usize, side: SketchSide) -> &[SketchFunction] {
        match side {
            SketchSide::Own => &self.own[id],
            SketchSide::Complement => &self.complement[id],
        }
    }

    /// Checks that every non-root node has lists covering its rank budget.
    pub fn check_covers(&self, tree: &DimensionTree) -> Result<()> {
        if self.own.len() != tree.num_nodes() || self.complement.len() != tree.num_nodes() {
            return Err(FhtError::ShapeMismatch("sketch set does not match the tree".into()));
        }
        for id in 1..tree.num_nodes() {
            let rank = tree.budget(id).map_or(1, |b| b.rank);
            let available = self.own[id].len().min(self.complement[id].len());
            if available < rank {
                let node = tree.node(id);
                return Err(FhtError::SketchShortfall {
                    node: (node.level, node.block),
                    available,
                    rank,
                });
            }
        }
        Ok(())
    }
}

fn to_ranges(vars: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &v in vars {
        match out.last_mut() {
            Some(last) if last.1 == v => last.1 = v + 1,
            _ => out.push((v, v + 1)),
        }
    }
    out
}

fn complement_of(d: usize, r: Range<usize>) -> Vec<usize> {
    (0..r.start).chain(r.end..d).collect()
}

/// Deterministic default sketch lists.
///
/// For a variable block `S` with a distinguished sub-block `h` the candidate
/// order is: the constant; for each configured mode the coarse-grained
/// averages over `h` and `S - h`, followed by their squares when enabled;
/// then single-variable monomials `psi_i(x_j)` of degree `1..=D`, taking the
/// variables of `S` in order of lattice distance to the other side of the
/// cut. The list is truncated to the node's oversampling size.
///
/// For a node's own block, `h` is its second child block; for the complement
/// `h` is the sibling block. Singleton blocks use monomials up to the degree
/// needed to fill the list (capped at the basis degree), and skip
/// coarse-grained functions that would duplicate a monomial.
pub fn build_default_sketches(
    tree: &DimensionTree,
    basis: &FourierBasis,
    grid: &GridSpec,
    config: &SketchConfig,
) -> Result<SketchSet> {
    let d = tree.d();
    if grid.size() != d {
        return Err(FhtError::DimensionMismatch {
            expected: d,
            got: grid.size(),
        });
    }
    if let Some(m) = config.coarse_grain_modes.iter().find(|&&m| m == 0 || m >= basis.size()) {
        return Err(FhtError::InvalidParameter(format!(
            "coarse-grain mode {m} outside 1..{}",
            basis.size()
        )));
    }
    let neighbors = grid.neighbor_table();
    let mut own = vec![Vec::new(); tree.num_nodes()];
    let mut complement = vec![Vec::new(); tree.num_nodes()];
    let mut shortfalls = Vec::new();

    for id in 1..tree.num_nodes() {
        let node = tree.node(id);
        let budget = tree.budget(id).expect("non-root node has a budget");
        let block: Vec<usize> = node.range().collect();
        let rest = complement_of(d, node.range());
        let dist_block = grid.distances_from(&neighbors, &rest);
        let dist_rest = grid.distances_from(&neighbors, &block);

        let own_h: Option<Vec<usize>> = tree.children(id).map(|(_, b)| tree.node(b).range().collect());
        let sib: Vec<usize> = tree.node(tree.sibling(id).unwrap()).range().collect();

        for (side, set, h, dist) in [
            (SketchSide::Own, &block, own_h, &dist_block),
            (SketchSide::Complement, &rest, Some(sib), &dist_rest),
        ] {
            let candidates = candidate_list(set, h.as_deref(), dist, basis, config, budget.oversample);
            let requested = budget.oversample;
            if candidates.len() < budget.rank {
                return Err(FhtError::SketchShortfall {
                    node: (node.level, node.block),
                    available: candidates.len(),
                    rank: budget.rank,
                });
            }
            if candidates.len() < requested {
                shortfalls.push(Shortfall {
                    node: (node.level, node.block),
                    side,
                    requested,
                    available: candidates.len(),
                });
            }
            let list: Vec<SketchFunction> = candidates.into_iter().take(requested).collect();
            match side {
                SketchSide::Own => own[id] = list,
                SketchSide::Complement => complement[id] = list,
            }
        }
    }
    Ok(SketchSet {
        own,
        complement,
        shortfalls,
    })
}

fn candidate_list(
    set: &[usize],
    h: Option<&[usize]>,
    dist: &[usize],
    basis: &FourierBasis,
    config: &SketchConfig,
    oversample: usize,
) -> Vec<SketchFunction> {
    let mut out = vec![SketchFunction::Constant];
    if let Some(h) = h {
        let rest: Vec<usize> = set.iter().copied().filter(|v| !h.contains(v)).collect();
        let clusters: Vec<&[usize]> = [h, rest.as_slice()].into_iter().filter(|c| !c.is_empty()).collect();
        for &mode in &config.coarse_grain_modes {
            let powers: &[u32] = if config.include_squares { &[1, 2] } else { &[1] };
            for &power in powers {
                for c in &clusters {
                    if c.len() == 1 && power == 1 {
                        continue;
                    }
                    out.push(SketchFunction::CoarseGrain {
                        cluster: to_ranges(c),
                        mode,
                        power,
                    });
                }
            }
        }
    }
    let max_degree = if set.len() == 1 {
        config.max_monomial_degree.max(oversample.saturating_sub(1).div_ceil(2))
    } else {
        config.max_monomial_degree
    }
    .min(basis.degree);
    let mut vars = set.to_vec();
    vars.sort_by_key(|&v| (dist[v], v));
    for v in vars {
        for i in 1..=2 * max_degree {
            out.push(SketchFunction::Monomial { factors: vec![(v, i)] });
        }
    }
    out
}

/// A snapshot clamped into `[-B, B]^d`, with cached per-sample prefix sums
/// of the coarse-graining modes along the variable index.
pub struct SampleContext {
    basis: FourierBasis,
    n: usize,
    d: usize,
    data: Vec<f64>,
    clamped: u64,
    prefix: BTreeMap<usize, Vec<f64>>,
}

impl SampleContext {
    /// Entries outside `[-B, B]` are clamped to the nearest bound and counted.
    pub fn new(samples: &[f64], d: usize, basis: &FourierBasis, modes: &[usize]) -> Result<Self> {
        if d == 0 || !samples.len().is_multiple_of(d) {
            return Err(FhtError::ShapeMismatch(format!(
                "{} values is not a whole number of {d}-vectors",
                samples.len()
            )));
        }
        let n = samples.len() / d;
        if n == 0 {
            return Err(FhtError::EmptySamples);
        }
        let mut clamped = 0u64;
        let data: Vec<f64> = samples
            .iter()
            .map(|&x| {
                if x.abs() > basis.half_width {
                    clamped += 1;
                }
                basis.clamp(x)
            })
            .collect();
        let mut prefix = BTreeMap::new();
        for &mode in modes {
            if mode >= basis.size() {
                continue;
            }
            let mut table = vec![0.0; n * (d + 1)];
            table
                .par_chunks_mut(d + 1)
                .zip(data.par_chunks(d))
                .for_each(|(row, x)| {
                    for j in 0..d {
                        row[j + 1] = row[j] + basis.eval_one(mode, x[j]);
                    }
                });
            prefix.insert(mode, table);
        }
        Ok(Self {
            basis: *basis,
            n,
            d,
            data,
            clamped,
            prefix,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn clamped_entries(&self) -> u64 {
        self.clamped
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.data[s * self.d..(s + 1) * self.d]
    }

    fn column(&self, f: &SketchFunction) -> Vec<f64> {
        match f {
            SketchFunction::CoarseGrain { cluster, mode, power } if self.prefix.contains_key(mode) => {
                let table = &self.prefix[mode];
                let len = cluster_len(cluster) as f64;
                (0..self.n)
                    .map(|s| {
                        let row = &table[s * (self.d + 1)..(s + 1) * (self.d + 1)];
                        let sum: f64 = cluster.iter().map(|&(a, b)| row[b] - row[a]).sum();
                        (sum / len).powi(*power as i32)
                    })
                    .collect()
            }
            _ => (0..self.n).map(|s| f.eval(&self.basis, self.sample(s))).collect(),
        }
    }

    /// `N x len(list)` matrix of sketch values.
    pub fn eval_list(&self, list: &[SketchFunction]) -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = list.par_iter().map(|f| self.column(f)).collect();
        let mut m = DMatrix::zeros(self.n, list.len());
        for (j, col) in cols.into_iter().enumerate() {
            m.column_mut(j).copy_from_slice(&col);
        }
        m
    }

    /// `N x n` matrix of basis values of one variable.
    pub fn basis_matrix(&self, var: usize) -> DMatrix<f64> {
        let n = self.basis.size();
        let mut m = DMatrix::zeros(self.n, n);
        let mut buf = vec![0.0; n];
        for s in 0..self.n {
            self.basis.eval_into(self.data[s * self.d + var], &mut buf);
            for (i, v) in buf.iter().enumerate() {
                m[(s, i)] = *v;
            }
        }
        m
    }
}

#[cfg(test)]
fn check_sides(tree: &DimensionTree, set: &SketchSet) -> bool {
    (1..tree.num_nodes()).all(|id| {
        let r = tree.node(id).range();
        set.own[id].iter().all(|f| f.support().iter().all(|v| r.contains(v)))
            && set.complement[id]
                .iter()
                .all(|f| f.support().iter().all(|v| !r.contains(v)))
    })
}
