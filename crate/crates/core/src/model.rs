//! Functional hierarchical tensor: a binary tree of cores contracted against
//! the univariate basis,
//! `p(x) = sum_i C[i_1..i_d] psi_{i_1}(x_1) ... psi_{i_d}(x_d)`
//! with `C` stored in factored form.
//!
//! Core layouts (row-major):
//! * root: `[r_a, r_b]`
//! * internal: `[r_a, r_b, r_f]`
//! * leaf: `[n, r_f]`, first axis is the 0-based physical basis index
//!
//! `r_a`, `r_b` are the bonds to the left and right child and `r_f` the bond
//! to the parent. All contractions sweep children before parents in
//! descending node id so floating-point results are reproducible.

use serde::{Deserialize, Serialize};

use crate::basis::FourierBasis;
use crate::error::{FhtError, Result};
use crate::topology::{DimensionTree, GridSpec, NodeRole};

/// Entry guard for [`FhtModel::contract_full`].
pub const DENSE_LIMIT: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCore {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorCore {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() || !(2..=3).contains(&shape.len()) {
            return Err(FhtError::ShapeMismatch(format!(
                "core of shape {shape:?} cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FhtError::ShapeMismatch("non-finite core entry".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Size of the last axis (bond to the parent for non-root cores).
    fn last(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// `out[t] = sum_i w[i] G[i, t]` for a leaf core.
    pub(crate) fn leaf_up(&self, w: &[f64]) -> Vec<f64> {
        let r = self.shape[1];
        let mut out = vec![0.0; r];
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let row = &self.data[i * r..(i + 1) * r];
            for (o, g) in out.iter_mut().zip(row) {
                *o += wi * g;
            }
        }
        out
    }

    /// `out[t] = sum_{a,b} ua[a] ub[b] G[a, b, t]` for an internal core.
    pub(crate) fn internal_up(&self, ua: &[f64], ub: &[f64]) -> Vec<f64> {
        let (ra, rb, rf) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = vec![0.0; rf];
        for a in 0..ra {
            for b in 0..rb {
                let w = ua[a] * ub[b];
                let fiber = &self.data[(a * rb + b) * rf..(a * rb + b + 1) * rf];
                for (o, g) in out.iter_mut().zip(fiber) {
                    *o += w * g;
                }
            }
        }
        out
    }

    /// `sum_{a,b} ua[a] G[a, b] ub[b]` for the root core.
    pub(crate) fn root_value(&self, ua: &[f64], ub: &[f64]) -> f64 {
        let rb = self.shape[1];
        ua.iter()
            .enumerate()
            .map(|(a, &x)| {
                let row = &self.data[a * rb..(a + 1) * rb];
                x * row.iter().zip(ub).map(|(g, y)| g * y).sum::<f64>()
            })
            .sum()
    }

    /// Environment of one child: the core contracted with the sibling's
    /// upward vector and the node's own environment (absent at the root).
    pub(crate) fn child_env(&self, env: Option<&[f64]>, sibling: &[f64], left: bool) -> Vec<f64> {
        let (ra, rb) = (self.shape[0], self.shape[1]);
        let rf = if self.shape.len() == 3 { self.shape[2] } else { 1 };
        let mut out = vec![0.0; if left { ra } else { rb }];
        for a in 0..ra {
            for b in 0..rb {
                let base = (a * rb + b) * rf;
                let g = match env {
                    Some(e) => self.data[base..base + rf]
                        .iter()
                        .zip(e)
                        .map(|(g, e)| g * e)
                        .sum::<f64>(),
                    None => self.data[base],
                };
                if left {
                    out[a] += g * sibling[b];
                } else {
                    out[b] += g * sibling[a];
                }
            }
        }
        out
    }

    /// `c[i] = sum_t G[i, t] env[t]` for a leaf core.
    pub(crate) fn leaf_open(&self, env: &[f64]) -> Vec<f64> {
        let r = self.shape[1];
        self.data
            .chunks_exact(r)
            .map(|row| row.iter().zip(env).map(|(g, e)| g * e).sum())
            .collect()
    }
}

/// Provenance recorded with a fitted model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamped_entries: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integral_before_normalization: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FhtModel {
    tree: DimensionTree,
    basis: FourierBasis,
    cores: Vec<TensorCore>,
    pub metadata: ModelMetadata,
}

impl FhtModel {
    /// Assembles a model, checking that every core matches its role and that
    /// bond dimensions agree edge-wise.
    pub fn new(tree: DimensionTree, basis: FourierBasis, cores: Vec<TensorCore>) -> Result<Self> {
        if cores.len() != tree.num_nodes() {
            return Err(FhtError::ShapeMismatch(format!(
                "{} cores for {} tree nodes",
                cores.len(),
                tree.num_nodes()
            )));
        }
        let n = basis.size();
        for (id, core) in cores.iter().enumerate() {
            let expected: Vec<usize> = match tree.role(id) {
                NodeRole::Leaf => vec![n, core.last()],
                role => {
                    let (a, b) = tree.children(id).unwrap();
                    let mut s = vec![cores[a].last(), cores[b].last()];
                    if role == NodeRole::Internal {
                        s.push(core.last());
                    }
                    s
                }
            };
            if core.shape != expected || core.shape.contains(&0) {
                let node = tree.node(id);
                return Err(FhtError::ShapeMismatch(format!(
                    "core at (level {}, block {}) has shape {:?}, expected {:?}",
                    node.level, node.block, core.shape, expected
                )));
            }
        }
        Ok(Self {
            tree,
            basis,
            cores,
            metadata: ModelMetadata::default(),
        })
    }

    /// Model whose cores are filled from `fill`, with bond dimension
    /// `bond(id)` on the edge above each non-root node.
    pub fn from_fn(
        tree: DimensionTree,
        basis: FourierBasis,
        bond: impl Fn(usize) -> usize,
        mut fill: impl FnMut() -> f64,
    ) -> Result<Self> {
        let n = basis.size();
        let cores = (0..tree.num_nodes())
            .map(|id| {
                let shape = match tree.role(id) {
                    NodeRole::Leaf => vec![n, bond(id)],
                    NodeRole::Root => vec![bond(1), bond(2)],
                    NodeRole::Internal => {
                        let (a, b) = tree.children(id).unwrap();
                        vec![bond(a), bond(b), bond(id)]
                    }
                };
                let len = shape.iter().product();
                TensorCore::new(shape, (0..len).map(|_| fill()).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tree, basis, cores)
    }

    /// Rank-1 model `p(x) = prod_j sum_i coeffs[j][i] psi_i(x_j)`.
    pub fn product(tree: DimensionTree, basis: FourierBasis, coeffs: &[Vec<f64>]) -> Result<Self> {
        if coeffs.len() != tree.d() {
            return Err(FhtError::DimensionMismatch {
                expected: tree.d(),
                got: coeffs.len(),
            });
        }
        let n = basis.size();
        let cores = (0..tree.num_nodes())
            .map(|id| match tree.role(id) {
                NodeRole::Leaf => TensorCore::new(vec![n, 1], coeffs[tree.leaf_var(id)].clone()),
                NodeRole::Root => TensorCore::new(vec![1, 1], vec![1.0]),
                NodeRole::Internal => TensorCore::new(vec![1, 1, 1], vec![1.0]),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tree, basis, cores)
    }

    pub fn tree(&self) -> &DimensionTree {
        &self.tree
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.basis
    }

    pub fn cores(&self) -> &[TensorCore] {
        &self.cores
    }

    pub fn core(&self, id: usize) -> &TensorCore {
        &self.cores[id]
    }

    pub fn d(&self) -> usize {
        self.tree.d()
    }

    /// Bond dimension of the edge above each node; `1` at the root.
    pub fn bond_dims(&self) -> Vec<usize> {
        (0..self.cores.len())
            .map(|id| if id == 0 { 1 } else { self.cores[id].last() })
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// Multiplies the represented function by `factor` (root core only).
    pub fn scale(&mut self, factor: f64) {
        self.cores[0].data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Upward vectors of every node given one `n`-vector per leaf variable.
    /// The root entry holds the full contraction as a 1-vector.
    pub(crate) fn upward<'a>(&self, leaf: impl Fn(usize) -> &'a [f64]) -> Vec<Vec<f64>> {
        let mut up: Vec<Vec<f64>> = vec![Vec::new(); self.cores.len()];
        for id in (0..self.cores.len()).rev() {
            up[id] = self.up_at(id, &up, || leaf(self.tree.leaf_var(id)));
        }
        up
    }

    /// Upward vector of a single node from the current vectors of its children.
    pub(crate) fn up_at<'a>(&self, id: usize, up: &[Vec<f64>], leaf: impl FnOnce() -> &'a [f64]) -> Vec<f64> {
        let core = &self.cores[id];
        match self.tree.role(id) {
            NodeRole::Leaf => core.leaf_up(leaf()),
            NodeRole::Internal => {
                let (a, b) = self.tree.children(id).unwrap();
                core.internal_up(&up[a], &up[b])
            }
            NodeRole::Root => {
                let (a, b) = self.tree.children(id).unwrap();
                vec![core.root_value(&up[a], &up[b])]
            }
        }
    }

    /// Environment of `target`: everything outside its subtree contracted
    /// down to a vector over the bond above `target`.
    pub(crate) fn env_path(&self, up: &[Vec<f64>], target: usize) -> Vec<f64> {
        let mut path = self.tree.path_to_root(target);
        path.reverse();
        let mut env: Option<Vec<f64>> = None;
        for w in path.windows(2) {
            let (parent, child) = (w[0], w[1]);
            let left = child % 2 == 1;
            let sibling = self.tree.sibling(child).unwrap();
            env = Some(self.cores[parent].child_env(env.as_deref(), &up[sibling], left));
        }
        env.expect("target is not the root")
    }

    /// `<C, w_1 (x) ... (x) w_d>` for arbitrary leaf vectors.
    pub fn contract_leaves(&self, vectors: &[Vec<f64>]) -> Result<f64> {
        self.check_leaf_vectors(vectors)?;
        Ok(self.upward(|v| &vectors[v])[0][0])
    }

    fn check_leaf_vectors(&self, vectors: &[Vec<f64>]) -> Result<()> {
        if vectors.len() != self.d() {
            return Err(FhtError::DimensionMismatch {
                expected: self.d(),
                got: vectors.len(),
            });
        }
        let n = self.basis.size();
        if let Some(v) = vectors.iter().find(|v| v.len() != n) {
            return Err(FhtError::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Coefficients of the open leaf `var` after contracting all other
    /// leaves with `vectors`: `contract_leaves` with `w_var` substituted
    /// equals `<result, w_var>`.
    pub fn open_leaf(&self, vectors: &[Vec<f64>], var: usize) -> Result<Vec<f64>> {
        self.check_leaf_vectors(vectors)?;
        if var >= self.d() {
            return Err(FhtError::OutOfRange(format!("variable {var}")));
        }
        let up = self.upward(|v| &vectors[v]);
        let leaf = self.tree.leaf_id(var);
        let env = self.env_path(&up, leaf);
        Ok(self.cores[leaf].leaf_open(&env))
    }

    /// Evaluates `p(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d() {
            return Err(FhtError::DimensionMismatch {
                expected: self.d(),
                got: x.len(),
            });
        }
        let psi: Vec<Vec<f64>> = x.iter().map(|&xj| self.basis.eval(xj)).collect();
        Ok(self.upward(|v| &psi[v])[0][0])
    }

    /// Integral of `p` over `[-B, B]^d`.
    pub fn integrate(&self) -> f64 {
        let e = self.basis.integral_vector();
        self.upward(|_| &e)[0][0]
    }

    /// Rescales the root so that the model integrates to one.
    pub fn normalize(&mut self) -> Result<f64> {
        let z = self.integrate();
        if !z.is_finite() || z == 0.0 {
            return Err(FhtError::DegenerateIntegral(z));
        }
        self.scale(1.0 / z);
        Ok(z)
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    /// `<C_A, C_B>`, equal to the `L^2` inner product of the two functions
    /// by orthonormality of the basis.
    pub fn inner_product(&self, other: &FhtModel) -> Result<f64> {
        if self.d() != other.d() {
            return Err(FhtError::DimensionMismatch {
                expected: self.d(),
                got: other.d(),
            });
        }
        if self.basis != other.basis {
            return Err(FhtError::BasisMismatch);
        }
        // overlap[id] is r_A x r_B, row-major
        let mut overlap: Vec<Vec<f64>> = vec![Vec::new(); self.cores.len()];
        for id in (0..self.cores.len()).rev() {
            let (ga, gb) = (&self.cores[id], &other.cores[id]);
            overlap[id] = match self.tree.role(id) {
                NodeRole::Leaf => {
                    let (n, ra, rb) = (ga.shape[0], ga.shape[1], gb.shape[1]);
                    let mut m = vec![0.0; ra * rb];
                    for i in 0..n {
                        for s in 0..ra {
                            let x = ga.data[i * ra + s];
                            for t in 0..rb {
                                m[s * rb + t] += x * gb.data[i * rb + t];
                            }
                        }
                    }
                    m
                }
                role => {
                    let (a, b) = self.tree.children(id).unwrap();
                    let (ma, mb) = (&overlap[a], &overlap[b]);
                    let (ra, rb) = (ga.shape[0], ga.shape[1]);
                    let (sa, sb) = (gb.shape[0], gb.shape[1]);
                    let (rf, sf) = if role == NodeRole::Root {
                        (1, 1)
                    } else {
                        (ga.shape[2], gb.shape[2])
                    };
                    // t1[a', b, f] = sum_a ma[a, a'] GA[a, b, f]
                    let mut t1 = vec![0.0; sa * rb * rf];
                    for al in 0..ra {
                        for ap in 0..sa {
                            let w = ma[al * sa + ap];
                            for bf in 0..rb * rf {
                                t1[ap * rb * rf + bf] += w * ga.data[al * rb * rf + bf];
                            }
                        }
                    }
                    // t2[a', b', f] = sum_b mb[b, b'] t1[a', b, f]
                    let mut t2 = vec![0.0; sa * sb * rf];
                    for ap in 0..sa {
                        for be in 0..rb {
                            for bp in 0..sb {
                                let w = mb[be * sb + bp];
                                for f in 0..rf {
                                    t2[(ap * sb + bp) * rf + f] += w * t1[(ap * rb + be) * rf + f];
                                }
                            }
                        }
                    }
                    // m[f, f'] = sum_{a', b'} t2[a', b', f] GB[a', b', f']
                    let mut m = vec![0.0; rf * sf];
                    for ab in 0..sa * sb {
                        for f in 0..rf {
                            let x = t2[ab * rf + f];
                            for fp in 0..sf {
                                m[f * sf + fp] += x * gb.data[ab * sf + fp];
                            }
                        }
                    }
                    m
                }
            };
        }
        Ok(overlap[0][0])
    }

    /// Materializes the dense coefficient tensor `C` (row-major, `i_1`
    /// slowest). Intended for small test problems.
    pub fn contract_full(&self) -> Result<Vec<f64>> {
        let n = self.basis.size();
        let total = (0..self.d()).try_fold(1usize, |acc, _| acc.checked_mul(n));
        match total {
            Some(t) if t <= DENSE_LIMIT => {}
            Some(t) => return Err(FhtError::TooLarge(t)),
            None => return Err(FhtError::TooLarge(usize::MAX)),
        }
        // dense[id] is (n^|I|) x r_f, row-major
        let mut dense: Vec<Vec<f64>> = vec![Vec::new(); self.cores.len()];
        for id in (0..self.cores.len()).rev() {
            let core = &self.cores[id];
            dense[id] = match self.tree.role(id) {
                NodeRole::Leaf => core.data.clone(),
                role => {
                    let (a, b) = self.tree.children(id).unwrap();
                    let (ra, rb) = (core.shape[0], core.shape[1]);
                    let rf = if role == NodeRole::Root { 1 } else { core.shape[2] };
                    let (da, db) = (&dense[a], &dense[b]);
                    let (na, nb) = (da.len() / ra, db.len() / rb);
                    let mut out = vec![0.0; na * nb * rf];
                    for ia in 0..na {
                        for ib in 0..nb {
                            let dst = &mut out[(ia * nb + ib) * rf..(ia * nb + ib + 1) * rf];
                            for al in 0..ra {
                                let x = da[ia * ra + al];
                                if x == 0.0 {
                                    continue;
                                }
                                for be in 0..rb {
                                    let w = x * db[ib * rb + be];
                                    let fiber = &core.data[(al * rb + be) * rf..][..rf];
                                    for (o, g) in dst.iter_mut().zip(fiber) {
                                        *o += w * g;
                                    }
                                }
                            }
                        }
                    }
                    out
                }
            };
            if let Some((a, b)) = self.tree.children(id) {
                dense[a] = Vec::new();
                dense[b] = Vec::new();
            }
        }
        Ok(std::mem::take(&mut dense[0]))
    }

    /// Marginal density of one or two variables on a tensor grid. For two
    /// variables the result is row-major over `(points[0], points[1])`.
    /// Negative values from basis truncation are returned unchanged.
    pub fn marginal_grid(&self, vars: &[usize], points: &[Vec<f64>]) -> Result<Vec<f64>> {
        if vars.len() != points.len() || !(1..=2).contains(&vars.len()) {
            return Err(FhtError::InvalidParameter(
                "marginals take one or two variables with one point list each".into(),
            ));
        }
        if let Some(v) = vars.iter().find(|&&v| v >= self.d()) {
            return Err(FhtError::OutOfRange(format!("variable {v}")));
        }
        let e = self.basis.integral_vector();
        let mut vectors = vec![e; self.d()];
        if vars.len() == 1 {
            let c = self.open_leaf(&vectors, vars[0])?;
            return Ok(points[0].iter().map(|&x| self.series(&c, x)).collect());
        }
        let (u, v) = (vars[0], vars[1]);
        if u == v {
            return Err(FhtError::InvalidParameter("marginal variables must differ".into()));
        }
        let n = self.basis.size();
        let mut joint = Vec::with_capacity(n * n);
        for i in 0..n {
            let mut unit = vec![0.0; n];
            unit[i] = 1.0;
            vectors[u] = unit;
            joint.extend(self.open_leaf(&vectors, v)?);
        }
        let psi_v: Vec<Vec<f64>> = points[1].iter().map(|&y| self.basis.eval(y)).collect();
        let mut out = Vec::with_capacity(points[0].len() * points[1].len());
        for &x in &points[0] {
            let px = self.basis.eval(x);
            let row: Vec<f64> = (0..n).map(|j| (0..n).map(|i| px[i] * joint[i * n + j]).sum()).collect();
            out.extend(
                psi_v
                    .iter()
                    .map(|py| row.iter().zip(py).map(|(r, p)| r * p).sum::<f64>()),
            );
        }
        Ok(out)
    }

    /// `sum_i c_i psi_i(x)`.
    pub(crate) fn series(&self, c: &[f64], x: f64) -> f64 {
        self.basis.eval(x).iter().zip(c).map(|(p, c)| p * c).sum()
    }
}
