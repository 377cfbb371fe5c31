//! Sample-average estimates of the sketched moment matrices and tensors.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::Result;
use crate::model::TensorCore;
use crate::topology::{DimensionTree, NodeRole};

use super::functions::{SampleContext, SketchFunction, SketchSet};
use super::linalg::row_major;

const CHUNK: usize = 1024;

/// Per-node moments: `z[id]` is `Z` for the edge above `id` (absent at the
/// root) and `b[id]` is the role-dependent right-hand side.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimates {
    pub z: Vec<Option<DMatrix<f64>>>,
    pub b: Vec<TensorCore>,
}

/// `S_a^T S_b / N` for two evaluated sketch matrices.
pub fn mean_outer(sa: &DMatrix<f64>, sb: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sa.nrows() as f64;
    (sa.transpose() * sb) / n
}

/// `T[mu, nu, zeta] = (1/N) sum_s S_a[s, mu] S_b[s, nu] S_f[s, zeta]`,
/// row-major.
pub fn mean_triple(sa: &DMatrix<f64>, sb: &DMatrix<f64>, sf: &DMatrix<f64>) -> Vec<f64> {
    let (n, ra, rb) = (sa.nrows(), sa.ncols(), sb.ncols());
    let mut acc = DMatrix::<f64>::zeros(ra * rb, sf.ncols());
    let mut start = 0;
    while start < n {
        let len = CHUNK.min(n - start);
        let kr = DMatrix::from_fn(len, ra * rb, |s, c| sa[(start + s, c / rb)] * sb[(start + s, c % rb)]);
        acc += kr.transpose() * sf.rows(start, len);
        start += len;
    }
    acc /= n as f64;
    row_major(&acc)
}

/// `Z(mu, psi) = (1/N) sum_i s_a^mu(y_i) s_abar^psi(y_i)`.
pub fn estimate_z(ctx: &SampleContext, own: &[SketchFunction], comp: &[SketchFunction]) -> DMatrix<f64> {
    mean_outer(&ctx.eval_list(own), &ctx.eval_list(comp))
}

/// Right-hand side for node `id`: `E[s_a s_b]` at the root,
/// `E[psi_j(x_k) s_f]` at a leaf and `E[s_a s_b s_f]` otherwise.
pub fn estimate_b(ctx: &SampleContext, tree: &DimensionTree, sketches: &SketchSet, id: usize) -> Result<TensorCore> {
    match tree.role(id) {
        NodeRole::Root => {
            let (a, b) = tree.children(id).expect("root has children");
            let m = mean_outer(&ctx.eval_list(&sketches.own[a]), &ctx.eval_list(&sketches.own[b]));
            TensorCore::new(vec![m.nrows(), m.ncols()], row_major(&m))
        }
        NodeRole::Leaf => {
            let psi = ctx.basis_matrix(tree.leaf_var(id));
            let m = mean_outer(&psi, &ctx.eval_list(&sketches.complement[id]));
            TensorCore::new(vec![m.nrows(), m.ncols()], row_major(&m))
        }
        NodeRole::Internal => {
            let (a, b) = tree.children(id).expect("internal node has children");
            let sa = ctx.eval_list(&sketches.own[a]);
            let sb = ctx.eval_list(&sketches.own[b]);
            let sf = ctx.eval_list(&sketches.complement[id]);
            let data = mean_triple(&sa, &sb, &sf);
            TensorCore::new(vec![sa.ncols(), sb.ncols(), sf.ncols()], data)
        }
    }
}

/// Estimates every `Z` and `B`, one task per node.
pub fn estimate_moments(ctx: &SampleContext, tree: &DimensionTree, sketches: &SketchSet) -> Result<MomentEstimates> {
    let per_node: Vec<Result<(Option<DMatrix<f64>>, TensorCore)>> = (0..tree.num_nodes())
        .into_par_iter()
        .map(|id| {
            let z = (id != 0).then(|| estimate_z(ctx, &sketches.own[id], &sketches.complement[id]));
            Ok((z, estimate_b(ctx, tree, sketches, id)?))
        })
        .collect();
    let mut z = Vec::with_capacity(per_node.len());
    let mut b = Vec::with_capacity(per_node.len());
    for item in per_node {
        let (zi, bi) = item?;
        z.push(zi);
        b.push(bi);
    }
    Ok(MomentEstimates { z, b })
}
