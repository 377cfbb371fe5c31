//! Gauge-fixing factorizations and the small per-node linear solves.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FhtError, Result};
use crate::model::TensorCore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSide {
    Left,
    Right,
}

/// SVD with singular values in non-increasing order.
fn sorted_svd(z: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = z.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .total_cmp(&svd.singular_values[i])
            .then(i.cmp(&j))
    });
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt = DMatrix::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    (u, sigma, vt)
}

fn effective_rank(sigma: &[f64], rank: usize, tol: f64) -> usize {
    let floor = tol * sigma[0];
    sigma.iter().take(rank).take_while(|&&s| s >= floor && s > 0.0).count()
}

/// Rank-truncated SVD factor of `z`: `U[:, :r_eff]` on the left, or
/// `(Sigma V^T)[:r_eff, :]` on the right, where
/// `r_eff = min(rank, #{sigma_i >= tol * sigma_1})`.
pub fn truncated_factor(z: &DMatrix<f64>, rank: usize, side: FactorSide, tol: f64) -> Result<DMatrix<f64>> {
    let f = EdgeFactor::new(z, rank, tol)?;
    Ok(match side {
        FactorSide::Left => f.left,
        FactorSide::Right => f.right,
    })
}

/// Both factors of one tree edge, computed from a single SVD so the two
/// incident node solves share one gauge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFactor {
    /// `r~_own x r_eff`, orthonormal columns.
    pub left: DMatrix<f64>,
    /// `r_eff x r~_complement`.
    pub right: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl EdgeFactor {
    pub fn new(z: &DMatrix<f64>, rank: usize, tol: f64) -> Result<Self> {
        if z.is_empty() || rank == 0 {
            return Err(FhtError::InvalidParameter(
                "factorization needs a non-empty matrix and positive rank".into(),
            ));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(FhtError::InvalidParameter("non-finite sketch matrix".into()));
        }
        let (u, sigma, vt) = sorted_svd(z);
        if sigma[0] == 0.0 {
            return Err(FhtError::ZeroMatrix);
        }
        let r = effective_rank(&sigma, rank, tol);
        let left = u.columns(0, r).into_owned();
        let right = DMatrix::from_fn(r, vt.ncols(), |i, j| sigma[i] * vt[(i, j)]);
        Ok(Self {
            left,
            right,
            singular_values: sigma,
        })
    }

    pub fn rank(&self) -> usize {
        self.left.ncols()
    }
}

/// Moore-Penrose pseudo-inverse dropping singular values below
/// `tol * sigma_1`. Errors when nothing survives.
pub fn pinv(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if a.is_empty() {
        return Err(FhtError::ZeroMatrix);
    }
    let (u, sigma, vt) = sorted_svd(a);
    if sigma[0] == 0.0 {
        return Err(FhtError::ZeroMatrix);
    }
    let r = sigma.iter().take_while(|&&s| s >= tol * sigma[0]).count();
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for k in 0..r {
        let inv = 1.0 / sigma[k];
        for i in 0..a.ncols() {
            let vik = vt[(k, i)] * inv;
            for j in 0..a.nrows() {
                out[(i, j)] += vik * u[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Applies `p` along one axis of a row-major 3-tensor: the axis of length
/// `p.ncols()` becomes length `p.nrows()`.
fn mode_product(data: &[f64], shape: [usize; 3], axis: usize, p: &DMatrix<f64>) -> (Vec<f64>, [usize; 3]) {
    debug_assert_eq!(shape[axis], p.ncols());
    let mut out_shape = shape;
    out_shape[axis] = p.nrows();
    let mut out = vec![0.0; out_shape.iter().product()];
    let idx = |s: [usize; 3], i: usize, j: usize, k: usize| (i * s[1] + j) * s[2] + k;
    for i in 0..out_shape[0] {
        for j in 0..out_shape[1] {
            for k in 0..out_shape[2] {
                let mut acc = 0.0;
                for t in 0..shape[axis] {
                    let (a, b, c) = match axis {
                        0 => (t, j, k),
                        1 => (i, t, k),
                        _ => (i, j, t),
                    };
                    let row = [i, j, k][axis];
                    acc += p[(row, t)] * data[idx(shape, a, b, c)];
                }
                out[idx(out_shape, i, j, k)] = acc;
            }
        }
    }
    (out, out_shape)
}

/// Solves `(A_a (x) A_b (x) A_f) G = B` in the least-squares sense for the
/// factors that are present: `(a, b)` at the root, `f` alone at a leaf and
/// all three at internal nodes. Each factor maps core indices to sketch
/// indices, so `A_a` is `r~_a x r_a`.
pub fn solve_core(
    a: Option<&DMatrix<f64>>,
    b: Option<&DMatrix<f64>>,
    f: Option<&DMatrix<f64>>,
    rhs: &TensorCore,
    tol: f64,
) -> Result<TensorCore> {
    let shape = rhs.shape();
    let check = |m: &DMatrix<f64>, len: usize, what: &str| -> Result<()> {
        if m.ncols() == 0 {
            return Err(FhtError::ZeroMatrix);
        }
        if m.nrows() != len {
            return Err(FhtError::ShapeMismatch(format!(
                "factor {what} has {} rows, right-hand side axis has {len}",
                m.nrows()
            )));
        }
        Ok(())
    };
    match (a, b, f) {
        (Some(a), Some(b), None) if shape.len() == 2 => {
            check(a, shape[0], "a")?;
            check(b, shape[1], "b")?;
            let bm = DMatrix::from_row_slice(shape[0], shape[1], rhs.data());
            let g = pinv(a, tol)? * bm * pinv(b, tol)?.transpose();
            TensorCore::new(vec![g.nrows(), g.ncols()], row_major(&g))
        }
        (None, None, Some(f)) if shape.len() == 2 => {
            check(f, shape[1], "f")?;
            let bm = DMatrix::from_row_slice(shape[0], shape[1], rhs.data());
            let g = bm * pinv(f, tol)?.transpose();
            TensorCore::new(vec![g.nrows(), g.ncols()], row_major(&g))
        }
        (Some(a), Some(b), Some(f)) if shape.len() == 3 => {
            check(a, shape[0], "a")?;
            check(b, shape[1], "b")?;
            check(f, shape[2], "f")?;
            let s = [shape[0], shape[1], shape[2]];
            let (t, s) = mode_product(rhs.data(), s, 0, &pinv(a, tol)?);
            let (t, s) = mode_product(&t, s, 1, &pinv(b, tol)?);
            let (t, s) = mode_product(&t, s, 2, &pinv(f, tol)?);
            TensorCore::new(s.to_vec(), t)
        }
        _ => Err(FhtError::ShapeMismatch(
            "factor set does not match any node role".into(),
        )),
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}
