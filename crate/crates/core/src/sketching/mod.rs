//! Hierarchical sketching density estimator.
//!
//! For each tree edge the sketched unfolding `Z` is factored once by SVD;
//! the orthonormal left factor enters the parent's solve and the transposed
//! right factor enters the child's solve. Every core then follows from one
//! small least-squares problem.

mod functions;
mod linalg;
mod moments;

pub use functions::{build_default_sketches, SampleContext, Shortfall, SketchFunction, SketchSet, SketchSide};
pub use linalg::{pinv, solve_core, truncated_factor, EdgeFactor, FactorSide};
pub use moments::{estimate_b, estimate_moments, estimate_z, mean_outer, mean_triple, MomentEstimates};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::FourierBasis;
use crate::error::{FhtError, Result};
use crate::model::{FhtModel, TensorCore};
use crate::topology::{DimensionTree, NodeRole};

fn default_tol_svd() -> f64 {
    1e-8
}

fn default_tol_pinv() -> f64 {
    1e-10
}

fn default_degree() -> usize {
    2
}

fn default_modes() -> Vec<usize> {
    vec![1]
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchConfig {
    /// Target bond dimension `r`.
    #[serde(rename = "r")]
    pub rank: usize,
    /// Sketch list size `r~`; defaults to `2r`.
    #[serde(rename = "r_tilde", default, skip_serializing_if = "Option::is_none")]
    pub oversample: Option<usize>,
    #[serde(default = "default_tol_svd")]
    pub tol_svd: f64,
    #[serde(default = "default_tol_pinv")]
    pub tol_pinv: f64,
    #[serde(default = "default_degree")]
    pub max_monomial_degree: usize,
    #[serde(default = "default_modes")]
    pub coarse_grain_modes: Vec<usize>,
    #[serde(default = "default_true")]
    pub include_squares: bool,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            rank: 6,
            oversample: None,
            tol_svd: default_tol_svd(),
            tol_pinv: default_tol_pinv(),
            max_monomial_degree: default_degree(),
            coarse_grain_modes: default_modes(),
            include_squares: true,
        }
    }
}

impl SketchConfig {
    pub fn oversample(&self) -> usize {
        self.oversample.unwrap_or(2 * self.rank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(FhtError::InvalidParameter("sketch rank must be positive".into()));
        }
        if self.oversample() < self.rank {
            return Err(FhtError::InvalidParameter(format!(
                "r_tilde {} is below r {}",
                self.oversample(),
                self.rank
            )));
        }
        for (name, tol) in [("tol_svd", self.tol_svd), ("tol_pinv", self.tol_pinv)] {
            if !(tol.is_finite() && (0.0..1.0).contains(&tol)) {
                return Err(FhtError::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {tol}"
                )));
            }
        }
        Ok(())
    }

    /// Balanced tree with this configuration's budgets on every edge.
    pub fn tree(&self, d: usize) -> Result<DimensionTree> {
        self.validate()?;
        DimensionTree::balanced(d, self.rank, self.oversample())
    }
}

/// Result of one sketching run.
#[derive(Clone, Debug)]
pub struct SketchFit {
    /// Unnormalized model; its tree carries the effective ranks.
    pub model: FhtModel,
    /// Factor of the edge above each node (absent at the root).
    pub factors: Vec<Option<EdgeFactor>>,
    pub shortfalls: Vec<Shortfall>,
    pub clamped_entries: u64,
    pub sample_count: usize,
}

impl SketchFit {
    pub fn effective_ranks(&self) -> Vec<usize> {
        self.model.bond_dims()
    }
}

/// Factors every edge and solves every core from given moments.
pub fn fit_from_moments(
    tree: &DimensionTree,
    basis: &FourierBasis,
    moments: &MomentEstimates,
    tol_svd: f64,
    tol_pinv: f64,
) -> Result<(FhtModel, Vec<Option<EdgeFactor>>)> {
    let count = tree.num_nodes();
    if moments.z.len() != count || moments.b.len() != count {
        return Err(FhtError::ShapeMismatch("moments do not match the tree".into()));
    }
    let label = |id: usize| {
        let node = tree.node(id);
        (node.level, node.block)
    };
    let factors: Vec<Option<EdgeFactor>> = (0..count)
        .into_par_iter()
        .map(|id| {
            if id == 0 {
                return Ok(None);
            }
            let z = moments.z[id]
                .as_ref()
                .ok_or_else(|| FhtError::ShapeMismatch(format!("missing Z for node {id}")))?;
            let rank = tree.budget(id).map_or(1, |b| b.rank);
            match EdgeFactor::new(z, rank, tol_svd) {
                Err(FhtError::ZeroMatrix) => Err(FhtError::DegenerateNode(label(id))),
                other => other.map(Some),
            }
        })
        .collect::<Result<_>>()?;

    let cores: Vec<TensorCore> = (0..count)
        .into_par_iter()
        .map(|id| {
            let rhs = &moments.b[id];
            let f_t = factors[id].as_ref().map(|f| f.right.transpose());
            let children = tree.children(id).map(|(a, b)| {
                (
                    &factors[a].as_ref().expect("child edge factored").left,
                    &factors[b].as_ref().expect("child edge factored").left,
                )
            });
            let solved = match tree.role(id) {
                NodeRole::Root => {
                    let (a, b) = children.expect("root has children");
                    solve_core(Some(a), Some(b), None, rhs, tol_pinv)
                }
                NodeRole::Leaf => solve_core(None, None, f_t.as_ref(), rhs, tol_pinv),
                NodeRole::Internal => {
                    let (a, b) = children.expect("internal node has children");
                    solve_core(Some(a), Some(b), f_t.as_ref(), rhs, tol_pinv)
                }
            };
            match solved {
                Err(FhtError::ZeroMatrix) => Err(FhtError::ZeroRank(label(id))),
                other => other,
            }
        })
        .collect::<Result<_>>()?;

    let mut tree = tree.clone();
    for (id, f) in factors.iter().enumerate() {
        if let Some(f) = f {
            tree.set_effective_rank(id, f.rank());
        }
    }
    let model = FhtModel::new(tree, *basis, cores)?;
    Ok((model, factors))
}

/// Fits an unnormalized model to an `N x d` row-major snapshot.
pub fn sketch_density(
    samples: &[f64],
    tree: &DimensionTree,
    basis: &FourierBasis,
    sketches: &SketchSet,
    config: &SketchConfig,
) -> Result<SketchFit> {
    config.validate()?;
    sketches.check_covers(tree)?;
    let ctx = SampleContext::new(samples, tree.d(), basis, &config.coarse_grain_modes)?;
    let moments = estimate_moments(&ctx, tree, sketches)?;
    let (model, factors) = fit_from_moments(tree, basis, &moments, config.tol_svd, config.tol_pinv)?;
    Ok(SketchFit {
        model,
        factors,
        shortfalls: sketches.shortfalls.clone(),
        clamped_entries: ctx.clamped_entries(),
        sample_count: ctx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::GridSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg: SketchConfig = serde_json::from_str(r#"{"r": 4}"#).unwrap();
        assert_eq!(cfg.oversample(), 8);
        assert_eq!(cfg.tol_svd, 1e-8);
        assert_eq!(cfg.tol_pinv, 1e-10);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: SketchConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<SketchConfig>(r#"{"r": 4, "bogus": 1}"#).is_err());
        let bad = SketchConfig {
            oversample: Some(2),
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn factors_are_shared_across_edges() {
        let d = 8;
        let basis = FourierBasis::new(3.0, 3).unwrap();
        let cfg = SketchConfig {
            rank: 2,
            ..SketchConfig::default()
        };
        let tree = cfg.tree(d).unwrap();
        let grid = GridSpec::new(1, d).unwrap();
        let sketches = build_default_sketches(&tree, &basis, &grid, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 0.7).unwrap();
        let x: Vec<f64> = (0..d * 3000).map(|_| normal.sample(&mut rng)).collect();
        let fit = sketch_density(&x, &tree, &basis, &sketches, &cfg).unwrap();
        assert!(fit.factors[0].is_none());
        for id in 1..tree.num_nodes() {
            let f = fit.factors[id].as_ref().unwrap();
            assert_eq!(fit.model.tree().node(id).effective_rank, Some(f.rank()));
            let parent = tree.parent(id).unwrap();
            let core = fit.model.core(parent).shape();
            let pos = if tree.children(parent).unwrap().0 == id { 0 } else { 1 };
            assert_eq!(core[pos], f.rank());
            let own = fit.model.core(id).shape();
            assert_eq!(*own.last().unwrap(), f.rank());
        }
        assert!(fit.model.integrate().is_finite());
    }

    #[test]
    fn zero_moments_name_the_node() {
        let tree = DimensionTree::balanced(2, 1, 1).unwrap();
        let basis = FourierBasis::new(1.0, 1).unwrap();
        let moments = MomentEstimates {
            z: vec![
                None,
                Some(nalgebra::DMatrix::zeros(1, 1)),
                Some(nalgebra::DMatrix::from_element(1, 1, 1.0)),
            ],
            b: vec![
                TensorCore::new(vec![1, 1], vec![1.0]).unwrap(),
                TensorCore::new(vec![3, 1], vec![1.0; 3]).unwrap(),
                TensorCore::new(vec![3, 1], vec![1.0; 3]).unwrap(),
            ],
        };
        assert!(matches!(
            fit_from_moments(&tree, &basis, &moments, 1e-8, 1e-10),
            Err(FhtError::DegenerateNode((1, 1)))
        ));
    }

    #[test]
    fn clamped_count_matches_recount() {
        let d = 4;
        let basis = FourierBasis::new(1.0, 2).unwrap();
        let cfg = SketchConfig {
            rank: 2,
            ..SketchConfig::default()
        };
        let tree = cfg.tree(d).unwrap();
        let grid = GridSpec::new(1, d).unwrap();
        let sketches = build_default_sketches(&tree, &basis, &grid, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 0.8).unwrap();
        let x: Vec<f64> = (0..d * 500).map(|_| normal.sample(&mut rng)).collect();
        let recount = x.iter().filter(|v| v.abs() > 1.0).count() as u64;
        let fit = sketch_density(&x, &tree, &basis, &sketches, &cfg).unwrap();
        assert_eq!(fit.clamped_entries, recount);
        assert!(recount > 0);
    }
}
