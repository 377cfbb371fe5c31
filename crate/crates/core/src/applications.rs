//! Uses of a fitted model: observables, correlation maps, sampling and the
//! multi-snapshot Fokker-Planck solve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::FourierBasis;
use crate::dynamics::{simulate, Drift, SdeConfig};
use crate::error::{FhtError, Result};
use crate::model::FhtModel;
use crate::sketching::{build_default_sketches, sketch_density, SketchConfig, SketchSet};
use crate::topology::{DimensionTree, GridSpec};

/// Quantity whose expectation under a model is requested. Variables are
/// 0-based.
#[derive(Clone, Debug)]
pub enum Observable {
    /// General observable given as a model on the same basis.
    Model(Box<FhtModel>),
    Mean(usize),
    Second(usize),
    Cross(usize, usize),
}

/// `<O, p>` by a single tree contraction.
pub fn estimate_observable(model: &FhtModel, obs: &Observable) -> Result<f64> {
    let d = model.d();
    let check = |v: usize| {
        if v >= d {
            Err(FhtError::OutOfRange(format!("variable {v} for d = {d}")))
        } else {
            Ok(())
        }
    };
    let basis = model.basis();
    let (m1, m2) = basis.moment_vectors();
    let mut vectors = vec![basis.integral_vector(); d];
    match obs {
        Observable::Model(o) => return model.inner_product(o),
        Observable::Mean(u) => {
            check(*u)?;
            vectors[*u] = m1;
        }
        Observable::Second(u) => {
            check(*u)?;
            vectors[*u] = m2;
        }
        Observable::Cross(u, v) => {
            check(*u)?;
            check(*v)?;
            if u == v {
                vectors[*u] = m2;
            } else {
                vectors[*u] = m1.clone();
                vectors[*v] = m1;
            }
        }
    }
    model.contract_leaves(&vectors)
}

/// Mean and variance of every variable.
pub fn moments(model: &FhtModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = model.d();
    let pairs: Vec<Result<(f64, f64)>> = (0..d)
        .into_par_iter()
        .map(|u| {
            let mean = estimate_observable(model, &Observable::Mean(u))?;
            let second = estimate_observable(model, &Observable::Second(u))?;
            Ok((mean, second - mean * mean))
        })
        .collect();
    let mut means = Vec::with_capacity(d);
    let mut vars = Vec::with_capacity(d);
    for p in pairs {
        let (m, v) = p?;
        means.push(m);
        vars.push(v);
    }
    Ok((means, vars))
}

/// Correlations with one anchor site, laid out row-major over grid
/// coordinates (first coordinate slowest).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationMap {
    pub grid: GridSpec,
    pub anchor: Vec<usize>,
    /// `NaN` where the variance vanishes.
    pub values: Vec<f64>,
    /// Row-major positions of undefined entries.
    pub undefined: Vec<usize>,
}

impl CorrelationMap {
    /// Value at 1-based grid coordinates.
    pub fn at(&self, coords: &[usize]) -> f64 {
        let m = self.grid.points_per_axis();
        let pos = coords.iter().fold(0, |acc, &c| acc * m + (c - 1));
        self.values[pos]
    }
}

/// 1-based grid coordinates in row-major order (first coordinate slowest).
pub fn grid_coordinates(grid: &GridSpec) -> Vec<Vec<usize>> {
    let m = grid.points_per_axis();
    (0..grid.size())
        .map(|pos| {
            let mut c = vec![0; grid.dims()];
            let mut rest = pos;
            for slot in c.iter_mut().rev() {
                *slot = rest % m + 1;
                rest /= m;
            }
            c
        })
        .collect()
}

/// `f(v) = Cov[x_anchor, x_v] / (sigma_anchor sigma_v)` over the lattice.
pub fn two_point_correlation(model: &FhtModel, grid: &GridSpec, anchor: &[usize]) -> Result<CorrelationMap> {
    if grid.size() != model.d() {
        return Err(FhtError::DimensionMismatch {
            expected: model.d(),
            got: grid.size(),
        });
    }
    let a = grid.interleave(anchor)? - 1;
    let (means, vars) = moments(model)?;
    if !(vars[a] > 0.0) {
        return Err(FhtError::ZeroVariance(a));
    }
    let coords = grid_coordinates(grid);
    let values: Vec<Result<f64>> = coords
        .par_iter()
        .map(|c| {
            let v = grid.interleave(c)? - 1;
            if v == a {
                return Ok(1.0);
            }
            if !(vars[v] > 0.0) {
                return Ok(f64::NAN);
            }
            let cross = estimate_observable(model, &Observable::Cross(a, v))?;
            Ok((cross - means[a] * means[v]) / (vars[a] * vars[v]).sqrt())
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    let undefined = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_nan())
        .map(|(i, _)| i)
        .collect();
    Ok(CorrelationMap {
        grid: *grid,
        anchor: anchor.to_vec(),
        values,
        undefined,
    })
}

/// Draws from a model by sequential conditionals.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    /// `count x d`, row-major.
    pub samples: Vec<f64>,
    pub count: usize,
    pub d: usize,
    /// Negative conditional mass removed by clipping, relative to the total
    /// absolute mass, averaged over all steps.
    pub clipped_fraction: f64,
}

/// Samples `count` points. Each conditional `p(x_k | x_<k)` is tabulated on
/// `grid_points` uniform points over `[-B, B]`, negative values are clipped
/// and `x_k` is drawn by exact inversion of the piecewise-linear CDF. Sample
/// `i` uses stream `i` of a ChaCha generator seeded with `seed`.
pub fn sample(model: &FhtModel, count: usize, seed: u64, grid_points: usize) -> Result<SampleOutput> {
    if grid_points < 2 {
        return Err(FhtError::InvalidParameter(
            "sampling grid needs at least 2 points".into(),
        ));
    }
    let d = model.d();
    let basis = model.basis();
    let b = basis.half_width;
    let h = 2.0 * b / (grid_points - 1) as f64;
    let xs: Vec<f64> = (0..grid_points).map(|g| -b + g as f64 * h).collect();
    let psi: Vec<Vec<f64>> = xs.iter().map(|&x| basis.eval(x)).collect();
    let e = basis.integral_vector();
    let base_up = model.upward(|_| &e);

    let mut samples = vec![0.0; count * d];
    let clipped: Vec<Result<f64>> = samples
        .par_chunks_mut(d.max(1))
        .enumerate()
        .map(|(i, out)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut up = base_up.clone();
            let mut dens = vec![0.0; grid_points];
            let mut clipped = 0.0;
            for k in 0..d {
                let leaf = model.tree().leaf_id(k);
                let env = model.env_path(&up, leaf);
                let c = model.core(leaf).leaf_open(&env);
                let (mut pos, mut neg) = (0.0, 0.0);
                for (g, p) in psi.iter().enumerate() {
                    let v: f64 = p.iter().zip(&c).map(|(a, b)| a * b).sum();
                    if v > 0.0 {
                        dens[g] = v;
                        pos += v;
                    } else {
                        dens[g] = 0.0;
                        neg -= v;
                    }
                }
                if !(pos > 0.0) || !pos.is_finite() {
                    return Err(FhtError::NonPositiveConditional(k));
                }
                clipped += neg / (pos + neg);
                let x = invert_linear_cdf(&xs, &dens, rng.random::<f64>());
                out[k] = x;
                let w = basis.eval(x);
                for id in model.tree().path_to_root(leaf) {
                    up[id] = model.up_at(id, &up, || &w);
                }
            }
            Ok(clipped / d as f64)
        })
        .collect();
    let mut total = 0.0;
    for c in clipped {
        total += c?;
    }
    Ok(SampleOutput {
        samples,
        count,
        d,
        clipped_fraction: if count == 0 { 0.0 } else { total / count as f64 },
    })
}

/// Inverse CDF of the piecewise-linear density through `(xs, f)` at level
/// `u in [0, 1)`.
fn invert_linear_cdf(xs: &[f64], f: &[f64], u: f64) -> f64 {
    let masses: Vec<f64> = xs
        .windows(2)
        .zip(f.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .collect();
    let total: f64 = masses.iter().sum();
    let mut target = u * total;
    let mut seg = masses.len() - 1;
    for (s, &m) in masses.iter().enumerate() {
        if target < m {
            seg = s;
            break;
        }
        target -= m;
    }
    while masses[seg] == 0.0 && seg > 0 {
        seg -= 1;
        target = masses[seg];
    }
    let (x0, width) = (xs[seg], xs[seg + 1] - xs[seg]);
    let (f0, f1) = (f[seg], f[seg + 1]);
    let target = target.clamp(0.0, masses[seg]);
    // f0 t + (f1 - f0) t^2 / (2 width) = target, in cancellation-free form
    let slope = (f1 - f0) / width;
    let disc = (f0 * f0 + 2.0 * slope * target).max(0.0);
    let denom = f0 + disc.sqrt();
    let t = if denom > 0.0 { 2.0 * target / denom } else { 0.0 };
    x0 + t.clamp(0.0, width)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Linear,
}

/// Normalized snapshot models `p_j ~ p(t_j, .)` with time interpolation.
#[derive(Clone, Debug)]
pub struct FokkerPlanckSolution {
    times: Vec<f64>,
    models: Vec<FhtModel>,
    pub mode: Interpolation,
}

impl FokkerPlanckSolution {
    pub fn new(times: Vec<f64>, models: Vec<FhtModel>, mode: Interpolation) -> Result<Self> {
        if times.is_empty() || times.len() != models.len() {
            return Err(FhtError::InvalidParameter(
                "need one model per snapshot time and at least one snapshot".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(FhtError::InvalidParameter("snapshot times must increase".into()));
        }
        let (d, basis) = (models[0].d(), *models[0].basis());
        if models.iter().any(|m| m.d() != d || *m.basis() != basis) {
            return Err(FhtError::BasisMismatch);
        }
        Ok(Self { times, models, mode })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn models(&self) -> &[FhtModel] {
        &self.models
    }

    /// Snapshot weights `(j, w)` whose combination gives the density at `t`.
    pub fn weights(&self, t: f64) -> Result<Vec<(usize, f64)>> {
        let (first, last) = (self.times[0], *self.times.last().unwrap());
        if !(t >= first && t <= last) {
            return Err(FhtError::OutOfRange(format!("time {t} outside [{first}, {last}]")));
        }
        let j = self.times.partition_point(|&tj| tj <= t).saturating_sub(1);
        if self.times[j] == t || j + 1 == self.times.len() {
            return Ok(vec![(j, 1.0)]);
        }
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        Ok(match self.mode {
            Interpolation::Nearest => vec![(if t - t0 <= t1 - t { j } else { j + 1 }, 1.0)],
            Interpolation::Linear => {
                let w = (t - t0) / (t1 - t0);
                vec![(j, 1.0 - w), (j + 1, w)]
            }
        })
    }

    pub fn query_density(&self, t: f64, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (j, w) in self.weights(t)? {
            acc += w * self.models[j].evaluate(x)?;
        }
        Ok(acc)
    }

    pub fn integrate_at(&self, t: f64) -> Result<f64> {
        Ok(self
            .weights(t)?
            .into_iter()
            .map(|(j, w)| w * self.models[j].integrate())
            .sum())
    }
}

/// Fits, normalizes and annotates a model for one snapshot.
pub fn fit_snapshot(
    samples: &[f64],
    tree: &DimensionTree,
    basis: &FourierBasis,
    sketches: &SketchSet,
    config: &SketchConfig,
) -> Result<FhtModel> {
    let fit = sketch_density(samples, tree, basis, sketches, config)?;
    let ranks = fit.effective_ranks();
    let mut model = fit.model;
    let integral = model.normalize()?;
    model.metadata.sample_count = Some(fit.sample_count);
    model.metadata.clamped_entries = Some(fit.clamped_entries);
    model.metadata.integral_before_normalization = Some(integral);
    model.metadata.sketch = Some(serde_json::json!({
        "config": config,
        "effective_ranks": ranks,
        "shortfalls": fit.shortfalls,
    }));
    Ok(model)
}

/// Simulates the particle dynamics and fits one model per snapshot.
pub fn solve_fokker_planck(
    drift: &dyn Drift,
    sde: &SdeConfig,
    basis: &FourierBasis,
    sketch: &SketchConfig,
    grid: &GridSpec,
) -> Result<FokkerPlanckSolution> {
    let batch = simulate(drift, sde)?;
    let tree = sketch.tree(drift.dim())?;
    let sketches = build_default_sketches(&tree, basis, grid, sketch)?;
    let mut models = Vec::with_capacity(batch.num_snapshots());
    for j in 0..batch.num_snapshots() {
        let mut model =
            fit_snapshot(batch.snapshot(j), &tree, basis, &sketches, sketch).map_err(|e| FhtError::Snapshot {
                index: j,
                source: Box::new(e),
            })?;
        model.metadata.time = Some(batch.recorded_times[j]);
        model.metadata.grid = Some(*grid);
        models.push(model);
    }
    FokkerPlanckSolution::new(batch.recorded_times.clone(), models, Interpolation::Linear)
}
