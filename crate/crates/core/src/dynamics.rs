//! Lattice potentials and overdamped Langevin simulation.
//!
//! The particle dynamics `dX = -grad V(X) dt + sqrt(2/beta) dB` are integrated
//! with Euler-Maruyama. Trajectory `i` draws its noise from its own ChaCha
//! stream `(seed, i)`, so results do not depend on how trajectories are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FhtError, Result};
use crate::topology::GridSpec;

/// Drift field of an SDE with scalar isotropic diffusion `sqrt(2/beta)`.
pub trait Drift: Sync {
    fn dim(&self) -> usize;

    /// Writes the drift at `x` into `out`.
    fn drift(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    Gl1d,
    Gl2d,
    Gl3d,
    /// `V(x) = (lambda/2) |x|^2`; the Ornstein-Uhlenbeck test case.
    Harmonic,
}

impl PotentialKind {
    pub fn physical_dims(&self) -> Option<usize> {
        match self {
            PotentialKind::Gl1d => Some(1),
            PotentialKind::Gl2d => Some(2),
            PotentialKind::Gl3d => Some(3),
            PotentialKind::Harmonic => None,
        }
    }
}

/// Discretized potential on a lattice with zero-Dirichlet ghost sites.
///
/// Ginzburg-Landau energy:
/// `V(x) = lambda/2 sum_{v~w} ((x_v - x_w)/h)^2 + 1/(4 lambda) sum_v (1 - x_v^2)^2`,
/// where the first sum includes bonds to ghost sites fixed at zero.
/// Variables are indexed by the interleaved linear index of their site.
#[derive(Clone, Debug)]
pub struct Potential {
    kind: PotentialKind,
    grid: GridSpec,
    lambda: f64,
    neighbors: Vec<Vec<usize>>,
    ghosts: Vec<usize>,
}

impl Potential {
    pub fn new(kind: PotentialKind, grid: GridSpec, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(FhtError::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if let Some(dims) = kind.physical_dims() {
            if dims != grid.dims() {
                return Err(FhtError::InvalidParameter(format!(
                    "{kind:?} needs a {dims}-dimensional grid, got {}",
                    grid.dims()
                )));
            }
        }
        let neighbors = grid.neighbor_table();
        let ghosts = neighbors.iter().map(|n| 2 * grid.dims() - n.len()).collect();
        Ok(Self {
            kind,
            grid,
            lambda,
            neighbors,
            ghosts,
        })
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.neighbors.len()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(FhtError::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check(x.len())?;
        if self.kind == PotentialKind::Harmonic {
            return Ok(0.5 * self.lambda * x.iter().map(|v| v * v).sum::<f64>());
        }
        let inv_h2 = 1.0 / self.grid.spacing().powi(2);
        let mut coupling = 0.0;
        let mut quartic = 0.0;
        for (v, &xv) in x.iter().enumerate() {
            for &w in &self.neighbors[v] {
                if w > v {
                    coupling += (xv - x[w]).powi(2);
                }
            }
            coupling += self.ghosts[v] as f64 * xv * xv;
            quartic += (1.0 - xv * xv).powi(2);
        }
        Ok(0.5 * self.lambda * inv_h2 * coupling + quartic / (4.0 * self.lambda))
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        if self.kind == PotentialKind::Harmonic {
            for (o, &xv) in out.iter_mut().zip(x) {
                *o = self.lambda * xv;
            }
            return;
        }
        let c = self.lambda / self.grid.spacing().powi(2);
        let inv_lambda = 1.0 / self.lambda;
        for (v, o) in out.iter_mut().enumerate() {
            let xv = x[v];
            let mut lap = self.ghosts[v] as f64 * xv;
            for &w in &self.neighbors[v] {
                lap += xv - x[w];
            }
            *o = c * lap - inv_lambda * (1.0 - xv * xv) * xv;
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let mut out = vec![0.0; x.len()];
        self.gradient_into(x, &mut out);
        Ok(out)
    }
}

impl Drift for Potential {
    fn dim(&self) -> usize {
        self.neighbors.len()
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.gradient_into(x, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }
}

/// Starting point of every trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Uniform(f64),
    Point(Vec<f64>),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Uniform(0.0)
    }
}

impl InitialState {
    fn materialize(&self, d: usize) -> Result<Vec<f64>> {
        match self {
            InitialState::Uniform(v) => Ok(vec![*v; d]),
            InitialState::Point(p) if p.len() == d => Ok(p.clone()),
            InitialState::Point(p) => Err(FhtError::DimensionMismatch {
                expected: d,
                got: p.len(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    /// Inverse temperature; `f64::INFINITY` switches the noise off.
    pub beta: f64,
    pub t_final: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialState,
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FhtError::InvalidParameter(msg));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("time step must be positive, got {}", self.dt));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return bad(format!("terminal time must be >= 0, got {}", self.t_final));
        }
        if self.n_traj == 0 {
            return bad("need at least one trajectory".into());
        }
        if self.snapshot_times.is_empty() {
            return bad("need at least one snapshot time".into());
        }
        if self.snapshot_times.windows(2).any(|w| w[0] > w[1]) {
            return bad("snapshot times must be sorted".into());
        }
        if self.snapshot_times.iter().any(|&t| !(0.0..=self.t_final).contains(&t)) {
            return bad("snapshot times must lie in [0, T]".into());
        }
        if let InitialState::Uniform(v) = self.initial {
            if !v.is_finite() {
                return bad("initial state must be finite".into());
            }
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Step index whose time is nearest to each snapshot time.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let total = self.num_steps();
        self.snapshot_times
            .iter()
            .map(|t| ((t / self.dt).round() as usize).min(total))
            .collect()
    }

    pub fn noise_scale(&self) -> f64 {
        (2.0 * self.dt / self.beta).sqrt()
    }
}

/// Particle snapshots stored snapshot-major: `data[(j * n + i) * d + v]` is
/// coordinate `v` of trajectory `i` at snapshot `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    n: usize,
    k: usize,
    d: usize,
    data: Vec<f64>,
    /// Simulated time at which each snapshot was actually recorded.
    pub recorded_times: Vec<f64>,
    /// Generating run, absent for batches drawn from a fitted model.
    pub config: Option<SdeConfig>,
}

impl TrajectoryBatch {
    pub fn from_parts(
        n: usize,
        k: usize,
        d: usize,
        data: Vec<f64>,
        recorded_times: Vec<f64>,
        config: Option<SdeConfig>,
    ) -> Result<Self> {
        if data.len() != n * k * d {
            return Err(FhtError::ShapeMismatch(format!(
                "payload has {} values, expected {n} x {k} x {d}",
                data.len()
            )));
        }
        if recorded_times.len() != k {
            return Err(FhtError::ShapeMismatch(format!(
                "{} snapshot times for {k} snapshots",
                recorded_times.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FhtError::Format("non-finite trajectory value".into()));
        }
        Ok(Self {
            n,
            k,
            d,
            data,
            recorded_times,
            config,
        })
    }

    pub fn num_trajectories(&self) -> usize {
        self.n
    }

    pub fn num_snapshots(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row-major `n x d` block of snapshot `j`.
    pub fn snapshot(&self, j: usize) -> &[f64] {
        let block = self.n * self.d;
        &self.data[j * block..(j + 1) * block]
    }

    /// Number of entries with `|x| > bound`, per snapshot.
    pub fn out_of_range_counts(&self, bound: f64) -> Vec<u64> {
        (0..self.k)
            .map(|j| self.snapshot(j).iter().filter(|v| v.abs() > bound).count() as u64)
            .collect()
    }
}

/// Runs `config.n_traj` independent Euler-Maruyama trajectories
/// `X <- X + b(X) dt + sqrt(2 dt / beta) xi`.
pub fn simulate(drift: &dyn Drift, config: &SdeConfig) -> Result<TrajectoryBatch> {
    config.validate()?;
    let d = drift.dim();
    let x0 = config.initial.materialize(d)?;
    let steps = config.snapshot_steps();
    let total = config.num_steps();
    let noise = config.noise_scale();
    let k = steps.len();

    let per_traj: Vec<Vec<f64>> = (0..config.n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let mut x = x0.clone();
            let mut b = vec![0.0; d];
            let mut out = Vec::with_capacity(k * d);
            let mut next = 0;
            for step in 0..=total {
                while next < k && steps[next] == step {
                    out.extend_from_slice(&x);
                    next += 1;
                }
                if step == total || next == k {
                    break;
                }
                drift.drift(&x, &mut b);
                for (xv, bv) in x.iter_mut().zip(&b) {
                    *xv += bv * config.dt;
                }
                if noise > 0.0 {
                    for xv in x.iter_mut() {
                        let xi: f64 = StandardNormal.sample(&mut rng);
                        *xv += noise * xi;
                    }
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(FhtError::NonFiniteState {
                        trajectory: i,
                        step: step + 1,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let n = config.n_traj;
    let mut data = vec![0.0; k * n * d];
    for (i, traj) in per_traj.iter().enumerate() {
        for j in 0..k {
            let dst = (j * n + i) * d;
            data[dst..dst + d].copy_from_slice(&traj[j * d..(j + 1) * d]);
        }
    }
    let recorded_times = steps.iter().map(|&s| s as f64 * config.dt).collect();
    TrajectoryBatch::from_parts(n, k, d, data, recorded_times, Some(config.clone()))
}
