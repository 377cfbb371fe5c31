//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. The full-scale run (criterion 7) is
//! skipped unless `--include-ignored` is passed or `FHT_FULL_ACCEPTANCE=1`.

use std::f64::consts::PI;
use std::time::Instant;

use fht_core::applications::{estimate_observable, sample, solve_fokker_planck, two_point_correlation, Observable};
use fht_core::basis::FourierBasis;
use fht_core::dynamics::{simulate, InitialState, Potential, PotentialKind, SdeConfig};
use fht_core::io;
use fht_core::model::FhtModel;
use fht_core::model::TensorCore;
use fht_core::sketching::{
    build_default_sketches, fit_from_moments, sketch_density, MomentEstimates, SketchConfig, SketchFunction,
};
use fht_core::topology::{DimensionTree, GridSpec, NodeRole};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erf;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- oracles

/// `prod_j psi_{i_j}(x_j)` summed against a dense row-major tensor.
fn dense_contract(c: &[f64], n: usize, d: usize, leaf: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (flat, &cv) in c.iter().enumerate() {
        let mut rest = flat;
        let mut w = cv;
        for j in (0..d).rev() {
            w *= leaf[j][rest % n];
            rest /= n;
        }
        total += w;
    }
    total
}

fn random_model(d: usize, q: usize, max_rank: usize, seed: u64) -> FhtModel {
    let tree = DimensionTree::balanced(d, max_rank, max_rank).unwrap();
    let basis = FourierBasis::new(1.5, q).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bonds: Vec<usize> = (0..tree.num_nodes()).map(|_| rng.random_range(1..=max_rank)).collect();
    FhtModel::from_fn(tree, basis, |id| bonds[id], || rng.random_range(-1.0..1.0)).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// ---------------------------------------------------------------- 1

fn dense_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for (case, d) in [2usize, 4, 8].into_iter().enumerate() {
        for seed in 0..3u64 {
            let model = random_model(d, 1, 3, 100 * case as u64 + seed);
            let other = random_model(d, 1, 3, 1000 + 100 * case as u64 + seed);
            let basis = *model.basis();
            let n = basis.size();
            let c = model.contract_full().unwrap();
            let c2 = other.contract_full().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            for _ in 0..20 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                let leaf: Vec<Vec<f64>> = x.iter().map(|&v| basis.eval(v)).collect();
                worst = worst.max(rel(model.evaluate(&x).unwrap(), dense_contract(&c, n, d, &leaf)));
            }
            let e = vec![basis.integral_vector(); d];
            worst = worst.max(rel(model.integrate(), dense_contract(&c, n, d, &e)));
            let ip: f64 = c.iter().zip(&c2).map(|(a, b)| a * b).sum();
            worst = worst.max(rel(model.inner_product(&other).unwrap(), ip));

            let pts: Vec<f64> = (0..7).map(|k| -1.4 + 0.45 * k as f64).collect();
            let m1 = model.marginal_grid(&[d - 1], std::slice::from_ref(&pts)).unwrap();
            for (k, &x) in pts.iter().enumerate() {
                let mut leaf = e.clone();
                leaf[d - 1] = basis.eval(x);
                worst = worst.max(rel(m1[k], dense_contract(&c, n, d, &leaf)));
            }
            let m2 = model.marginal_grid(&[0, d - 1], &[pts.clone(), pts.clone()]).unwrap();
            for (a, &x) in pts.iter().enumerate() {
                for (b, &y) in pts.iter().enumerate() {
                    let mut leaf = e.clone();
                    leaf[0] = basis.eval(x);
                    leaf[d - 1] = basis.eval(y);
                    worst = worst.max(rel(m2[a * pts.len() + b], dense_contract(&c, n, d, &leaf)));
                }
            }
        }
    }
    outcome(worst < 1e-10, format!("max relative error {worst:.2e} (tol 1e-10)"))
}

// ---------------------------------------------------------------- 2

/// Periodic trapezoid nodes on `[-B, B]`; exact for trigonometric
/// polynomials of degree below `points`.
fn periodic_nodes(b: f64, points: usize) -> (Vec<f64>, f64) {
    let h = 2.0 * b / points as f64;
    ((0..points).map(|k| -b + k as f64 * h).collect(), h)
}

fn moment_oracle() -> Outcome {
    let d = 8;
    let q = 1;
    let rank = 2;
    let tree = DimensionTree::balanced(d, rank, 4).unwrap();
    let basis = FourierBasis::new(2.0, q).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let truth = FhtModel::from_fn(tree.clone(), basis, |_| rank, || rng.random_range(-1.0..1.0)).unwrap();
    let grid = GridSpec::new(1, d).unwrap();
    let config = SketchConfig {
        rank,
        oversample: Some(4),
        max_monomial_degree: 1,
        ..SketchConfig::default()
    };
    let sketches = build_default_sketches(&tree, &basis, &grid, &config).unwrap();

    // Exact expectations E_p[f] = integral of p f, by tensor quadrature that
    // is exact for the degrees involved (at most 3 per variable).
    let (nodes, h) = periodic_nodes(basis.half_width, 4);
    let m = nodes.len();
    let c = truth.contract_full().unwrap();
    let n = basis.size();
    let psi: Vec<Vec<f64>> = nodes.iter().map(|&x| basis.eval(x)).collect();
    let total = m.pow(d as u32);
    let mut values = c.clone();
    // contract one axis at a time: values[(g_1..g_j, i_{j+1}..i_d)]
    for axis in 0..d {
        let (outer, inner) = (m.pow(axis as u32), n.pow((d - axis - 1) as u32));
        let mut next = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for g in 0..m {
                for i in 0..n {
                    let w = psi[g][i];
                    for r in 0..inner {
                        next[(o * m + g) * inner + r] += w * values[(o * n + i) * inner + r];
                    }
                }
            }
        }
        values = next;
    }
    assert_eq!(values.len(), total);
    let points: Vec<Vec<f64>> = (0..total)
        .map(|flat| {
            let mut rest = flat;
            let mut x = vec![0.0; d];
            for j in (0..d).rev() {
                x[j] = nodes[rest % m];
                rest /= m;
            }
            x
        })
        .collect();
    let weight = h.powi(d as i32);
    let eval_all = |list: &[SketchFunction]| -> Vec<Vec<f64>> {
        points
            .iter()
            .map(|x| list.iter().map(|f| f.eval(&basis, x)).collect())
            .collect()
    };
    let mut z = vec![None; tree.num_nodes()];
    let mut b = Vec::new();
    let cache_own: Vec<Vec<Vec<f64>>> = (0..tree.num_nodes()).map(|id| eval_all(&sketches.own[id])).collect();
    let cache_comp: Vec<Vec<Vec<f64>>> = (0..tree.num_nodes())
        .map(|id| eval_all(&sketches.complement[id]))
        .collect();
    for id in 0..tree.num_nodes() {
        if id > 0 {
            let (ro, rc) = (sketches.own[id].len(), sketches.complement[id].len());
            let mut zm = DMatrix::zeros(ro, rc);
            for g in 0..total {
                let w = weight * values[g];
                for i in 0..ro {
                    for j in 0..rc {
                        zm[(i, j)] += w * cache_own[id][g][i] * cache_comp[id][g][j];
                    }
                }
            }
            z[id] = Some(zm);
        }
        let core = match tree.role(id) {
            NodeRole::Leaf => {
                let var = tree.leaf_var(id);
                let rc = sketches.complement[id].len();
                let mut data = vec![0.0; n * rc];
                for g in 0..total {
                    let w = weight * values[g];
                    let px = basis.eval(points[g][var]);
                    for i in 0..n {
                        for j in 0..rc {
                            data[i * rc + j] += w * px[i] * cache_comp[id][g][j];
                        }
                    }
                }
                TensorCore::new(vec![n, rc], data).unwrap()
            }
            role => {
                let (a, bb) = tree.children(id).unwrap();
                let (ra, rb) = (sketches.own[a].len(), sketches.own[bb].len());
                let rf = if role == NodeRole::Root {
                    1
                } else {
                    sketches.complement[id].len()
                };
                let mut data = vec![0.0; ra * rb * rf];
                for g in 0..total {
                    let w = weight * values[g];
                    for i in 0..ra {
                        for j in 0..rb {
                            let wij = w * cache_own[a][g][i] * cache_own[bb][g][j];
                            for k in 0..rf {
                                let s = if role == NodeRole::Root {
                                    1.0
                                } else {
                                    cache_comp[id][g][k]
                                };
                                data[(i * rb + j) * rf + k] += wij * s;
                            }
                        }
                    }
                }
                let shape = if role == NodeRole::Root {
                    vec![ra, rb]
                } else {
                    vec![ra, rb, rf]
                };
                TensorCore::new(shape, data).unwrap()
            }
        };
        b.push(core);
    }
    let moments = MomentEstimates { z, b };
    let (fitted, _) = fit_from_moments(&tree, &basis, &moments, config.tol_svd, config.tol_pinv).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut diffs = Vec::new();
    for _ in 0..100 {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (p, ph) = (truth.evaluate(&x).unwrap(), fitted.evaluate(&x).unwrap());
        scale = scale.max(p.abs());
        diffs.push((p - ph).abs());
    }
    for diff in diffs {
        worst = worst.max(diff / scale);
    }
    outcome(
        worst < 1e-8,
        format!("max error / max|p| over 100 points {worst:.2e} (tol 1e-8)"),
    )
}

// ---------------------------------------------------------------- 3

const MIX_B: f64 = 3.0;
const MIX_SIGMA: f64 = 0.5;

fn mixture_centers(j: usize) -> (f64, f64, f64) {
    // (left centre, right centre, left weight) per coordinate
    let shift = 0.1 * j as f64;
    (-1.0 + shift * 0.5, 1.0 - shift * 0.3, 0.35 + 0.04 * j as f64)
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / 2f64.sqrt()))
}

fn mixture_pdf(j: usize, x: f64) -> f64 {
    let (m1, m2, w) = mixture_centers(j);
    let g = |m: f64| (-0.5 * ((x - m) / MIX_SIGMA).powi(2)).exp() / (MIX_SIGMA * (2.0 * PI).sqrt());
    let mass = |m: f64| norm_cdf((MIX_B - m) / MIX_SIGMA) - norm_cdf((-MIX_B - m) / MIX_SIGMA);
    let z = w * mass(m1) + (1.0 - w) * mass(m2);
    (w * g(m1) + (1.0 - w) * g(m2)) / z
}

fn mixture_samples(d: usize, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, MIX_SIGMA).unwrap();
    let mut out = Vec::with_capacity(count * d);
    for _ in 0..count {
        for j in 0..d {
            let (m1, m2, w) = mixture_centers(j);
            loop {
                let m = if rng.random::<f64>() < w { m1 } else { m2 };
                let x = m + std.sample(&mut rng);
                if x.abs() <= MIX_B {
                    out.push(x);
                    break;
                }
            }
        }
    }
    out
}

fn product_config() -> (FourierBasis, SketchConfig) {
    (
        FourierBasis::new(MIX_B, 8).unwrap(),
        SketchConfig {
            rank: 2,
            ..SketchConfig::default()
        },
    )
}

fn fit_product(samples: &[f64], d: usize) -> FhtModel {
    let (basis, config) = product_config();
    let tree = config.tree(d).unwrap();
    let grid = GridSpec::new(1, d).unwrap();
    let sketches = build_default_sketches(&tree, &basis, &grid, &config).unwrap();
    let fit = sketch_density(samples, &tree, &basis, &sketches, &config).unwrap();
    fit.model.normalized().unwrap()
}

fn marginal_sup_error(model: &FhtModel) -> f64 {
    let xs: Vec<f64> = (0..=600).map(|k| -MIX_B + k as f64 * 0.01).collect();
    let mut worst: f64 = 0.0;
    for j in 0..model.d() {
        let m = model.marginal_grid(&[j], std::slice::from_ref(&xs)).unwrap();
        for (k, &x) in xs.iter().enumerate() {
            worst = worst.max((m[k] - mixture_pdf(j, x)).abs());
        }
    }
    worst
}

fn product_density() -> Outcome {
    let d = 8;
    let mut medians = Vec::new();
    for &count in &[1_000usize, 10_000, 100_000] {
        let mut errs: Vec<f64> = (0..3u64)
            .map(|seed| marginal_sup_error(&fit_product(&mixture_samples(d, count, 31 + seed), d)))
            .collect();
        errs.sort_by(f64::total_cmp);
        medians.push(errs[1]);
    }
    let err = marginal_sup_error(&fit_product(&mixture_samples(d, 100_000, 5), d));
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    outcome(
        err < 0.02 && monotone,
        format!(
            "sup error {err:.4} at N=1e5 (tol 0.02); medians over N=1e3,1e4,1e5: {:.4}, {:.4}, {:.4} (must decrease)",
            medians[0], medians[1], medians[2]
        ),
    )
}

// ---------------------------------------------------------------- 4

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    for (kind, grid) in [
        (PotentialKind::Gl1d, GridSpec::new(1, 16).unwrap()),
        (PotentialKind::Gl2d, GridSpec::new(2, 4).unwrap()),
        (PotentialKind::Gl3d, GridSpec::new(3, 2).unwrap()),
    ] {
        let pot = Potential::new(kind, grid, 0.03).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let x: Vec<f64> = (0..pot.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
            let g = pot.gradient(&x).unwrap();
            let eps = 1e-5;
            let fd: Vec<f64> = (0..x.len())
                .map(|v| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[v] += eps;
                    xm[v] -= eps;
                    (pot.value(&xp).unwrap() - pot.value(&xm).unwrap()) / (2.0 * eps)
                })
                .collect();
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
    }
    outcome(
        worst < 1e-6,
        format!("max relative gradient error {worst:.2e} (tol 1e-6)"),
    )
}

// ---------------------------------------------------------------- 5

fn ornstein_uhlenbeck() -> Outcome {
    let d = 4;
    let pot = Potential::new(PotentialKind::Harmonic, GridSpec::new(1, d).unwrap(), 1.0).unwrap();
    let times = vec![0.25, 0.5, 1.0];
    let sde = SdeConfig {
        beta: 1.0,
        t_final: 1.0,
        dt: 1e-3,
        n_traj: 20_000,
        snapshot_times: times.clone(),
        seed: 5,
        initial: InitialState::Uniform(0.0),
    };
    let basis = FourierBasis::new(4.0, 12).unwrap();
    let config = SketchConfig {
        rank: 3,
        ..SketchConfig::default()
    };
    let grid = GridSpec::new(1, d).unwrap();
    let sol = solve_fokker_planck(&pot, &sde, &basis, &config, &grid).unwrap();
    let mut worst_diag: f64 = 0.0;
    let mut worst_off: f64 = 0.0;
    for (j, &t) in times.iter().enumerate() {
        let model = &sol.models()[j];
        // Euler-Maruyama variance at the recorded step count
        let steps = (t / sde.dt).round() as i32;
        let a = 1.0 - sde.dt;
        let var = 2.0 * sde.dt * (1.0 - a.powi(2 * steps)) / (1.0 - a * a);
        let mean: Vec<f64> = (0..d)
            .map(|u| estimate_observable(model, &Observable::Mean(u)).unwrap())
            .collect();
        for u in 0..d {
            for v in u..d {
                let cov = estimate_observable(model, &Observable::Cross(u, v)).unwrap() - mean[u] * mean[v];
                if u == v {
                    worst_diag = worst_diag.max((cov - var).abs() / var);
                } else {
                    worst_off = worst_off.max(cov.abs() / var);
                }
            }
        }
    }
    outcome(
        worst_diag < 0.05 && worst_off < 0.05,
        format!(
            "max relative variance error {worst_diag:.4}, max |off-diagonal|/variance {worst_off:.4} (tol 0.05 each)"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn empirical_correlation(data: &[f64], d: usize, anchor: usize) -> Vec<f64> {
    let n = data.len() / d;
    let mut mean = vec![0.0; d];
    for row in data.chunks(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d];
    let mut var = vec![0.0; d];
    for row in data.chunks(d) {
        let da = row[anchor] - mean[anchor];
        for v in 0..d {
            let dv = row[v] - mean[v];
            cov[v] += da * dv;
            var[v] += dv * dv;
        }
    }
    (0..d).map(|v| cov[v] / (var[anchor] * var[v]).sqrt()).collect()
}

fn gl2d_sde(n_traj: usize, seed: u64) -> SdeConfig {
    SdeConfig {
        beta: 0.2,
        t_final: 1.0,
        dt: 0.003,
        n_traj,
        snapshot_times: vec![1.0],
        seed,
        initial: InitialState::Uniform(0.0),
    }
}

fn gl2d_correlation() -> Outcome {
    let grid = GridSpec::new(2, 4).unwrap();
    let pot = Potential::new(PotentialKind::Gl2d, grid, 0.03).unwrap();
    let basis = FourierBasis::new(2.5, 10).unwrap();
    let config = SketchConfig {
        rank: 8,
        ..SketchConfig::default()
    };
    let sol = solve_fokker_planck(&pot, &gl2d_sde(6000, 11), &basis, &config, &grid).unwrap();
    let model = &sol.models()[0];
    let reference = simulate(&pot, &gl2d_sde(60_000, 12)).unwrap();
    let anchor = [2usize, 2];
    let a = grid.interleave(&anchor).unwrap() - 1;
    let mc = empirical_correlation(reference.snapshot(0), grid.size(), a);
    let map = two_point_correlation(model, &grid, &anchor).unwrap();
    let mut worst: f64 = 0.0;
    for (pos, coords) in fht_core::applications::grid_coordinates(&grid).iter().enumerate() {
        let v = grid.interleave(coords).unwrap() - 1;
        worst = worst.max((map.values[pos] - mc[v]).abs());
    }
    outcome(
        worst < 0.07,
        format!("max |model - Monte Carlo| correlation {worst:.4} (tol 0.07)"),
    )
}

// ---------------------------------------------------------------- 7

fn full_scale() -> Outcome {
    let grid = GridSpec::new(1, 256).unwrap();
    let pot = Potential::new(PotentialKind::Gl1d, grid, 0.01).unwrap();
    let sde = SdeConfig {
        beta: 0.125,
        t_final: 1.0,
        dt: 1.0 / 2000.0,
        n_traj: 6000,
        snapshot_times: vec![1.0],
        seed: 7,
        initial: InitialState::Uniform(0.0),
    };
    let basis = FourierBasis::new(2.5, 15).unwrap();
    let config = SketchConfig {
        rank: 6,
        ..SketchConfig::default()
    };
    let batch = simulate(&pot, &sde).unwrap();
    let tree = config.tree(256).unwrap();
    let sketches = build_default_sketches(&tree, &basis, &grid, &config).unwrap();
    let model = fht_core::applications::fit_snapshot(batch.snapshot(0), &tree, &basis, &sketches, &config).unwrap();
    let (u, v) = (31usize, 223usize);
    let bins = 40;
    let b = basis.half_width;
    let width = 2.0 * b / bins as f64;
    let mut hist = vec![0.0; bins * bins];
    let snap = batch.snapshot(0);
    for row in snap.chunks(256) {
        let bin = |x: f64| (((x + b) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        hist[bin(row[u]) * bins + bin(row[v])] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    // model mass per bin from a 4x4 midpoint rule inside each bin
    let sub = 4;
    let pts: Vec<f64> = (0..bins * sub)
        .map(|k| -b + (k as f64 + 0.5) * width / sub as f64)
        .collect();
    let m = model.marginal_grid(&[u, v], &[pts.clone(), pts.clone()]).unwrap();
    let cell = (width / sub as f64).powi(2);
    let mut mass = vec![0.0; bins * bins];
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            mass[(i / sub) * bins + j / sub] += m[i * pts.len() + j].max(0.0) * cell;
        }
    }
    let msum: f64 = mass.iter().sum();
    let tv: f64 = 0.5
        * hist
            .iter()
            .zip(&mass)
            .map(|(h, p)| (h / total - p / msum).abs())
            .sum::<f64>();
    outcome(
        tv < 0.15,
        format!("total variation vs 40x40 histogram {tv:.4} (tol 0.15)"),
    )
}

// ---------------------------------------------------------------- 8

const TRIG_B: f64 = 2.0;

/// `(1 + a sin(pi x/B) + c cos(2 pi x/B)) / (2B)`, bounded below by
/// `(1 - |a| - |c|) / (2B)`.
fn trig_factor(component: usize, j: usize) -> (f64, f64) {
    let s = if component == 0 { 1.0 } else { -1.0 };
    (s * (0.25 + 0.02 * j as f64), 0.2 - 0.1 * component as f64)
}

/// Equal mixture of two product densities; rank 2 across every cut.
fn trig_mixture_samples(d: usize, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * d);
    for _ in 0..count {
        let component = usize::from(rng.random::<f64>() < 0.5);
        for j in 0..d {
            let (a, c) = trig_factor(component, j);
            loop {
                let x = rng.random_range(-TRIG_B..TRIG_B);
                let f = 1.0 + a * (PI * x / TRIG_B).sin() + c * (2.0 * PI * x / TRIG_B).cos();
                if rng.random::<f64>() * (1.0 + a.abs() + c.abs()) < f {
                    out.push(x);
                    break;
                }
            }
        }
    }
    out
}

fn normalization_and_sampling() -> Outcome {
    let d = 8;
    let basis = FourierBasis::new(TRIG_B, 4).unwrap();
    let config = SketchConfig {
        rank: 2,
        ..SketchConfig::default()
    };
    let tree = config.tree(d).unwrap();
    let grid = GridSpec::new(1, d).unwrap();
    let sketches = build_default_sketches(&tree, &basis, &grid, &config).unwrap();
    let data = trig_mixture_samples(d, 100_000, 77);
    let model = sketch_density(&data, &tree, &basis, &sketches, &config)
        .unwrap()
        .model
        .normalized()
        .unwrap();
    let norm_err = (model.integrate() - 1.0).abs();
    let count = 100_000;
    let out = sample(&model, count, 8, 512).unwrap();
    let mut worst_z: f64 = 0.0;
    for u in 0..d {
        let mean = estimate_observable(&model, &Observable::Mean(u)).unwrap();
        let second = estimate_observable(&model, &Observable::Second(u)).unwrap();
        let var = second - mean * mean;
        let xs: Vec<f64> = out.samples.chunks(d).map(|r| r[u]).collect();
        let emp_mean = xs.iter().sum::<f64>() / count as f64;
        let emp_second = xs.iter().map(|x| x * x).sum::<f64>() / count as f64;
        let fourth = xs.iter().map(|x| (x * x - second).powi(2)).sum::<f64>() / count as f64;
        worst_z = worst_z.max((emp_mean - mean).abs() / (var / count as f64).sqrt());
        worst_z = worst_z.max((emp_second - second).abs() / (fourth / count as f64).sqrt());
    }
    for u in 0..d - 1 {
        let cross = estimate_observable(&model, &Observable::Cross(u, u + 1)).unwrap();
        let prods: Vec<f64> = out.samples.chunks(d).map(|r| r[u] * r[u + 1]).collect();
        let emp = prods.iter().sum::<f64>() / count as f64;
        let spread = prods.iter().map(|p| (p - cross).powi(2)).sum::<f64>() / count as f64;
        worst_z = worst_z.max((emp - cross).abs() / (spread / count as f64).sqrt());
    }
    outcome(
        norm_err < 1e-10 && worst_z < 4.0,
        format!(
            "|integral - 1| = {norm_err:.2e} (tol 1e-10); max moment deviation {worst_z:.2} SE (tol 4); clipped mass {:.2e}",
            out.clipped_fraction
        ),
    )
}

// ---------------------------------------------------------------- 9

fn determinism() -> Outcome {
    let run = |threads: usize| -> (Vec<u8>, Vec<u8>) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let grid = GridSpec::new(1, 16).unwrap();
            let pot = Potential::new(PotentialKind::Gl1d, grid, 0.05).unwrap();
            let sde = SdeConfig {
                beta: 0.5,
                t_final: 0.2,
                dt: 1e-3,
                n_traj: 1500,
                snapshot_times: vec![0.1, 0.2],
                seed: 3,
                initial: InitialState::Uniform(0.0),
            };
            let batch = simulate(&pot, &sde).unwrap();
            let basis = FourierBasis::new(2.5, 6).unwrap();
            let config = SketchConfig {
                rank: 4,
                ..SketchConfig::default()
            };
            let tree = config.tree(16).unwrap();
            let sketches = build_default_sketches(&tree, &basis, &grid, &config).unwrap();
            let model =
                fht_core::applications::fit_snapshot(batch.snapshot(1), &tree, &basis, &sketches, &config).unwrap();
            let mut traj = Vec::new();
            io::write_trajectories(&mut traj, &batch, "test", Some(2.5)).unwrap();
            let mut bytes = Vec::new();
            io::write_model(&mut bytes, &model).unwrap();
            (traj, bytes)
        })
    };
    let reference = run(4);
    let same_run = run(4) == reference;
    let one_thread = run(1) == reference;
    let seven = run(7) == reference;
    outcome(
        same_run && one_thread && seven,
        format!("rerun identical: {same_run}; 1 thread identical: {one_thread}; 7 threads identical: {seven}"),
    )
}

/// Number, name, runner and whether it runs by default.
type Criterion = (u32, &'static str, fn() -> Outcome, bool);

fn main() {
    let full = std::env::args().any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var("FHT_FULL_ACCEPTANCE").is_ok_and(|v| v == "1");
    let list = std::env::args().any(|a| a == "--list");
    let criteria: Vec<Criterion> = vec![
        (1, "dense-oracle equivalence", dense_oracle, true),
        (2, "moment-oracle exact recovery", moment_oracle, true),
        (3, "product-density estimation", product_density, true),
        (4, "gradient correctness", gradients, true),
        (5, "Ornstein-Uhlenbeck end-to-end", ornstein_uhlenbeck, true),
        (6, "desk-scale GL2D correlation", gl2d_correlation, true),
        (7, "full-scale GL1D marginal", full_scale, full),
        (8, "normalization and sampling", normalization_and_sampling, true),
        (9, "determinism", determinism, true),
    ];
    if list {
        for (id, name, _, _) in &criteria {
            println!("criterion_{id}: {name}: test");
        }
        return;
    }
    let filter: Option<u32> = std::env::var("FHT_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (id, name, run, enabled) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        if !enabled {
            println!("criterion {id} [SKIP] {name}: full-scale run; pass --include-ignored to execute");
            continue;
        }
        let start = Instant::now();
        let result = run();
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{status}] {name}: {} ({:.1}s)",
            result.detail,
            start.elapsed().as_secs_f64()
        );
        if !result.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
