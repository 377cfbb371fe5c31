//! `fht`: configuration-driven front end for simulation, density fitting
//! and the downstream applications.
//!
//! Variables, grid coordinates and snapshot indices are 1-based on the
//! command line and in every CSV file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fht_core::config::OutputFormat;
use fht_core::io::{csv_with_preamble, load_model, load_trajectories, save_model, save_trajectories, verify_file};
use fht_core::{
    build_default_sketches, estimate_observable, fit_snapshot, sample, simulate, two_point_correlation, FhtError,
    FhtModel, GridSpec, Observable, Result, RunConfig, TrajectoryBatch,
};

const THREADS_ENV: &str = "FHT_THREADS";

#[derive(Parser)]
#[command(
    name = "fht",
    version,
    about = "Hierarchical tensor density estimation for Fokker-Planck equations"
)]
struct Cli {
    /// Worker threads for the parallel stages (overrides FHT_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set sde.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the particle simulation and write a trajectory file.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Trajectory file (default `<output.directory>/trajectories.fhtraj`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a density model to one snapshot of a trajectory file.
    Estimate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        trajectories: PathBuf,
        /// 1-based snapshot index (default: last snapshot).
        #[arg(long)]
        snapshot: Option<usize>,
        /// Model file (default `<output.directory>/model_<snapshot>.fhtm`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate a one- or two-variable marginal as CSV.
    Marginal {
        #[arg(long)]
        model: PathBuf,
        /// One or two 1-based variables, e.g. `31,223`.
        #[arg(long, value_delimiter = ',', num_args = 1..=2, required = true)]
        vars: Vec<usize>,
        /// Points per axis on `[-B, B]`.
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// CSV file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-point correlation map against an anchor site as CSV.
    Correlate {
        #[arg(long)]
        model: PathBuf,
        /// 1-based anchor grid coordinates, e.g. `8,8`.
        #[arg(long, value_delimiter = ',', required = true)]
        anchor: Vec<usize>,
        /// Grid layout when the model does not record one.
        #[command(flatten)]
        config: Option<OptionalConfig>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples from a model into a trajectory file with one snapshot.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid points for each conditional.
        #[arg(long, default_value_t = 512)]
        grid_points: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the samples as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate an expectation under a model.
    Observable {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        which: ObservableArgs,
    },
    /// Simulate and fit every snapshot.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Check payload hashes and, with a config, the embedded config hash.
    Verify {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        config: Option<OptionalConfig>,
    },
}

#[derive(Args)]
struct OptionalConfig {
    #[arg(long = "config", required = false)]
    path: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ObservableArgs {
    /// Mean of a 1-based variable.
    #[arg(long)]
    mean: Option<usize>,
    /// Second moment of a 1-based variable.
    #[arg(long)]
    second: Option<usize>,
    /// Cross moment of two 1-based variables, e.g. `3,5`.
    #[arg(long, value_delimiter = ',')]
    cross: Option<Vec<usize>>,
    /// Inner product with the density of another model file.
    #[arg(long)]
    against: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| FhtError::InvalidParameter(format!("{THREADS_ENV}={v} is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(FhtError::InvalidParameter("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| FhtError::InvalidParameter(e.to_string()))?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out } => cmd_simulate(&config.load()?, out),
        Command::Estimate {
            config,
            trajectories,
            snapshot,
            out,
        } => cmd_estimate(&config.load()?, &trajectories, snapshot, out),
        Command::Marginal {
            model,
            vars,
            points,
            out,
        } => cmd_marginal(&model, &vars, points, out.as_deref()),
        Command::Correlate {
            model,
            anchor,
            config,
            out,
        } => {
            let config = config.map(|c| RunConfig::load(&c.path, &c.overrides)).transpose()?;
            cmd_correlate(&model, &anchor, config.as_ref(), out.as_deref())
        }
        Command::Sample {
            model,
            count,
            seed,
            grid_points,
            out,
            csv,
        } => cmd_sample(&model, count, seed, grid_points, &out, csv.as_deref()),
        Command::Observable { model, which } => cmd_observable(&model, which),
        Command::Solve { config } => cmd_solve(&config.load()?),
        Command::Verify { files, config } => {
            let config = config.map(|c| RunConfig::load(&c.path, &c.overrides)).transpose()?;
            cmd_verify(&files, config.as_ref())
        }
    }
}

fn output_path(config: &RunConfig, given: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let path = given.unwrap_or_else(|| Path::new(&config.output.directory).join(name));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(path)
}

fn wants(config: &RunConfig, format: OutputFormat) -> bool {
    config.output.formats.contains(&format)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn to_zero_based(var: usize, d: usize) -> Result<usize> {
    if var == 0 || var > d {
        return Err(FhtError::OutOfRange(format!("variable {var} outside 1..={d}")));
    }
    Ok(var - 1)
}

fn model_hash(model: &FhtModel) -> String {
    model.metadata.config_hash.clone().unwrap_or_else(|| "none".into())
}

/// Per-coordinate min, max, mean and entries outside `[-bound, bound]`.
fn snapshot_stats(batch: &TrajectoryBatch, j: usize, bound: f64) -> Vec<[f64; 4]> {
    let d = batch.dim();
    let mut stats = vec![[f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0]; d];
    for row in batch.snapshot(j).chunks(d) {
        for (s, &v) in stats.iter_mut().zip(row) {
            s[0] = s[0].min(v);
            s[1] = s[1].max(v);
            s[2] += v;
            if v.abs() > bound {
                s[3] += 1.0;
            }
        }
    }
    let n = batch.num_trajectories().max(1) as f64;
    for s in &mut stats {
        s[2] /= n;
    }
    stats
}

fn cmd_simulate(config: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let potential = config.potential()?;
    let batch = simulate(&potential, &config.sde)?;
    let hash = config.hash();
    let bound = config.basis.half_width;
    let (n, k, d) = (batch.num_trajectories(), batch.num_snapshots(), batch.dim());
    println!("simulated {n} trajectories, {k} snapshots, d = {d}");

    let mut csv = String::from("snapshot,time,var,min,max,mean,outside_b\n");
    for j in 0..k {
        let stats = snapshot_stats(&batch, j, bound);
        let lo = stats.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
        let hi = stats.iter().map(|s| s[1]).fold(f64::NEG_INFINITY, f64::max);
        let mean = stats.iter().map(|s| s[2]).sum::<f64>() / d as f64;
        let outside: f64 = stats.iter().map(|s| s[3]).sum();
        println!(
            "snapshot {} t = {:.6}: min {lo:.4} max {hi:.4} mean {mean:.4}; {outside} of {} entries outside [-{bound}, {bound}] would be clamped",
            j + 1,
            batch.recorded_times[j],
            n * d
        );
        for (v, s) in stats.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                j + 1,
                batch.recorded_times[j],
                v + 1,
                s[0],
                s[1],
                s[2],
                s[3]
            );
        }
    }

    if wants(config, OutputFormat::Binary) || out.is_some() {
        let path = output_path(config, out, "trajectories.fhtraj")?;
        save_trajectories(&path, &batch, &hash, Some(bound))?;
        println!("wrote {}", path.display());
    }
    if wants(config, OutputFormat::Csv) {
        let path = output_path(config, None, "snapshot_stats.csv")?;
        write_text(Some(&path), &csv_with_preamble(&hash, &csv))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn fit(config: &RunConfig, batch: &TrajectoryBatch, j: usize) -> Result<FhtModel> {
    let grid = config.grid()?;
    if batch.dim() != grid.size() {
        return Err(FhtError::ShapeMismatch(format!(
            "trajectories have d = {}, config grid has {} sites",
            batch.dim(),
            grid.size()
        )));
    }
    let tree = config.sketch.tree(grid.size())?;
    let sketches = build_default_sketches(&tree, &config.basis, &grid, &config.sketch)?;
    for s in &sketches.shortfalls {
        eprintln!("warning: {s:?}");
    }
    let mut model = fit_snapshot(batch.snapshot(j), &tree, &config.basis, &sketches, &config.sketch).map_err(|e| {
        FhtError::Snapshot {
            index: j,
            source: Box::new(e),
        }
    })?;
    model.metadata.time = Some(batch.recorded_times[j]);
    model.metadata.grid = Some(grid);
    model.metadata.config_hash = Some(config.hash());
    Ok(model)
}

fn report_model(model: &FhtModel, path: &Path) {
    let meta = &model.metadata;
    let ranks = meta
        .sketch
        .as_ref()
        .and_then(|s| s.get("effective_ranks"))
        .map(|r| r.to_string())
        .unwrap_or_default();
    println!(
        "wrote {}: t = {}, samples {}, clamped {}, integral before normalization {:.6}, effective ranks {ranks}",
        path.display(),
        meta.time.unwrap_or(f64::NAN),
        meta.sample_count.unwrap_or(0),
        meta.clamped_entries.unwrap_or(0),
        meta.integral_before_normalization.unwrap_or(f64::NAN),
    );
}

fn cmd_estimate(config: &RunConfig, trajectories: &Path, snapshot: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let (batch, _) = load_trajectories(trajectories)?;
    if batch.num_trajectories() == 0 || batch.num_snapshots() == 0 {
        return Err(FhtError::InvalidParameter(format!(
            "{} holds no samples",
            trajectories.display()
        )));
    }
    let k = batch.num_snapshots();
    let s = snapshot.unwrap_or(k);
    if s == 0 || s > k {
        return Err(FhtError::OutOfRange(format!("snapshot {s} outside 1..={k}")));
    }
    let model = fit(config, &batch, s - 1)?;
    let path = output_path(config, out, &format!("model_{s}.fhtm"))?;
    save_model(&path, &model)?;
    report_model(&model, &path);
    Ok(())
}

fn axis(b: f64, points: usize) -> Vec<f64> {
    let h = 2.0 * b / (points - 1) as f64;
    (0..points).map(|i| -b + i as f64 * h).collect()
}

fn cmd_marginal(model_path: &Path, vars: &[usize], points: usize, out: Option<&Path>) -> Result<()> {
    if points < 2 {
        return Err(FhtError::InvalidParameter(
            "marginal grids need at least 2 points".into(),
        ));
    }
    let (model, _) = load_model(model_path)?;
    let zero: Vec<usize> = vars
        .iter()
        .map(|&v| to_zero_based(v, model.d()))
        .collect::<Result<_>>()?;
    let xs = axis(model.basis().half_width, points);
    let grids = vec![xs.clone(); zero.len()];
    let values = model.marginal_grid(&zero, &grids)?;
    let mut body = String::new();
    if zero.len() == 1 {
        let _ = writeln!(body, "x{},density", vars[0]);
        for (x, p) in xs.iter().zip(&values) {
            let _ = writeln!(body, "{x},{p}");
        }
    } else {
        let _ = writeln!(body, "x{},x{},density", vars[0], vars[1]);
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in xs.iter().enumerate() {
                let _ = writeln!(body, "{x},{y},{}", values[i * points + j]);
            }
        }
    }
    write_text(out, &csv_with_preamble(&model_hash(&model), &body))
}

fn cmd_correlate(model_path: &Path, anchor: &[usize], config: Option<&RunConfig>, out: Option<&Path>) -> Result<()> {
    let (model, _) = load_model(model_path)?;
    let grid: GridSpec = match (model.metadata.grid, config) {
        (Some(g), _) => g,
        (None, Some(c)) => c.grid()?,
        (None, None) => {
            return Err(FhtError::InvalidParameter(
                "model records no grid layout; pass --config".into(),
            ))
        }
    };
    let map = two_point_correlation(&model, &grid, anchor)?;
    let m = grid.points_per_axis();
    let mut body = String::new();
    if grid.dims() == 2 {
        // Rows follow the first coordinate, columns the second.
        let header: Vec<String> = (1..=m).map(|j| j.to_string()).collect();
        let _ = writeln!(body, "i\\j,{}", header.join(","));
        for i in 0..m {
            let row: Vec<String> = (0..m).map(|j| map.values[i * m + j].to_string()).collect();
            let _ = writeln!(body, "{},{}", i + 1, row.join(","));
        }
    } else {
        let names: Vec<String> = (1..=grid.dims()).map(|a| format!("i{a}")).collect();
        let _ = writeln!(body, "{},correlation", names.join(","));
        let total = map.values.len();
        let mut coords = vec![1usize; grid.dims()];
        for (idx, v) in map.values.iter().enumerate() {
            let c: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(body, "{},{v}", c.join(","));
            if idx + 1 < total {
                for a in (0..coords.len()).rev() {
                    coords[a] += 1;
                    if coords[a] <= m {
                        break;
                    }
                    coords[a] = 1;
                }
            }
        }
    }
    if !map.undefined.is_empty() {
        eprintln!(
            "warning: {} sites with zero variance reported as NaN",
            map.undefined.len()
        );
    }
    write_text(out, &csv_with_preamble(&model_hash(&model), &body))
}

fn cmd_sample(
    model_path: &Path,
    count: usize,
    seed: u64,
    grid_points: usize,
    out: &Path,
    csv: Option<&Path>,
) -> Result<()> {
    let (model, _) = load_model(model_path)?;
    let drawn = sample(&model, count, seed, grid_points)?;
    let time = model.metadata.time.unwrap_or(0.0);
    let hash = model_hash(&model);
    let batch = TrajectoryBatch::from_parts(count, 1, drawn.d, drawn.samples, vec![time], None)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_trajectories(out, &batch, &hash, Some(model.basis().half_width))?;
    println!(
        "wrote {count} samples to {}; clipped negative mass fraction {:.3e}",
        out.display(),
        drawn.clipped_fraction
    );
    if let Some(path) = csv {
        let d = drawn.d;
        let names: Vec<String> = (1..=d).map(|v| format!("x{v}")).collect();
        let mut body = format!("{}\n", names.join(","));
        for row in batch.snapshot(0).chunks(d.max(1)) {
            let r: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(body, "{}", r.join(","));
        }
        write_text(Some(path), &csv_with_preamble(&hash, &body))?;
    }
    Ok(())
}

fn cmd_observable(model_path: &Path, which: ObservableArgs) -> Result<()> {
    let (model, _) = load_model(model_path)?;
    let d = model.d();
    let (label, obs) = if let Some(u) = which.mean {
        (format!("E[x{u}]"), Observable::Mean(to_zero_based(u, d)?))
    } else if let Some(u) = which.second {
        (format!("E[x{u}^2]"), Observable::Second(to_zero_based(u, d)?))
    } else if let Some(uv) = which.cross {
        if uv.len() != 2 {
            return Err(FhtError::InvalidParameter("--cross takes two variables".into()));
        }
        (
            format!("E[x{} x{}]", uv[0], uv[1]),
            Observable::Cross(to_zero_based(uv[0], d)?, to_zero_based(uv[1], d)?),
        )
    } else if let Some(path) = which.against {
        let (other, _) = load_model(&path)?;
        (format!("<p, {}>", path.display()), Observable::Model(Box::new(other)))
    } else {
        unreachable!("clap requires one observable")
    };
    println!("{label} = {}", estimate_observable(&model, &obs)?);
    Ok(())
}

fn cmd_solve(config: &RunConfig) -> Result<()> {
    let potential = config.potential()?;
    let batch = simulate(&potential, &config.sde)?;
    let hash = config.hash();
    let bound = config.basis.half_width;
    if wants(config, OutputFormat::Binary) {
        let path = output_path(config, None, "trajectories.fhtraj")?;
        save_trajectories(&path, &batch, &hash, Some(bound))?;
        println!("wrote {}", path.display());
    }
    let mut summary = String::from("snapshot,time,integral_before_normalization,clamped_entries,max_effective_rank\n");
    for j in 0..batch.num_snapshots() {
        let model = fit(config, &batch, j)?;
        let path = output_path(config, None, &format!("model_{}.fhtm", j + 1))?;
        save_model(&path, &model)?;
        report_model(&model, &path);
        let max_rank = model.bond_dims().into_iter().max().unwrap_or(0);
        let _ = writeln!(
            summary,
            "{},{},{},{},{max_rank}",
            j + 1,
            batch.recorded_times[j],
            model.metadata.integral_before_normalization.unwrap_or(f64::NAN),
            model.metadata.clamped_entries.unwrap_or(0),
        );
    }
    if wants(config, OutputFormat::Csv) {
        let path = output_path(config, None, "solve_summary.csv")?;
        write_text(Some(&path), &csv_with_preamble(&hash, &summary))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_verify(files: &[PathBuf], config: Option<&RunConfig>) -> Result<()> {
    let expected = config.map(RunConfig::hash);
    let mut failures = 0;
    for f in files {
        match verify_file(f, expected.as_deref()) {
            Ok(v) => {
                let status = match v.config_matches {
                    Some(false) => {
                        failures += 1;
                        "CONFIG MISMATCH"
                    }
                    _ => "OK",
                };
                println!(
                    "{status} {} ({} {}, config {})",
                    f.display(),
                    v.kind,
                    v.version,
                    v.config_hash.as_deref().unwrap_or("none")
                );
            }
            Err(e) => {
                failures += 1;
                println!("FAIL {}: {e}", f.display());
            }
        }
    }
    if failures > 0 {
        return Err(FhtError::Format(format!(
            "{failures} of {} files failed verification",
            files.len()
        )));
    }
    Ok(())
}
