//! `tomo`: batch front-end for state generation, forward maps, reconstructions and λ shifts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tomo_core::forward::{
    sample_grid, AxisSpec, Coords, DistributionGrid, DistributionSpec, GridSpec, QuadratureDataset, RadialProfile,
    SampledProfile,
};
use tomo_core::lambda_tools::{lambda_from_quadratures, shift_lambda_forward, shift_lambda_inverse};
use tomo_core::recon_lambda::{
    check_integration_lambda, reconstruct_differentiation_full, reconstruct_integration_full, taylor_from_samples,
    taylor_from_state, DiffOptions,
};
use tomo_core::recon_quad::{reconstruct_finite, reconstruct_full};
use tomo_core::report::{ReconstructionReport, ReportFile};
use tomo_core::states::{self, read_state_json, DensityMatrix, ReadPolicy};
use tomo_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tomo", version, about = "Quantum state tomography from quadrature and λ-distribution data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StateKind {
    Fock,
    Coherent,
    Thermal,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Quadrature,
    Lambda,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    QuadFull,
    QuadFinite,
    LambdaInt,
    LambdaDiff,
    QFunction,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Forward,
    Inverse,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoordsArg {
    Cartesian,
    Polar,
}

#[derive(Subcommand)]
enum Command {
    /// Write a density matrix as JSON.
    #[command(allow_negative_numbers = true)]
    GenState {
        kind: StateKind,
        #[arg(long)]
        dim: usize,
        /// Photon number of a Fock state.
        #[arg(long, default_value_t = 0)]
        n: usize,
        /// Coherent amplitude as "re,im".
        #[arg(long, default_value = "0,0", allow_hyphen_values = true)]
        alpha: String,
        /// Thermal parameter λ in [0, 1).
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate quadrature densities or a λ-distribution of a state.
    #[command(allow_negative_numbers = true)]
    Forward {
        state: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        /// Number of equispaced angles (quadrature target).
        #[arg(long, default_value_t = 1)]
        angles: usize,
        /// "x0:x1:n" for quadratures, "a0:a1:n,b0:b1:n" for λ-distributions.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long, value_enum, default_value = "polar")]
        coords: CoordsArg,
        #[arg(long)]
        lambda: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a density matrix from a quadrature or λ-grid manifest.
    #[command(allow_negative_numbers = true)]
    Reconstruct {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        allow_lambda_override: bool,
        /// Ignore an embedded generating state and use the tabulated samples.
        #[arg(long)]
        use_samples: bool,
        /// Polynomial order of the Taylor fit on sampled data.
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Move a cartesian λ-grid to another λ.
    #[command(allow_negative_numbers = true)]
    ShiftLambda {
        manifest: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        lambda_prime: f64,
        #[arg(long, value_enum, default_value = "forward")]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a λ-distribution grid from quadrature data through the Markov kernel.
    #[command(allow_negative_numbers = true)]
    KernelBuild {
        manifest: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long, value_enum, default_value = "cartesian")]
        coords: CoordsArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a report against a reference state.
    Verify {
        report: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn coords(c: CoordsArg) -> Coords {
    match c {
        CoordsArg::Cartesian => Coords::Cartesian,
        CoordsArg::Polar => Coords::Polar,
    }
}

fn parse_complex(s: &str) -> Result<C64> {
    let parts: Vec<&str> = s.split(',').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Schema(format!("'{s}' is not \"re,im\"")));
    match parts.as_slice() {
        [re] => Ok(C64::new(num(re)?, 0.0)),
        [re, im] => Ok(C64::new(num(re)?, num(im)?)),
        _ => Err(Error::Schema(format!("'{s}' is not \"re,im\""))),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn gen_state(kind: StateKind, dim: usize, n: usize, alpha: &str, lambda: f64, seed: u64, out: &Path) -> Result<Value> {
    let rho = match kind {
        StateKind::Fock => states::fock_state(dim, n)?,
        StateKind::Coherent => states::coherent_state(dim, parse_complex(alpha)?)?,
        StateKind::Thermal => states::thermal_klambda_state(dim, lambda)?,
        StateKind::Random => states::random_state(dim, &mut ChaCha8Rng::seed_from_u64(seed))?,
    };
    rho.write_json(out)?;
    Ok(json!({ "state": out, "dim": dim }))
}

fn forward(
    state: &Path,
    target: Target,
    angles: usize,
    grid: &str,
    coords_arg: CoordsArg,
    lambda: Option<f64>,
    out: &Path,
) -> Result<Value> {
    create_dir(out)?;
    let (rho, _) = read_state_json(state, ReadPolicy::Reject)?;
    match target {
        Target::Quadrature => {
            let axis = AxisSpec::parse(grid)?;
            let ds = QuadratureDataset::equispaced(Arc::new(rho), angles)?;
            let path = ds.write(out, "quadrature", &axis)?;
            Ok(json!({ "manifest": path }))
        }
        Target::Lambda => {
            let l = lambda.ok_or_else(|| Error::Schema("--lambda is required for a λ-distribution".into()))?;
            let spec = DistributionSpec::Lambda { state: rho.to_json(), lambda: [l, 0.0] };
            let g = sample_grid(&spec, &GridSpec::parse(grid, coords(coords_arg))?)?;
            let path = g.write_with_manifest(out, "lambda")?;
            Ok(json!({ "manifest": path }))
        }
    }
}

fn manifest_kind(path: &Path) -> Result<String> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    v.get("kind")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Schema(format!("{}: manifest has no 'kind'", path.display())))
}

/// State and λ embedded by `forward --target lambda`, if any.
fn grid_generator(grid: &DistributionGrid) -> Result<Option<(DensityMatrix, f64)>> {
    match grid.meta.get("spec") {
        Some(v) => match serde_json::from_value::<DistributionSpec>(v.clone())? {
            DistributionSpec::Lambda { state, lambda } if lambda[1] == 0.0 => {
                Ok(Some((state.to_state(ReadPolicy::Reject)?.0, lambda[0])))
            }
            _ => Ok(None),
        },
        None => Ok(None),
    }
}

fn grid_lambda(grid: &DistributionGrid) -> Option<f64> {
    match grid.meta.get("spec").cloned().map(serde_json::from_value::<DistributionSpec>) {
        Some(Ok(DistributionSpec::Lambda { lambda, .. })) | Some(Ok(DistributionSpec::CoherentLambda { lambda, .. })) => {
            Some(lambda[0])
        }
        _ => grid.meta.get("lambda_to").and_then(Value::as_f64),
    }
}

/// Angular Fourier components `W_k(r) = (1/N) sum_j W(r, θ_j) e^{ikθ_j}` of a polar grid
/// whose angles are equispaced over a full turn.
fn polar_components(grid: &DistributionGrid, kmax: usize) -> Result<Vec<SampledProfile>> {
    if grid.coords != Coords::Polar {
        return Err(Error::Domain("sampled λ-reconstruction needs a polar (r, theta) grid".into()));
    }
    let mut thetas = grid.axis2.clone();
    if thetas.len() >= 2 && (thetas[thetas.len() - 1] - thetas[0] - 2.0 * PI).abs() < 1e-9 {
        thetas.pop();
    }
    let n = thetas.len();
    let step = 2.0 * PI / n as f64;
    if thetas.iter().enumerate().any(|(j, &t)| (t - thetas[0] - j as f64 * step).abs() > 1e-9) {
        return Err(Error::Domain("the theta axis must cover a full turn in equal steps".into()));
    }
    if n <= 2 * kmax {
        return Err(Error::Domain(format!("{n} angles cannot resolve angular index {kmax}")));
    }
    (0..=kmax)
        .map(|k| {
            let v: Vec<C64> = (0..grid.axis1.len())
                .map(|i| {
                    (0..n).map(|j| grid.values[(i, j)] * C64::from_polar(1.0, k as f64 * thetas[j])).sum::<C64>()
                        / n as f64
                })
                .collect();
            SampledProfile::new(k, grid.axis1.clone(), v)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn reconstruct(
    manifest: &Path,
    method: Method,
    dim: Option<usize>,
    lambda: Option<f64>,
    tol: Option<f64>,
    allow_override: bool,
    use_samples: bool,
    order: Option<usize>,
) -> Result<ReconstructionReport> {
    if let (Method::LambdaInt, Some(l)) = (method, lambda) {
        check_integration_lambda(l)?;
    }
    let opts = DiffOptions {
        tolerance: tol.unwrap_or(DiffOptions::default().tolerance),
        allow_override,
    };
    match method {
        Method::QuadFull | Method::QuadFinite => {
            if manifest_kind(manifest)? != "quadrature" {
                return Err(Error::Schema(format!("{} is not a quadrature manifest", manifest.display())));
            }
            let ds = Arc::new(QuadratureDataset::read(manifest, use_samples)?);
            if let Method::QuadFinite = method {
                return reconstruct_finite(ds);
            }
            let dim = dim.ok_or_else(|| Error::Schema("--dim is required for quad-full".into()))?;
            match ds.generator() {
                Some(rho) => {
                    let rho = rho.clone();
                    let mut r = reconstruct_full(|k| Ok(RadialProfile::Quadrature { rho: rho.clone(), k }), dim)?;
                    r.assumptions.push("components taken from the generating state embedded in the manifest".into());
                    Ok(r)
                }
                None => {
                    if ds.len() <= 2 * dim {
                        return Err(Error::Domain(format!(
                            "{} sampled angles cannot resolve components up to k = {}",
                            ds.len(),
                            dim - 1
                        )));
                    }
                    ds.equispaced_p()?;
                    reconstruct_full(|k| Ok(RadialProfile::FiniteAngle { dataset: ds.clone(), k }), dim)
                }
            }
        }
        Method::LambdaInt | Method::LambdaDiff | Method::QFunction => {
            if manifest_kind(manifest)? != "grid" {
                return Err(Error::Schema(format!("{} is not a grid manifest", manifest.display())));
            }
            let grid = DistributionGrid::read_manifest(manifest)?;
            let dim = dim.ok_or_else(|| Error::Schema("--dim is required".into()))?;
            let found = grid_lambda(&grid);
            let l = match (lambda, found) {
                (Some(a), Some(b)) if a != b => {
                    return Err(Error::Schema(format!("--lambda {a} disagrees with the grid's lambda {b}")))
                }
                (Some(a), _) | (None, Some(a)) => a,
                (None, None) => return Err(Error::Schema("--lambda is required: the grid does not record it".into())),
            };
            if let Method::QFunction = method {
                if l != 0.0 {
                    return Err(Error::Domain(format!("q-function reconstruction needs lambda = 0, got {l}")));
                }
            }
            let generator = if use_samples { None } else { grid_generator(&grid)? };
            match (method, generator) {
                (Method::LambdaInt, Some((rho, _))) => {
                    let rho = Arc::new(rho);
                    reconstruct_integration_full(
                        |k| Ok(RadialProfile::Lambda { rho: rho.clone(), lambda: C64::new(l, 0.0), k }),
                        l,
                        dim,
                    )
                }
                (Method::LambdaInt, None) => {
                    check_integration_lambda(l)?;
                    let comps = polar_components(&grid, dim - 1)?;
                    reconstruct_integration_full(|k| Ok(RadialProfile::Sampled(comps[k].clone())), l, dim)
                }
                (_, Some((rho, _))) => {
                    let coeffs = (0..dim)
                        .map(|k| taylor_from_state(&rho, l, k, 2 * dim.max(rho.dim())))
                        .collect::<Result<Vec<_>>>()?;
                    reconstruct_differentiation_full(&coeffs, dim, opts)
                }
                (_, None) => {
                    let comps = polar_components(&grid, dim - 1)?;
                    let coeffs = comps
                        .iter()
                        .map(|c| taylor_from_samples(c, l, order.unwrap_or(dim + 2)))
                        .collect::<Result<Vec<_>>>()?;
                    reconstruct_differentiation_full(&coeffs, dim, opts)
                }
            }
        }
    }
}

fn shift(manifest: &Path, lambda: f64, lambda_prime: f64, direction: Direction, out: &Path) -> Result<Value> {
    let grid = DistributionGrid::read_manifest(manifest)?;
    let r = match direction {
        Direction::Forward => shift_lambda_forward(&grid, lambda, lambda_prime)?,
        Direction::Inverse => shift_lambda_inverse(&grid, lambda_prime, lambda)?,
    };
    create_dir(out)?;
    let path = r.grid.write_with_manifest(out, "shifted")?;
    Ok(json!({
        "manifest": path,
        "interior": r.interior,
        "regularization_cutoff": r.cutoff,
        "discarded_frequencies": r.discarded_frequencies,
    }))
}

fn kernel_build(manifest: &Path, lambda: f64, grid: &str, coords_arg: CoordsArg, out: &Path) -> Result<Value> {
    let ds = QuadratureDataset::read(manifest, false)?;
    let angles = ds.angles().to_vec();
    let provider = |x: f64, theta: f64| -> Result<f64> {
        if let Some(rho) = ds.generator() {
            return tomo_core::forward::quad_density(rho, x, theta);
        }
        match angles.iter().position(|&a| (a - theta).abs() < 1e-9) {
            Some(t) => ds.density(t, x),
            None => Err(Error::Domain(format!(
                "the dataset has no quadrature at theta = {theta}; kernel-build needs {} equispaced angles or an \
                 embedded generating state",
                tomo_core::lambda_tools::THETA_POINTS
            ))),
        }
    };
    let g = lambda_from_quadratures(&provider, C64::new(lambda, 0.0), &GridSpec::parse(grid, coords(coords_arg))?)?;
    create_dir(out)?;
    let path = g.write_with_manifest(out, "kernel")?;
    Ok(json!({ "manifest": path }))
}

fn verify(report: &Path, reference: &Path) -> Result<Value> {
    let r: ReportFile = serde_json::from_str(&std::fs::read_to_string(report)?)?;
    let got = r.state.to_matrix()?;
    let (want, _) = read_state_json(reference, ReadPolicy::Warn)?;
    if got.nrows() != want.dim() {
        return Err(Error::Schema(format!(
            "report dim {} does not match reference dim {}",
            got.nrows(),
            want.dim()
        )));
    }
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..want.dim() {
        for j in 0..want.dim() {
            let (a, b) = (got[(i, j)], want.get(i, j));
            let e = (a - b).norm();
            worst = worst.max(e);
            rows.push(json!({ "row": i, "col": j, "got": [a.re, a.im], "want": [b.re, b.im], "abs_err": e }));
        }
    }
    Ok(json!({
        "method": r.method,
        "dim": want.dim(),
        "max_abs_error": worst,
        "advertised_tolerance": r.advertised_tolerance,
        "flags": r.flags.len(),
        "elements": rows,
    }))
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::GenState { kind, dim, n, alpha, lambda, seed, out } => gen_state(kind, dim, n, &alpha, lambda, seed, &out),
        Command::Forward { state, target, angles, grid, coords, lambda, out } => {
            forward(&state, target, angles, &grid, coords, lambda, &out)
        }
        Command::Reconstruct { manifest, method, dim, lambda, tol, allow_lambda_override, use_samples, order, out } => {
            let r = reconstruct(&manifest, method, dim, lambda, tol, allow_lambda_override, use_samples, order)?;
            r.write_json(&out)?;
            Ok(json!({
                "report": out,
                "method": r.method,
                "max_residual": r.max_residual(),
                "flags": r.flags.len(),
            }))
        }
        Command::ShiftLambda { manifest, lambda, lambda_prime, direction, out } => {
            shift(&manifest, lambda, lambda_prime, direction, &out)
        }
        Command::KernelBuild { manifest, lambda, grid, coords, out } => {
            kernel_build(&manifest, lambda, &grid, coords, &out)
        }
        Command::Verify { report, reference, out } => {
            let v = verify(&report, &reference)?;
            if let Some(out) = out {
                std::fs::write(out, serde_json::to_string_pretty(&v)?)?;
            }
            Ok(v)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("TOMO_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // a second initialization only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let v = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::from(2)
        }
    }
}
