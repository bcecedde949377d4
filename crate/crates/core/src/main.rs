use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use nlch_core::boundary::{direction_vector, geometric_ladder, lemma_integral_exponent, DirectionOptions, Frame, LemmaOptions};
use nlch_core::elliptic::{estimate_ratio, EllipticProblem};
use nlch_core::expr::Expr;
use nlch_core::io::config::Violation;
use nlch_core::io::output::write_jsonl;
use nlch_core::io::{load_config_with, read_snapshot, simulate, verify_trajectory, write_snapshot, ScenarioError, Snapshot, VerifyOptions};
use nlch_core::operator::{assemble_coupling, mean, project_mean_zero_mut, NormContext};
use nlch_core::{Grid, Kernel, NeumannLaplacian, State};

/// Nonlocal Cahn-Hilliard solver.
#[derive(Parser)]
#[command(name = "nlch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured scenario; writes diagnostics.csv, snapshots and meta.json.
    Simulate(SimulateArgs),
    /// Solve (θA + L)u = g for one or more θ.
    Elliptic(EllipticArgs),
    /// Boundary direction vector and the half-ball integral exponent.
    Boundary(BoundaryArgs),
    /// Certificates for a run directory.
    Verify(VerifyArgs),
    /// Audit kernel bounds and symmetry.
    CheckKernel(CheckKernelArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `initial.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.directory`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `scheme.dt`.
    #[arg(long)]
    dt: Option<f64>,
    /// Overrides `scheme.t_final`.
    #[arg(long)]
    t_final: Option<f64>,
    /// Overrides `scheme.theta_reg`.
    #[arg(long)]
    theta: Option<f64>,
}

#[derive(Args, Clone)]
struct KernelArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value = "homogeneous")]
    family: String,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Modulation g(x, y) for the modulated family.
    #[arg(long)]
    modulation: Option<String>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long = "C0")]
    big_c0: Option<f64>,
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Cells per axis, e.g. `128` or `32x32`.
    #[arg(long, default_value = "64")]
    cells: String,
    /// Extents per axis, e.g. `1` or `1x2`; defaults to unit length.
    #[arg(long)]
    extents: Option<String>,
}

#[derive(Args)]
struct EllipticArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Comma-separated θ values.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    theta: Vec<f64>,
    /// Right-hand side expression in x (x1, x2); its mean is removed.
    #[arg(long, conflicts_with = "g_snapshot")]
    g_expr: Option<String>,
    #[arg(long)]
    g_snapshot: Option<PathBuf>,
    #[arg(long, default_value = "elliptic_out")]
    output: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 4)]
    refinement: usize,
}

#[derive(Args)]
struct BoundaryArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// `center-face` or comma-separated coordinates on the boundary.
    #[arg(long, default_value = "center-face")]
    x0: String,
    /// Inward normal; inferred from the face containing `x0` when omitted.
    #[arg(long)]
    normal: Option<String>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    extents: Option<String>,
    /// `δmax:δmin:count`.
    #[arg(long, default_value = "0.1:0.025:3")]
    ladder: String,
    /// Exponent for the half-ball integral check.
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    #[arg(long, default_value_t = 8)]
    cells_per_delta: usize,
    #[arg(long, default_value_t = 4)]
    refinement: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long, default_value_t = 1e-12)]
    mass_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    energy_tol: f64,
    #[arg(long, default_value_t = 0.5)]
    identity_tol: f64,
}

#[derive(Args)]
struct CheckKernelArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Validation { message: String, violations: Vec<Violation> },
    Numerical(String),
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure::Validation { message: message.into(), violations: Vec::new() }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(c) => Failure::Validation { message: "invalid configuration".into(), violations: c.violations() },
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            e => invalid(e.to_string()),
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, sep: char, what: &str) -> Result<Vec<T>, Failure> {
    s.split(sep).map(|p| p.trim().parse::<T>().map_err(|_| invalid(format!("cannot parse {what} '{s}'")))).collect()
}

fn build_grid(args: &GridArgs) -> Result<Grid, Failure> {
    let cells: Vec<usize> = parse_list(&args.cells, 'x', "cells")?;
    let extents: Vec<f64> = match &args.extents {
        Some(e) => parse_list(e, 'x', "extents")?,
        None => vec![1.0; cells.len()],
    };
    Grid::new(&extents, &cells).map_err(|e| invalid(e.to_string()))
}

fn build_kernel(args: &KernelArgs) -> Result<Kernel, Failure> {
    let k = match args.family.as_str() {
        "homogeneous" => Kernel::homogeneous(args.alpha, args.amplitude),
        "modulated" => {
            let src = args.modulation.as_deref().ok_or_else(|| invalid("the modulated family needs --modulation"))?;
            let g = Expr::parse(src).map_err(|e| invalid(format!("--modulation: {e}")))?;
            let (lo, hi) = (args.c0.ok_or_else(|| invalid("--c0 is required"))?, args.big_c0.ok_or_else(|| invalid("--C0 is required"))?);
            Kernel::modulated(args.alpha, args.amplitude, g, lo, hi)
        }
        other => return Err(invalid(format!("unknown kernel family '{other}' (homogeneous, modulated)"))),
    };
    k.map_err(|e| invalid(e.to_string()))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let mut overrides: Vec<(&str, toml::Value)> = Vec::new();
    if let Some(s) = a.seed {
        overrides.push(("initial.seed", toml::Value::Integer(s as i64)));
    }
    if let Some(o) = &a.output {
        overrides.push(("output.directory", toml::Value::String(o.display().to_string())));
    }
    for (key, v) in [("scheme.dt", a.dt), ("scheme.t_final", a.t_final), ("scheme.theta_reg", a.theta)] {
        if let Some(v) = v {
            overrides.push((key, toml::Value::Float(v)));
        }
    }
    let cfg = load_config_with(&a.config, &overrides).map_err(ScenarioError::from)?;
    let summary = simulate(&cfg)?;
    println!("{}", serde_json::to_string(&summary).unwrap_or_default());
    Ok(())
}

fn cmd_elliptic(a: &EllipticArgs) -> Result<(), Failure> {
    let grid = build_grid(&a.grid)?;
    let kernel = build_kernel(&a.kernel)?;
    if grid.len() > nlch_core::operator::MAX_DENSE {
        return Err(invalid(format!("at most {} cells are supported", nlch_core::operator::MAX_DENSE)));
    }
    let mut g = match (&a.g_expr, &a.g_snapshot) {
        (_, Some(p)) => {
            let s = read_snapshot(p).map_err(|e| invalid(e.to_string()))?;
            s.check_grid(&grid).map_err(|e| invalid(e.to_string()))?;
            s.values
        }
        (Some(src), None) => {
            let e = Expr::parse(src).map_err(|e| invalid(format!("--g-expr: {e}")))?;
            grid.sample(|x| e.eval(x, &[]))
        }
        (None, None) => {
            let src = if grid.dim() == 1 { "cos(pi*x1)" } else { "cos(pi*x1) + 0.5*cos(2*pi*x2)" };
            let e = Expr::parse(src).expect("default right-hand side parses");
            grid.sample(|x| e.eval(x, &[]))
        }
    };
    let removed = mean(&g);
    project_mean_zero_mut(&mut g);
    if a.theta.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(invalid("--theta values must be nonnegative"));
    }
    let coupling = assemble_coupling(&grid, &kernel, a.refinement).map_err(|e| invalid(e.to_string()))?;
    let neumann = NeumannLaplacian::new(&grid);
    let norms = NormContext::new(&grid, kernel.alpha(), a.refinement).map_err(|e| invalid(e.to_string()))?;
    std::fs::create_dir_all(&a.output).map_err(|e| invalid(format!("{}: {e}", a.output.display())))?;
    let mut lines = Vec::new();
    for (i, &theta) in a.theta.iter().enumerate() {
        let problem = EllipticProblem::new(&coupling, &neumann, theta, g.clone(), a.tol).map_err(|e| invalid(e.to_string()))?;
        let sol = problem.solve().map_err(|e| Failure::Numerical(e.to_string()))?;
        let file = format!("u_{i:02}.nlch");
        let state = State::new(sol.u.clone(), 0.0).map_err(|e| Failure::Numerical(e.to_string()))?;
        write_snapshot(&a.output.join(&file), &Snapshot::new(&grid, &state, kernel.alpha(), 0)).map_err(|e| invalid(e.to_string()))?;
        let line = json!({
            "theta": theta,
            "method": sol.method,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "estimate_ratio": estimate_ratio(&norms, theta, &sol.u, &g),
            "g_mean_removed": removed,
            "snapshot": file,
        });
        println!("{line}");
        lines.push(line);
    }
    write_jsonl(&a.output.join("report.jsonl"), &lines).map_err(|e| invalid(e.to_string()))
}

fn inferred_normal(x0: &[f64], extents: &[f64]) -> Option<Vec<f64>> {
    let tol = 1e-12;
    for d in 0..x0.len() {
        let mut n = vec![0.0; x0.len()];
        if x0[d].abs() <= tol {
            n[d] = 1.0;
            return Some(n);
        }
        if (x0[d] - extents[d]).abs() <= tol {
            n[d] = -1.0;
            return Some(n);
        }
    }
    None
}

fn cmd_boundary(a: &BoundaryArgs) -> Result<(), Failure> {
    let kernel = build_kernel(&a.kernel)?;
    if !(1..=2).contains(&a.dim) {
        return Err(invalid("--dim must be 1 or 2"));
    }
    let extents: Vec<f64> = match &a.extents {
        Some(e) => parse_list(e, 'x', "extents")?,
        None => vec![1.0; a.dim],
    };
    if extents.len() != a.dim {
        return Err(invalid("--extents must have one entry per dimension"));
    }
    let frame = if a.x0 == "center-face" {
        let grid = Grid::new(&extents, &vec![4; a.dim]).map_err(|e| invalid(e.to_string()))?;
        Frame::center_face(&grid)
    } else {
        let x0: Vec<f64> = parse_list(&a.x0, ',', "--x0")?;
        if x0.len() != a.dim {
            return Err(invalid("--x0 must have one coordinate per dimension"));
        }
        let normal = match &a.normal {
            Some(n) => parse_list(n, ',', "--normal")?,
            None => inferred_normal(&x0, &extents).ok_or_else(|| invalid(format!("--x0 {:?} is not on the boundary", x0)))?,
        };
        Frame::new(&x0, &normal).map_err(|e| invalid(e.to_string()))?
    };
    let parts: Vec<&str> = a.ladder.split(':').collect();
    let [hi, lo, count] = parts.as_slice() else {
        return Err(invalid("--ladder must be δmax:δmin:count"));
    };
    let (hi, lo, count) = match (hi.parse::<f64>(), lo.parse::<f64>(), count.parse::<usize>()) {
        (Ok(h), Ok(l), Ok(c)) => (h, l, c),
        _ => return Err(invalid("--ladder must be δmax:δmin:count")),
    };
    let ladder = geometric_ladder(hi, lo, count).map_err(|e| invalid(e.to_string()))?;
    let opts = DirectionOptions { cells_per_delta: a.cells_per_delta, refinement: a.refinement, ..DirectionOptions::default() };
    let report = direction_vector(&kernel, &frame, &ladder, &opts).map_err(|e| invalid(e.to_string()))?;
    let lemma = match a.r {
        Some(r) => Some(lemma_integral_exponent(a.dim, r, &ladder, &LemmaOptions::default()).map_err(|e| invalid(e.to_string()))?),
        None => None,
    };
    let out = json!({
        "alpha": kernel.alpha(),
        "family": a.kernel.family,
        "x0": &frame.x0[..a.dim],
        "inward_normal": &frame.inward[..a.dim],
        "ladder": ladder,
        "direction": report,
        "lemma": lemma,
    });
    println!("{}", serde_json::to_string_pretty(&out).unwrap_or_default());
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), Failure> {
    let opts = VerifyOptions { mass_tol: a.mass_tol, energy_tol: a.energy_tol, identity_tol: a.identity_tol };
    let certs = verify_trajectory(Path::new(&a.trajectory), &opts)?;
    for c in &certs {
        println!("{}", serde_json::to_string(c).unwrap_or_default());
    }
    let failed: Vec<&str> = certs.iter().filter(|c| !c.pass).map(|c| c.check.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(invalid(format!("failed certificates: {}", failed.join(", "))))
    }
}

fn cmd_check_kernel(a: &CheckKernelArgs) -> Result<(), Failure> {
    let kernel = build_kernel(&a.kernel)?;
    let grid = build_grid(&a.grid)?;
    let report = kernel.verify_bounds(&grid, a.samples.max(1), a.seed);
    let derivative = kernel.derivative_spot_check(&grid, a.seed);
    let out = json!({
        "alpha": kernel.alpha(),
        "family": a.kernel.family,
        "bounds": kernel.bounds(),
        "samples": report.samples,
        "violations": report.violations.len(),
        "min_ratio": report.min_ratio,
        "max_ratio": report.max_ratio,
        "worst_ratio": report.worst_ratio,
        "derivative_bound": derivative,
        "first_violations": report.violations.iter().take(5).collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&out).unwrap_or_default());
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(invalid(format!("{} of {} samples violate the declared bounds", report.violations.len(), report.samples)))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Elliptic(a) => cmd_elliptic(a),
        Command::Boundary(a) => cmd_boundary(a),
        Command::Verify(a) => cmd_verify(a),
        Command::CheckKernel(a) => cmd_check_kernel(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation { message, violations }) => {
            eprintln!("{}", json!({ "status": "error", "kind": "validation", "message": message, "violations": violations }));
            ExitCode::from(1)
        }
        Err(Failure::Numerical(message)) => {
            eprintln!("{}", json!({ "status": "error", "kind": "numerical", "message": message }));
            ExitCode::from(2)
        }
    }
}
