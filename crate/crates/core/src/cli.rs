//! Command-line front end. Every run is deterministic; see [`run`] for exit codes.

use crate::approx::{theorem2_interpolation_error, write_interp_csv, ApproxError, InterpRecord};
use crate::assembly::AssemblyOptions;
use crate::geomesh::{GeometricMesh, Interval};
use crate::postproc::{
    convergence_study, solve_benchmark, write_csv, ConvergenceRecord, CsvOptions, PostprocError,
    RuleKind, StudyOptions,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "FRAC_HP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "frac-hp",
    version,
    about = "hp-FEM for the 1D integral fractional Laplacian"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the f = 1 benchmark on one mesh and print its error record.
    Solve(SolveArgs),
    /// Energy-norm errors for L = 1..levels with p = L.
    Convergence(ConvergenceArgs),
    /// Weighted interpolation errors of the exact solution for L = p = 1..levels.
    InterpStudy(InterpArgs),
    /// Print the nodes of a geometric mesh.
    Mesh(MeshArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Rule {
    Uniform,
    Reduced,
}

impl From<Rule> for RuleKind {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Uniform => RuleKind::Uniform,
            Rule::Reduced => RuleKind::Reduced,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Fractional orders, comma separated.
    #[arg(
        long = "s",
        value_delimiter = ',',
        required = true,
        allow_negative_numbers = true
    )]
    s: Vec<f64>,
    /// Grading factor of the geometric mesh.
    #[arg(long, default_value_t = 0.6, allow_negative_numbers = true)]
    sigma: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for assembly (falls back to FRAC_HP_THREADS, then 1).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Number of geometric layers L.
    #[arg(long, default_value_t = 4, allow_negative_numbers = true)]
    levels: i64,
    #[arg(long, value_enum, default_value_t = Rule::Uniform)]
    rule: Rule,
    /// Polynomial degree; defaults to max(L, 1).
    #[arg(long)]
    degree: Option<usize>,
    /// Quadrature points per direction are p + offset.
    #[arg(long, default_value_t = 6)]
    quad_offset: usize,
    /// Also write PATH.stiffness.csv and PATH.load.csv next to --out.
    #[arg(long, requires = "out")]
    dump_matrix: bool,
    /// Report measured wall times instead of 0.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    /// Largest number of layers L_max.
    #[arg(long, default_value_t = 10, allow_negative_numbers = true)]
    levels: i64,
    #[arg(long, value_enum, default_value_t = Rule::Uniform)]
    rule: Rule,
    #[arg(long, default_value_t = 6)]
    quad_offset: usize,
    /// Report measured wall times instead of 0.
    #[arg(long)]
    timing: bool,
    /// Append the reference curves 2 sigma^(L/2)/L and 0.22 sigma^(L/2).
    #[arg(long)]
    guides: bool,
}

#[derive(Debug, Args)]
struct InterpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10, allow_negative_numbers = true)]
    levels: i64,
    /// Weight slack: beta' = 1 - s - eps_prime.
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    eps_prime: f64,
}

#[derive(Debug, Args)]
struct MeshArgs {
    #[arg(long, default_value_t = 0.6, allow_negative_numbers = true)]
    sigma: f64,
    #[arg(long, default_value_t = 2, allow_negative_numbers = true)]
    levels: i64,
    /// Left end of the domain.
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    a: f64,
    /// Right end of the domain.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    b: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("invalid value for {flag}: {message}")]
    Invalid { flag: &'static str, message: String },
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            Self::Invalid { .. } => EXIT_USAGE,
            Self::Numerical(_) | Self::Io { .. } => EXIT_NUMERICAL,
        }
    }
}

fn invalid(flag: &'static str, message: impl Into<String>) -> CliError {
    CliError::Invalid {
        flag,
        message: message.into(),
    }
}

fn check_orders(s: &[f64]) -> Result<(), CliError> {
    for &v in s {
        if !(v > 0.0 && v < 1.0) {
            return Err(invalid("--s", format!("{v} is not in (0, 1)")));
        }
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<(), CliError> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(invalid("--sigma", format!("{sigma} is not in (0, 1)")));
    }
    Ok(())
}

fn check_levels(levels: i64, min: i64) -> Result<usize, CliError> {
    if levels < min {
        return Err(invalid("--levels", format!("{levels} is below {min}")));
    }
    Ok(levels as usize)
}

fn check_offset(offset: usize) -> Result<(), CliError> {
    if offset == 0 {
        return Err(invalid("--quad-offset", "must be at least 1"));
    }
    Ok(())
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        if n == 0 {
            return Err(invalid("--threads", "must be at least 1"));
        }
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(invalid(
                "--threads",
                format!("{THREADS_ENV}={v} is not a positive integer"),
            )),
        },
        Err(_) => Ok(1),
    }
}

fn numerical(err: PostprocError) -> CliError {
    CliError::Numerical(err.to_string())
}

fn with_threads<T: Send>(
    threads: usize,
    job: impl FnOnce(bool) -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    if threads <= 1 {
        return job(false);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Numerical(format!("cannot start thread pool: {e}")))?;
    pool.install(|| job(true))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn emit(
    out: Option<&Path>,
    stdout: &mut dyn Write,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(io_err(path))?;
            let mut w = BufWriter::new(file);
            write(&mut w).map_err(io_err(path))?;
            w.flush().map_err(io_err(path))
        }
        None => match write(stdout) {
            // a closed reader (e.g. `| head`) is not a failure
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            r => r.map_err(|source| CliError::Io {
                path: "stdout".into(),
                source,
            }),
        },
    }
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:.16e}", m[(i, j)]))
            .collect();
        writeln!(w, "{}", row.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_vector(path: &Path, v: &DVector<f64>) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for x in v.iter() {
        writeln!(w, "{x:.16e}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn cmd_solve(args: SolveArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let c = &args.common;
    check_orders(&c.s)?;
    check_sigma(c.sigma)?;
    let levels = check_levels(args.levels, 0)?;
    check_offset(args.quad_offset)?;
    let threads = resolve_threads(c.threads)?;
    let p = args.degree.unwrap_or(levels.max(1));
    if p == 0 {
        return Err(invalid("--degree", "must be at least 1"));
    }
    let rule = match args.rule {
        Rule::Uniform => crate::basis::DegreeRule::Uniform(p),
        Rule::Reduced => crate::basis::DegreeRule::Reduced(p),
    };
    let s_list = c.s.clone();
    let sigma = c.sigma;
    let offset = args.quad_offset;
    let runs = with_threads(threads, move |parallel| {
        let opts = AssemblyOptions {
            quad_offset: offset,
            parallel,
            ..Default::default()
        };
        s_list
            .iter()
            .map(|&s| {
                let start = Instant::now();
                let run = solve_benchmark(s, sigma, levels, rule, &opts).map_err(numerical)?;
                Ok((s, run, start.elapsed()))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let mut records = Vec::with_capacity(runs.len());
    for (s, run, elapsed) in &runs {
        let energy_error = crate::postproc::energy_error(&run.solution, *s).map_err(numerical)?;
        let load_form_error =
            crate::postproc::energy_error_load_form(&run.system, &run.solution, *s)
                .map_err(numerical)?;
        let u_at_zero = run
            .dofmap
            .eval(run.solution.coeffs.as_slice(), 0.0)
            .map_err(|e| CliError::Numerical(format!("s = {s}, L = {levels}: {e}")))?;
        log::info!("s = {s}, L = {levels}: u_N(0) = {u_at_zero:.12e}");
        records.push(ConvergenceRecord {
            s: *s,
            sigma,
            layers: levels,
            rule,
            n_dofs: run.system.dim(),
            energy_error,
            load_form_error,
            discrete_energy: run.solution.energy,
            symmetry_defect: run.system.asymmetry(),
            u_at_zero,
            wall_time: *elapsed,
        });
    }
    let csv = CsvOptions {
        timing: args.timing,
        guides: false,
    };
    emit(c.out.as_deref(), stdout, |w| write_csv(w, &records, csv))?;
    if args.dump_matrix {
        // --out is enforced by the parser
        let base = c.out.as_deref().expect("--dump-matrix requires --out");
        for (i, (_, run, _)) in runs.iter().enumerate() {
            let tag = if runs.len() == 1 {
                String::new()
            } else {
                format!(".s{i}")
            };
            write_matrix(
                &sibling(base, &format!("{tag}.stiffness.csv")),
                &run.system.stiffness,
            )?;
            write_vector(&sibling(base, &format!("{tag}.load.csv")), &run.system.load)?;
        }
    }
    Ok(())
}

fn cmd_convergence(args: ConvergenceArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let c = &args.common;
    check_orders(&c.s)?;
    check_sigma(c.sigma)?;
    let levels = check_levels(args.levels, 1)?;
    check_offset(args.quad_offset)?;
    let threads = resolve_threads(c.threads)?;
    let (s_list, sigma, kind, offset) = (
        c.s.clone(),
        c.sigma,
        RuleKind::from(args.rule),
        args.quad_offset,
    );
    let records = with_threads(threads, move |parallel| {
        let opts = StudyOptions {
            assembly: AssemblyOptions {
                quad_offset: offset,
                parallel,
                ..Default::default()
            },
            parallel_points: parallel,
        };
        convergence_study(&s_list, sigma, levels, kind, &opts).map_err(numerical)
    })?;
    let csv = CsvOptions {
        timing: args.timing,
        guides: args.guides,
    };
    emit(c.out.as_deref(), stdout, |w| write_csv(w, &records, csv))
}

fn cmd_interp(args: InterpArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let c = &args.common;
    check_orders(&c.s)?;
    check_sigma(c.sigma)?;
    let levels = check_levels(args.levels, 1)?;
    resolve_threads(c.threads)?;
    for &s in &c.s {
        let bp = 1.0 - s - args.eps_prime;
        if !(args.eps_prime > 0.0 && (0.0..1.0).contains(&bp)) {
            return Err(invalid(
                "--eps-prime",
                format!("{} gives weight exponent {bp} for s = {s}", args.eps_prime),
            ));
        }
    }
    let mut records = Vec::new();
    for &s in &c.s {
        for l in 1..=levels {
            let weighted_error = theorem2_interpolation_error(s, c.sigma, l, l, args.eps_prime)
                .map_err(|e: ApproxError| {
                    CliError::Numerical(format!("interpolation failed for s = {s}, L = {l}: {e}"))
                })?;
            records.push(InterpRecord {
                p: l,
                layers: l,
                sigma: c.sigma,
                s,
                weighted_error,
            });
        }
    }
    emit(c.out.as_deref(), stdout, |w| write_interp_csv(w, &records))
}

fn cmd_mesh(args: MeshArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    check_sigma(args.sigma)?;
    let levels = check_levels(args.levels, 0)?;
    let domain = Interval::new(args.a, args.b).map_err(|e| invalid("--a/--b", e.to_string()))?;
    let mesh = GeometricMesh::new(domain, args.sigma, levels)
        .map_err(|e| invalid("--levels", e.to_string()))?;
    emit(args.out.as_deref(), stdout, |w| {
        writeln!(w, "node,x")?;
        for (i, x) in mesh.nodes().iter().enumerate() {
            writeln!(w, "{i},{x:.16e}")?;
        }
        Ok(())
    })
}

/// Runs the command line `argv` (program name first), writing results to `stdout` and
/// diagnostics to `stderr`. Returns 0 on success, 2 on usage or validation errors and 3 on
/// numerical or output failures.
pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a, stdout),
        Command::Convergence(a) => cmd_convergence(a, stdout),
        Command::InterpStudy(a) => cmd_interp(a, stdout),
        Command::Mesh(a) => cmd_mesh(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.code()
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    let code = run_with(argv, &mut out, &mut err);
    let _ = out.flush();
    code
}
