//! Benchmark solution for `f = 1` on `(-1, 1)`, energy-norm errors and the convergence study.

use crate::assembly::{
    assemble_load, assemble_with, AssemblyError, AssemblyOptions, GalerkinSystem,
};
use crate::basis::{BasisError, DegreeRule, DofMap};
use crate::geomesh::{GeometricMesh, Interval, MeshError};
use crate::linsolve::{cholesky_solve, Solution, SolveError};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use std::io::{self, Write};
use std::time::{Duration, Instant};
use thiserror::Error;

/// First level of the least-squares slope window.
pub const SLOPE_WINDOW_START: usize = 4;

#[derive(Debug, Error)]
pub enum PostprocError {
    #[error("fractional order must lie in (0, 1), got {0}")]
    InvalidOrder(f64),
    #[error("x = {0} lies outside [-1, 1]")]
    OutsideDomain(f64),
    #[error("at least one level is required")]
    NoLevels,
    #[error("mesh construction failed for s = {s}, L = {layers}: {source}")]
    Mesh {
        s: f64,
        layers: usize,
        source: MeshError,
    },
    #[error("discrete space failed for s = {s}, L = {layers}: {source}")]
    Basis {
        s: f64,
        layers: usize,
        source: BasisError,
    },
    #[error("assembly failed for s = {s}, L = {layers}: {source}")]
    Assembly {
        s: f64,
        layers: usize,
        source: AssemblyError,
    },
    #[error("solve failed for s = {s}, L = {layers}: {source}")]
    Solve {
        s: f64,
        layers: usize,
        source: SolveError,
    },
    #[error("need at least two finite positive errors to fit a slope")]
    SlopeFit,
}

impl PostprocError {
    /// `(s, L)` of the failing study point, if any.
    pub fn study_point(&self) -> Option<(f64, usize)> {
        match *self {
            Self::Mesh { s, layers, .. }
            | Self::Basis { s, layers, .. }
            | Self::Assembly { s, layers, .. }
            | Self::Solve { s, layers, .. } => Some((s, layers)),
            _ => None,
        }
    }
}

fn check_order(s: f64) -> Result<(), PostprocError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(PostprocError::InvalidOrder(s));
    }
    Ok(())
}

/// `c_s = 2^(-2s) sqrt(pi) / (Gamma(s + 1/2) Gamma(1 + s))`.
pub fn solution_constant(s: f64) -> Result<f64, PostprocError> {
    check_order(s)?;
    let log = -2.0 * s * std::f64::consts::LN_2 + 0.5 * std::f64::consts::PI.ln()
        - ln_gamma(s + 0.5)
        - ln_gamma(1.0 + s);
    Ok(log.exp())
}

/// `u(x) = c_s (1 - x^2)^s`, the solution for `f = 1` on `(-1, 1)`.
pub fn exact_solution(s: f64, x: f64) -> Result<f64, PostprocError> {
    let c = solution_constant(s)?;
    if x.is_nan() || x.abs() > 1.0 {
        return Err(PostprocError::OutsideDomain(x));
    }
    Ok(c * (1.0 - x * x).powf(s))
}

/// `a(u, u) = int u = 2^(-2s) pi / (Gamma(s + 1/2) Gamma(s + 3/2))`.
pub fn exact_energy(s: f64) -> Result<f64, PostprocError> {
    check_order(s)?;
    let log = -2.0 * s * std::f64::consts::LN_2 + std::f64::consts::PI.ln()
        - ln_gamma(s + 0.5)
        - ln_gamma(s + 1.5);
    Ok(log.exp())
}

/// `sqrt(a(u, u) - a(u_N, u_N))`, clamped at zero.
pub fn energy_error(sol: &Solution, s: f64) -> Result<f64, PostprocError> {
    Ok((exact_energy(s)? - sol.energy).max(0.0).sqrt())
}

/// `sqrt(<1, u> - <1, u_N>)` with `<1, u_N> = c . b` for the system built with `f = 1`.
pub fn energy_error_load_form(
    system: &GalerkinSystem,
    sol: &Solution,
    s: f64,
) -> Result<f64, PostprocError> {
    Ok((exact_energy(s)? - sol.coeffs.dot(&system.load))
        .max(0.0)
        .sqrt())
}

/// Degree distribution used along a study; the degree follows the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    /// Degree `p = L` on every element.
    Uniform,
    /// Degree `p = L` inside, degree 1 on the boundary elements.
    Reduced,
}

impl RuleKind {
    pub fn rule(self, layers: usize) -> DegreeRule {
        let p = layers.max(1);
        match self {
            Self::Uniform => DegreeRule::Uniform(p),
            Self::Reduced => DegreeRule::Reduced(p),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Reduced => "reduced",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub s: f64,
    pub sigma: f64,
    pub layers: usize,
    pub rule: DegreeRule,
    pub n_dofs: usize,
    pub energy_error: f64,
    /// `sqrt(<1, u> - c . b)`, computed from the load vector instead of the energy.
    pub load_form_error: f64,
    pub discrete_energy: f64,
    pub symmetry_defect: f64,
    pub u_at_zero: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StudyOptions {
    pub assembly: AssemblyOptions,
    /// Run the study points on the current rayon pool.
    pub parallel_points: bool,
}

/// Galerkin solution of the benchmark on the reference interval.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub dofmap: DofMap,
    pub system: GalerkinSystem,
    pub solution: Solution,
}

pub fn solve_benchmark(
    s: f64,
    sigma: f64,
    layers: usize,
    rule: DegreeRule,
    options: &AssemblyOptions,
) -> Result<BenchmarkRun, PostprocError> {
    check_order(s)?;
    let mesh = GeometricMesh::new(Interval::reference(), sigma, layers)
        .map_err(|source| PostprocError::Mesh { s, layers, source })?;
    let dofmap =
        DofMap::new(&mesh, rule).map_err(|source| PostprocError::Basis { s, layers, source })?;
    let load = assemble_load(|_| 1.0, &mesh, &dofmap)
        .map_err(|source| PostprocError::Assembly { s, layers, source })?;
    let system = assemble_with(&mesh, &dofmap, s, options)
        .map_err(|source| PostprocError::Assembly { s, layers, source })?
        .with_load(load);
    let solution =
        cholesky_solve(&system).map_err(|source| PostprocError::Solve { s, layers, source })?;
    Ok(BenchmarkRun {
        dofmap,
        system,
        solution,
    })
}

fn study_point(
    s: f64,
    sigma: f64,
    layers: usize,
    kind: RuleKind,
    options: &StudyOptions,
) -> Result<ConvergenceRecord, PostprocError> {
    let start = Instant::now();
    let rule = kind.rule(layers);
    let run = solve_benchmark(s, sigma, layers, rule, &options.assembly)?;
    let energy_error = energy_error(&run.solution, s)?;
    let load_form_error = energy_error_load_form(&run.system, &run.solution, s)?;
    let u_at_zero = run
        .dofmap
        .eval(run.solution.coeffs.as_slice(), 0.0)
        .map_err(|source| PostprocError::Basis { s, layers, source })?;
    log::info!(
        "s = {s}, L = {layers}, N = {}, error = {energy_error:.6e}",
        run.system.dim()
    );
    Ok(ConvergenceRecord {
        s,
        sigma,
        layers,
        rule,
        n_dofs: run.system.dim(),
        energy_error,
        load_form_error,
        discrete_energy: run.solution.energy,
        symmetry_defect: run.system.asymmetry(),
        u_at_zero,
        wall_time: start.elapsed(),
    })
}

/// Runs `L = 1..=l_max` for every `s`, with degree `p = L`. Records come out in `(s, L)` order.
pub fn convergence_study(
    s_list: &[f64],
    sigma: f64,
    l_max: usize,
    kind: RuleKind,
    options: &StudyOptions,
) -> Result<Vec<ConvergenceRecord>, PostprocError> {
    if l_max < 1 {
        return Err(PostprocError::NoLevels);
    }
    for &s in s_list {
        check_order(s)?;
    }
    let points: Vec<(f64, usize)> = s_list
        .iter()
        .flat_map(|&s| (1..=l_max).map(move |l| (s, l)))
        .collect();
    let run = |&(s, l): &(f64, usize)| study_point(s, sigma, l, kind, options);
    if options.parallel_points {
        points.par_iter().map(run).collect()
    } else {
        points.iter().map(run).collect()
    }
}

/// Least-squares slope of `-ln(error)` against `L`.
pub fn decay_rate(points: &[(usize, f64)]) -> Result<f64, PostprocError> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| e.is_finite() && *e > 0.0)
        .map(|&(l, e)| (l as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(PostprocError::SlopeFit);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(-sxy / sxx)
}

/// Decay rate of the records for one `s` over `L >= SLOPE_WINDOW_START`.
pub fn study_decay_rate(records: &[ConvergenceRecord], s: f64) -> Result<f64, PostprocError> {
    let pts: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.s == s && r.layers >= SLOPE_WINDOW_START)
        .map(|r| (r.layers, r.energy_error))
        .collect();
    decay_rate(&pts)
}

/// `2 sigma^(L/2) / L`.
pub fn uniform_guide(sigma: f64, layers: usize) -> f64 {
    2.0 * sigma.powf(0.5 * layers as f64) / layers as f64
}

/// `0.22 sigma^(L/2)`.
pub fn reduced_guide(sigma: f64, layers: usize) -> f64 {
    0.22 * sigma.powf(0.5 * layers as f64)
}

pub const CSV_HEADER: &str = "s,sigma,L,rule,N,energy_error,discrete_energy,wall_ms";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvOptions {
    /// Write measured wall times; otherwise the column is 0 so output is reproducible.
    pub timing: bool,
    /// Append the `guide_uniform,guide_reduced` reference columns.
    pub guides: bool,
}

pub fn write_csv<W: Write + ?Sized>(
    out: &mut W,
    records: &[ConvergenceRecord],
    opts: CsvOptions,
) -> io::Result<()> {
    write!(out, "{CSV_HEADER}")?;
    if opts.guides {
        write!(out, ",guide_uniform,guide_reduced")?;
    }
    writeln!(out)?;
    for r in records {
        let ms = if opts.timing {
            r.wall_time.as_secs_f64() * 1e3
        } else {
            0.0
        };
        write!(
            out,
            "{:.16e},{:.16e},{},{},{},{:.16e},{:.16e},{:.16e}",
            r.s,
            r.sigma,
            r.layers,
            r.rule.name(),
            r.n_dofs,
            r.energy_error,
            r.discrete_energy,
            ms
        )?;
        if opts.guides {
            write!(
                out,
                ",{:.16e},{:.16e}",
                uniform_guide(r.sigma, r.layers),
                reduced_guide(r.sigma, r.layers)
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_jacobi;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    // int_{-1}^{1} c_s (1 - x^2)^s by Gauss-Jacobi with alpha = beta = s, which is exact
    fn energy_oracle(s: f64) -> f64 {
        let rule = gauss_jacobi(4, s, s).unwrap();
        let c = solution_constant(s).unwrap();
        rule.integrate(|_| c)
    }

    #[test]
    fn solution_values() {
        assert_relative_eq!(exact_solution(0.5, 0.0).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(exact_solution(0.5, 0.6).unwrap(), 0.8, epsilon = 1e-14);
        for &s in &[0.1, 0.5, 0.9] {
            assert_eq!(exact_solution(s, 1.0).unwrap(), 0.0);
            assert_eq!(exact_solution(s, -1.0).unwrap(), 0.0);
        }
        assert!(matches!(
            exact_solution(0.5, 1.5),
            Err(PostprocError::OutsideDomain(_))
        ));
        assert!(matches!(
            exact_solution(1.0, 0.0),
            Err(PostprocError::InvalidOrder(_))
        ));
    }

    #[test]
    fn energy_values() {
        assert_relative_eq!(exact_energy(0.5).unwrap(), PI / 2.0, max_relative = 1e-14);
        for &s in &[0.3, 0.5, 0.7] {
            assert_relative_eq!(
                exact_energy(s).unwrap(),
                energy_oracle(s),
                max_relative = 1e-13
            );
        }
        // adaptive mpmath integration of c_s (1 - x^2)^s at 30 digits
        assert_relative_eq!(
            exact_energy(0.3).unwrap(),
            1.911456987669394,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            exact_energy(0.7).unwrap(),
            1.17674300421738,
            max_relative = 1e-13
        );
    }

    #[test]
    fn zero_solution_error() {
        let sol = Solution {
            coeffs: nalgebra::DVector::zeros(3),
            residual_norm: 0.0,
            energy: 0.0,
        };
        assert_relative_eq!(
            energy_error(&sol, 0.4).unwrap(),
            exact_energy(0.4).unwrap().sqrt(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn error_formulas_agree() {
        let opts = AssemblyOptions::default();
        for &s in &[0.3, 0.7] {
            let run = solve_benchmark(s, 0.6, 3, DegreeRule::Uniform(3), &opts).unwrap();
            let e1 = energy_error(&run.solution, s).unwrap();
            let e2 = energy_error_load_form(&run.system, &run.solution, s).unwrap();
            assert_relative_eq!(e1, e2, max_relative = 1e-9);
        }
    }

    #[test]
    fn solution_symmetric() {
        let run =
            solve_benchmark(0.4, 0.6, 3, DegreeRule::Reduced(3), &Default::default()).unwrap();
        let map = run.dofmap.reflection();
        let c = &run.solution.coeffs;
        for (k, &m) in map.iter().enumerate() {
            assert!((c[k] - c[m]).abs() <= 1e-10 * c.amax());
        }
    }

    #[test]
    fn higher_degree_does_not_hurt() {
        for &s in &[0.3, 0.7] {
            let errs: Vec<f64> = (4..=6)
                .map(|p| {
                    let run =
                        solve_benchmark(s, 0.6, 4, DegreeRule::Uniform(p), &Default::default())
                            .unwrap();
                    energy_error(&run.solution, s).unwrap()
                })
                .collect();
            assert!(
                errs[1] <= errs[0] + 1e-12 && errs[2] <= errs[1] + 1e-12,
                "{errs:?}"
            );
        }
    }

    #[test]
    fn study_layout() {
        let recs =
            convergence_study(&[0.3, 0.6], 0.6, 2, RuleKind::Uniform, &Default::default()).unwrap();
        let keys: Vec<(f64, usize)> = recs.iter().map(|r| (r.s, r.layers)).collect();
        assert_eq!(keys, vec![(0.3, 1), (0.3, 2), (0.6, 1), (0.6, 2)]);
        // L = 1, p = 1: four elements, three interior vertices
        assert_eq!(recs[0].n_dofs, 3);
        assert!(matches!(
            convergence_study(&[0.5], 0.6, 0, RuleKind::Uniform, &Default::default()),
            Err(PostprocError::NoLevels)
        ));
    }

    #[test]
    fn parallel_points_match_serial() {
        let serial =
            convergence_study(&[0.5], 0.6, 3, RuleKind::Reduced, &Default::default()).unwrap();
        let opts = StudyOptions {
            parallel_points: true,
            ..Default::default()
        };
        let par = convergence_study(&[0.5], 0.6, 3, RuleKind::Reduced, &opts).unwrap();
        for (a, b) in serial.iter().zip(&par) {
            assert_eq!(a.energy_error.to_bits(), b.energy_error.to_bits());
        }
    }

    #[test]
    fn error_context() {
        let err = convergence_study(&[0.5], 1e-300, 2, RuleKind::Uniform, &Default::default());
        let err = err.unwrap_err();
        assert_eq!(err.study_point(), Some((0.5, 1)));
        assert!(err.to_string().contains("s = 0.5, L = 1"));
    }

    #[test]
    fn csv_format() {
        let recs =
            convergence_study(&[0.5], 0.6, 2, RuleKind::Uniform, &Default::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs, CsvOptions::default()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        let cols: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cols.len(), 8);
        assert_eq!(cols[2], "1");
        assert_eq!(cols[3], "uniform");
        assert_eq!(cols[7], "0.0000000000000000e0");
        let back: f64 = cols[5].parse().unwrap();
        assert_eq!(back.to_bits(), recs[0].energy_error.to_bits());
        let mut buf = Vec::new();
        write_csv(
            &mut buf,
            &recs,
            CsvOptions {
                guides: true,
                timing: false,
            },
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&format!("{CSV_HEADER},guide_uniform,guide_reduced\n")));
    }

    #[test]
    fn slope_of_exact_geometric_sequence() {
        let pts: Vec<(usize, f64)> = (4..=10)
            .map(|l| (l, 3.0 * 0.6f64.powf(l as f64 / 2.0)))
            .collect();
        assert_relative_eq!(
            decay_rate(&pts).unwrap(),
            -0.5 * 0.6f64.ln(),
            max_relative = 1e-12
        );
        assert!(decay_rate(&pts[..1]).is_err());
    }

    proptest! {
        #[test]
        fn solution_even_and_bounded(s in 0.05f64..0.95, x in -1.0f64..1.0) {
            let u = exact_solution(s, x).unwrap();
            prop_assert_eq!(u, exact_solution(s, -x).unwrap());
            prop_assert!(u >= 0.0 && u <= exact_solution(s, 0.0).unwrap());
        }

        #[test]
        fn energy_matches_oracle(s in 0.05f64..0.95) {
            let e = exact_energy(s).unwrap();
            prop_assert!((e - energy_oracle(s)).abs() <= 1e-12 * e);
        }
    }
}
