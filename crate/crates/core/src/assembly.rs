//! Galerkin stiffness matrix and load vector for the fractional Laplacian on an interval.
//!
//! For functions vanishing outside `Omega = (a, b)` the bilinear form splits into
//!
//! ```text
//! a(u, v) = C(s)/2 int_Omega int_Omega (u(x)-u(z)) (v(x)-v(z)) / |x-z|^(1+2s) dz dx
//!         + C(s) int_Omega u(x) v(x) kappa(x) dx,
//! kappa(x) = ((x - a)^(-2s) + (b - x)^(-2s)) / (2s),
//! ```
//!
//! which removes every integral over the unbounded complement. The double integral is summed
//! over element pairs `i <= j`; since `u(x) - u(z)` vanishes on the diagonal, each pair
//! integrand is a smooth function times `|x - z|^(1-2s)` and is handled by
//! [`pair_quadrature`].

use crate::basis::{BasisError, DegreeRule, DofMap};
use crate::geomesh::{GeometricMesh, Interval};
use crate::quadrature::{
    classify_pair, gauss_jacobi, gauss_legendre, pair_quadrature, QuadratureError,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("fractional order must lie in (0, 1), got {0}")]
    InvalidOrder(f64),
    #[error("complement weight is unbounded at the boundary point {0}")]
    OnBoundary(f64),
    #[error("dof map was built on a different mesh")]
    MeshMismatch,
    #[error("non-finite stiffness entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("load function returned {value} at x = {x}")]
    NonFiniteLoad { x: f64, value: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

fn check_order(s: f64) -> Result<(), AssemblyError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(AssemblyError::InvalidOrder(s));
    }
    Ok(())
}

/// Normalisation constant `C(s) = -2^(2s) Gamma(s + 1/2) / (pi^(1/2) Gamma(-s))`.
///
/// `Gamma(-s)` is eliminated with the reflection formula
/// `Gamma(-s) = -pi / (sin(pi s) Gamma(1 + s))`.
pub fn kernel_constant(s: f64) -> Result<f64, AssemblyError> {
    check_order(s)?;
    let pi = std::f64::consts::PI;
    let log = 2.0 * s * std::f64::consts::LN_2 + ln_gamma(s + 0.5) + ln_gamma(1.0 + s);
    Ok(log.exp() * (pi * s).sin() / pi.powf(1.5))
}

/// `kappa(x) = int_{R \ Omega} |x - z|^(-1-2s) dz` for `x` strictly inside `domain`.
pub fn complement_weight(domain: Interval, s: f64, x: f64) -> Result<f64, AssemblyError> {
    check_order(s)?;
    if !(x > domain.a && x < domain.b) {
        return Err(AssemblyError::OnBoundary(x));
    }
    Ok(((x - domain.a).powf(-2.0 * s) + (domain.b - x).powf(-2.0 * s)) / (2.0 * s))
}

/// Quadrature settings for assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    /// Points per direction are `p + quad_offset`, `p` the largest degree of the pair.
    pub quad_offset: usize,
    /// Evaluate element pairs on the current rayon pool.
    pub parallel: bool,
    /// Replaces `C(s)` when set.
    pub kernel_constant: Option<f64>,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            quad_offset: 6,
            parallel: false,
            kernel_constant: None,
        }
    }
}

/// Identifies the discrete space a system was built on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub domain: Interval,
    pub sigma: f64,
    pub layers: usize,
    pub rule: DegreeRule,
}

/// Dense symmetric stiffness matrix and load vector.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    pub stiffness: DMatrix<f64>,
    pub load: DVector<f64>,
    pub s: f64,
    pub provenance: Provenance,
}

impl GalerkinSystem {
    pub fn dim(&self) -> usize {
        self.load.len()
    }

    pub fn with_load(mut self, load: DVector<f64>) -> Self {
        assert_eq!(load.len(), self.stiffness.nrows());
        self.load = load;
        self
    }

    /// `max |A - A^T| / max |A|`.
    pub fn asymmetry(&self) -> f64 {
        let a = &self.stiffness;
        let scale = a.amax();
        if scale == 0.0 {
            return 0.0;
        }
        (a - a.transpose()).amax() / scale
    }
}

/// Contribution of one element pair (or one element) to the global matrix.
struct LocalBlock {
    dofs: Vec<usize>,
    values: Vec<f64>,
}

impl LocalBlock {
    fn new(dofs: Vec<usize>) -> Self {
        let m = dofs.len();
        Self {
            dofs,
            values: vec![0.0; m * m],
        }
    }

    /// `values[a, b] += w psi_a psi_b` on the upper triangle.
    fn add_outer(&mut self, w: f64, psi: &[f64]) {
        let m = self.dofs.len();
        for a in 0..m {
            let wa = w * psi[a];
            let row = &mut self.values[a * m..(a + 1) * m];
            for b in a..m {
                row[b] += wa * psi[b];
            }
        }
    }

    fn finish(&mut self, scale: f64) {
        let m = self.dofs.len();
        for a in 0..m {
            for b in a..m {
                let v = self.values[a * m + b] * scale;
                self.values[a * m + b] = v;
                self.values[b * m + a] = v;
            }
        }
    }
}

/// Double-integral contribution of the pair `(i, j)`, `i <= j`.
fn pair_block(
    dofmap: &DofMap,
    i: usize,
    j: usize,
    s: f64,
    constant: f64,
    offset: usize,
) -> Result<LocalBlock, AssemblyError> {
    let mesh = dofmap.mesh();
    let (ti, tj) = (mesh.element(i), mesh.element(j));
    let (basis_i, basis_j) = (dofmap.element_basis(i), dofmap.element_basis(j));
    // (global dof, local index on T_i, local index on T_j)
    let mut entries: Vec<(usize, Option<usize>, Option<usize>)> = Vec::new();
    for (k, dof) in dofmap.local_dofs(i).iter().enumerate() {
        if let Some(g) = *dof {
            entries.push((g, Some(k), if i == j { Some(k) } else { None }));
        }
    }
    if i != j {
        for (k, dof) in dofmap.local_dofs(j).iter().enumerate() {
            if let Some(g) = *dof {
                match entries.iter_mut().find(|e| e.0 == g) {
                    Some(entry) => entry.2 = Some(k),
                    None => entries.push((g, None, Some(k))),
                }
            }
        }
    }
    let mut block = LocalBlock::new(entries.iter().map(|e| e.0).collect());
    if entries.is_empty() {
        return Ok(block);
    }
    let class = classify_pair(mesh, i, j)?;
    let n = basis_i.degree().max(basis_j.degree()) + offset;
    let rule = pair_quadrature(class, &ti, &tj, s, n)?;

    let mut vx = vec![0.0; basis_i.degree() + 1];
    let mut vz = vec![0.0; basis_j.degree() + 1];
    let mut psi = vec![0.0; entries.len()];
    for pt in &rule.points {
        basis_i.eval_all(pt.ref_x, &mut vx);
        basis_j.eval_all(pt.ref_z, &mut vz);
        let inv = 1.0 / pt.diff;
        for (slot, &(_, kx, kz)) in psi.iter_mut().zip(&entries) {
            let ux = kx.map_or(0.0, |k| vx[k]);
            let uz = kz.map_or(0.0, |k| vz[k]);
            *slot = (ux - uz) * inv;
        }
        block.add_outer(pt.weight, &psi);
    }
    // (T_j, T_i) contributes the same as (T_i, T_j)
    let multiplicity = if i == j { 1.0 } else { 2.0 };
    block.finish(0.5 * constant * multiplicity);
    Ok(block)
}

/// `C(s) int_T phi_k phi_l kappa` on element `e`.
///
/// On an element touching the boundary both shape functions vanish at the boundary point, so
/// `phi_k phi_l (x - a)^(-2s) = (x - a)^(2-2s) m_k m_l` with polynomial `m_k`; the factor
/// `(x - a)^(2-2s)` becomes a Jacobi weight.
fn complement_block(
    dofmap: &DofMap,
    e: usize,
    s: f64,
    constant: f64,
    offset: usize,
) -> Result<LocalBlock, AssemblyError> {
    let mesh = dofmap.mesh();
    let domain = mesh.domain();
    let el = mesh.element(e);
    let basis = dofmap.element_basis(e);
    let p = basis.degree();
    let locals: Vec<(usize, usize)> = dofmap
        .local_dofs(e)
        .iter()
        .enumerate()
        .filter_map(|(k, d)| d.map(|g| (k, g)))
        .collect();
    let mut block = LocalBlock::new(locals.iter().map(|&(_, g)| g).collect());
    if locals.is_empty() {
        return Ok(block);
    }
    let n = p + offset;
    let half = 0.5 * el.length();
    let mut vals = vec![0.0; p + 1];
    let mut psi = vec![0.0; locals.len()];
    let two_s = 2.0 * s;

    let touches_left = el.a == domain.a;
    let touches_right = el.b == domain.b;

    // singular part(s): endpoint terms of kappa on boundary elements
    for (touch, at_left) in [(touches_left, true), (touches_right, false)] {
        if !touch {
            continue;
        }
        // weight (1 + t)^(2-2s) at the left end, (1 - t)^(2-2s) at the right end
        let rule = if at_left {
            gauss_jacobi(n, 0.0, 2.0 - two_s)?
        } else {
            gauss_jacobi(n, 2.0 - two_s, 0.0)?
        };
        // (x - a) = half (1 + t); dx = half dt
        let scale = half.powf(1.0 - two_s) / two_s;
        for (t, w) in rule.iter() {
            basis.eval_all(t, &mut vals);
            let factor = if at_left { 1.0 + t } else { 1.0 - t };
            for (slot, &(k, _)) in psi.iter_mut().zip(&locals) {
                *slot = vals[k] / factor;
            }
            block.add_outer(w * scale, &psi);
        }
    }

    // remaining smooth part of kappa
    let gl = gauss_legendre(n)?;
    for (t, w) in gl.iter() {
        let x = el.from_reference(t);
        let mut kappa = 0.0;
        if !touches_left {
            kappa += (x - domain.a).powf(-two_s);
        }
        if !touches_right {
            kappa += (domain.b - x).powf(-two_s);
        }
        if kappa == 0.0 {
            continue;
        }
        kappa /= two_s;
        basis.eval_all(t, &mut vals);
        for (slot, &(k, _)) in psi.iter_mut().zip(&locals) {
            *slot = vals[k];
        }
        block.add_outer(w * half * kappa, &psi);
    }
    block.finish(constant);
    Ok(block)
}

/// Assembles the stiffness matrix with default quadrature settings. The load vector of the
/// returned system is zero; see [`assemble_load`].
pub fn assemble(
    mesh: &GeometricMesh,
    dofmap: &DofMap,
    s: f64,
) -> Result<GalerkinSystem, AssemblyError> {
    assemble_with(mesh, dofmap, s, &AssemblyOptions::default())
}

pub fn assemble_with(
    mesh: &GeometricMesh,
    dofmap: &DofMap,
    s: f64,
    options: &AssemblyOptions,
) -> Result<GalerkinSystem, AssemblyError> {
    check_order(s)?;
    if dofmap.mesh() != mesh {
        return Err(AssemblyError::MeshMismatch);
    }
    let constant = match options.kernel_constant {
        Some(c) => c,
        None => kernel_constant(s)?,
    };
    let n_el = mesh.num_elements();
    let offset = options.quad_offset;
    let pairs: Vec<(usize, usize)> = (0..n_el)
        .flat_map(|i| (i..n_el).map(move |j| (i, j)))
        .collect();

    let compute = |&(i, j): &(usize, usize)| pair_block(dofmap, i, j, s, constant, offset);
    let pair_blocks: Vec<LocalBlock> = if options.parallel {
        pairs.par_iter().map(compute).collect::<Result<_, _>>()?
    } else {
        pairs.iter().map(compute).collect::<Result<_, _>>()?
    };
    let complement = |e: usize| complement_block(dofmap, e, s, constant, offset);
    let element_blocks: Vec<LocalBlock> = if options.parallel {
        (0..n_el)
            .into_par_iter()
            .map(complement)
            .collect::<Result<_, _>>()?
    } else {
        (0..n_el).map(complement).collect::<Result<_, _>>()?
    };

    // fixed scatter order keeps serial and parallel results bitwise identical
    let n = dofmap.n_dofs();
    let mut stiffness = DMatrix::<f64>::zeros(n, n);
    for block in pair_blocks.iter().chain(&element_blocks) {
        let m = block.dofs.len();
        for (a, &ga) in block.dofs.iter().enumerate() {
            for (b, &gb) in block.dofs.iter().enumerate() {
                stiffness[(ga, gb)] += block.values[a * m + b];
            }
        }
    }
    for col in 0..n {
        for row in 0..n {
            if !stiffness[(row, col)].is_finite() {
                return Err(AssemblyError::NonFiniteEntry { row, col });
            }
        }
    }
    Ok(GalerkinSystem {
        stiffness,
        load: DVector::zeros(n),
        s,
        provenance: Provenance {
            domain: mesh.domain(),
            sigma: mesh.sigma(),
            layers: mesh.layers(),
            rule: dofmap.rule(),
        },
    })
}

/// `b_k = int_Omega f phi_k` with `p + 6` Gauss-Legendre points per element.
pub fn assemble_load<F: Fn(f64) -> f64>(
    f: F,
    mesh: &GeometricMesh,
    dofmap: &DofMap,
) -> Result<DVector<f64>, AssemblyError> {
    assemble_load_with(f, mesh, dofmap, 6)
}

pub fn assemble_load_with<F: Fn(f64) -> f64>(
    f: F,
    mesh: &GeometricMesh,
    dofmap: &DofMap,
    quad_offset: usize,
) -> Result<DVector<f64>, AssemblyError> {
    if dofmap.mesh() != mesh {
        return Err(AssemblyError::MeshMismatch);
    }
    let mut load = DVector::zeros(dofmap.n_dofs());
    for e in 0..mesh.num_elements() {
        let el = mesh.element(e);
        let basis = dofmap.element_basis(e);
        let p = basis.degree();
        let gl = gauss_legendre(p + quad_offset)?;
        let mut vals = vec![0.0; p + 1];
        let half = 0.5 * el.length();
        for (t, w) in gl.iter() {
            let x = el.from_reference(t);
            let value = f(x);
            if !value.is_finite() {
                return Err(AssemblyError::NonFiniteLoad { x, value });
            }
            basis.eval_all(t, &mut vals);
            for (k, dof) in dofmap.local_dofs(e).iter().enumerate() {
                if let Some(g) = *dof {
                    load[g] += w * half * value * vals[k];
                }
            }
        }
    }
    Ok(load)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomesh::Interval;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn reference_mesh(layers: usize) -> GeometricMesh {
        GeometricMesh::new(Interval::reference(), 0.6, layers).unwrap()
    }

    #[test]
    fn kernel_constant_values() {
        assert_relative_eq!(
            kernel_constant(0.5).unwrap(),
            std::f64::consts::FRAC_1_PI,
            max_relative = 1e-14
        );
        for s in [0.01, 0.3, 0.7, 0.99] {
            let c = kernel_constant(s).unwrap();
            assert!(c.is_finite() && c > 0.0);
        }
        assert_eq!(kernel_constant(0.0), Err(AssemblyError::InvalidOrder(0.0)));
        assert!(kernel_constant(1.0).is_err());
    }

    #[test]
    fn complement_weight_values() {
        let d = Interval::reference();
        assert_abs_diff_eq!(
            complement_weight(d, 0.5, 0.0).unwrap(),
            2.0,
            epsilon = 1e-15
        );
        for s in [0.1, 0.3, 0.7, 0.9] {
            assert_relative_eq!(
                complement_weight(d, s, 0.0).unwrap(),
                1.0 / s,
                max_relative = 1e-14
            );
        }
        // monotone blow-up towards the boundary
        let mut prev = 0.0;
        for k in 1..12 {
            let x = -1.0 + 10f64.powi(-k);
            let w = complement_weight(d, 0.3, x).unwrap();
            assert!(w > prev);
            prev = w;
        }
        assert_eq!(
            complement_weight(d, 0.3, -1.0),
            Err(AssemblyError::OnBoundary(-1.0))
        );
    }

    #[test]
    fn complement_weight_matches_truncated_integral() {
        // dyadic panels [2^k, 2^(k+1)] out to 2^80 on both sides of the domain
        let d = Interval::reference();
        let gl = gauss_legendre(20).unwrap();
        for &(s, x) in &[(0.5, 0.0), (0.3, 0.2), (0.7, -0.6)] {
            let mut total = 0.0;
            for k in 0..80 {
                let (lo, hi) = (2f64.powi(k), 2f64.powi(k + 1));
                total += gl.integrate_on(lo, hi, |z| (z - x).powf(-1.0 - 2.0 * s));
                total += gl.integrate_on(lo, hi, |z| (z + x).powf(-1.0 - 2.0 * s));
            }
            assert_relative_eq!(
                complement_weight(d, s, x).unwrap(),
                total,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn single_hat_load() {
        let mesh = reference_mesh(0);
        let dm = DofMap::new(&mesh, DegreeRule::Uniform(1)).unwrap();
        let b = assemble_load(|_| 1.0, &mesh, &dm).unwrap();
        assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-15);
        let zero = assemble_load(|_| 0.0, &mesh, &dm).unwrap();
        assert_eq!(zero[0], 0.0);
        assert!(matches!(
            assemble_load(|x| 1.0 / x.abs().min(0.0), &mesh, &dm),
            Err(AssemblyError::NonFiniteLoad { .. })
        ));
    }

    #[test]
    fn odd_load_is_antisymmetric() {
        let mesh = reference_mesh(3);
        let dm = DofMap::new(&mesh, DegreeRule::Uniform(4)).unwrap();
        let b = assemble_load(|x| x, &mesh, &dm).unwrap();
        let refl = dm.reflection();
        for g in 0..dm.n_dofs() {
            assert_abs_diff_eq!(b[refl[g]], -b[g], epsilon = 1e-15);
        }
    }

    #[test]
    fn symmetric_and_scales_linearly() {
        let mesh = reference_mesh(2);
        let dm = DofMap::new(&mesh, DegreeRule::Uniform(3)).unwrap();
        let sys = assemble(&mesh, &dm, 0.3).unwrap();
        assert_eq!(sys.asymmetry(), 0.0);
        let c = kernel_constant(0.3).unwrap();
        let opts = AssemblyOptions {
            kernel_constant: Some(2.0 * c),
            ..Default::default()
        };
        let doubled = assemble_with(&mesh, &dm, 0.3, &opts).unwrap();
        for (a, b) in sys.stiffness.iter().zip(doubled.stiffness.iter()) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-14);
        }
    }

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let mesh = reference_mesh(4);
        let dm = DofMap::new(&mesh, DegreeRule::Reduced(4)).unwrap();
        let serial = assemble(&mesh, &dm, 0.7).unwrap();
        let opts = AssemblyOptions {
            parallel: true,
            ..Default::default()
        };
        let parallel = assemble_with(&mesh, &dm, 0.7, &opts).unwrap();
        assert_eq!(serial.stiffness, parallel.stiffness);
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let mesh = reference_mesh(2);
        let other = reference_mesh(3);
        let dm = DofMap::new(&other, DegreeRule::Uniform(2)).unwrap();
        assert!(matches!(
            assemble(&mesh, &dm, 0.5),
            Err(AssemblyError::MeshMismatch)
        ));
        let dm = DofMap::new(&mesh, DegreeRule::Uniform(2)).unwrap();
        assert!(matches!(
            assemble(&mesh, &dm, 1.5),
            Err(AssemblyError::InvalidOrder(_))
        ));
    }

    #[test]
    fn entries_continuous_in_order() {
        let mesh = reference_mesh(2);
        let dm = DofMap::new(&mesh, DegreeRule::Uniform(3)).unwrap();
        let mats: Vec<_> = [0.49, 0.5, 0.51]
            .iter()
            .map(|&s| assemble(&mesh, &dm, s).unwrap().stiffness)
            .collect();
        let scale = mats[1].amax();
        for ((a, b), c) in mats[0].iter().zip(mats[1].iter()).zip(mats[2].iter()) {
            let m = a.abs().max(b.abs()).max(c.abs()).max(1e-3 * scale);
            // entries drift by up to ~11% per 0.01 in s through C(s), h^{1-2s}, kappa
            assert!((a - b).abs() / m <= 0.15, "left jump {a} {b}");
            assert!((b - c).abs() / m <= 0.15, "right jump {b} {c}");
            // no kink or offset at s = 1/2
            let second = (a - 2.0 * b + c).abs();
            assert!(
                second <= 0.25 * (a - c).abs() + 1e-6 * scale,
                "kink {a} {b} {c}"
            );
        }
    }

    #[test]
    fn entries_continuous_coarse_mesh() {
        let mesh = reference_mesh(0);
        let dm = DofMap::new(&mesh, DegreeRule::Uniform(1)).unwrap();
        let a = assemble(&mesh, &dm, 0.49).unwrap().stiffness;
        let b = assemble(&mesh, &dm, 0.5).unwrap().stiffness;
        let c = assemble(&mesh, &dm, 0.51).unwrap().stiffness;
        let scale = b.amax();
        for ((x, y), z) in a.iter().zip(b.iter()).zip(c.iter()) {
            let m = x.abs().max(y.abs()).max(1e-3 * scale);
            assert!((x - y).abs() / m <= 0.05);
            assert!((y - z).abs() / m <= 0.05);
        }
    }
}
