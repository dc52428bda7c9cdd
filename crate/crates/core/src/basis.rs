//! Nodal shape functions on Gauss-Lobatto points and the global dof map for
//! continuous piecewise polynomials with zero boundary trace.

use crate::geomesh::{GeometricMesh, MeshError};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("polynomial degree must be at least 1, got {0}")]
    InvalidDegree(usize),
    #[error("Gauss-Lobatto Newton iteration for degree {degree} did not converge (residual {residual:e})")]
    NoConvergence { degree: usize, residual: f64 },
    #[error("coefficient vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Legendre polynomial `P_n(x)` by the three-term recurrence.
pub fn legendre_eval(n: usize, x: f64) -> f64 {
    legendre_with_derivatives(n, x).0
}

/// `(P_n(x), P_n'(x), P_n''(x))`.
///
/// Derivatives use `P'_{k+1} = P'_{k-1} + (2k+1) P_k`, which stays finite at `x = +-1`.
pub(crate) fn legendre_with_derivatives(n: usize, x: f64) -> (f64, f64, f64) {
    if n == 0 {
        return (1.0, 0.0, 0.0);
    }
    // (value, first, second) for degrees k-1 and k
    let (mut p0, mut d0, mut dd0) = (1.0, 0.0, 0.0);
    let (mut p1, mut d1, mut dd1) = (x, 1.0, 0.0);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        let d2 = d0 + (2.0 * kf + 1.0) * p1;
        let dd2 = dd0 + (2.0 * kf + 1.0) * d1;
        (p0, d0, dd0) = (p1, d1, dd1);
        (p1, d1, dd1) = (p2, d2, dd2);
    }
    (p1, d1, dd1)
}

/// The `p + 1` Gauss-Lobatto nodes on `[-1, 1]`: the endpoints and the roots of `P_p'`.
pub fn gauss_lobatto_nodes(p: usize) -> Result<Vec<f64>, BasisError> {
    if p == 0 {
        return Err(BasisError::InvalidDegree(p));
    }
    let mut nodes = vec![0.0; p + 1];
    nodes[0] = -1.0;
    nodes[p] = 1.0;
    let scale = (p * (p + 1)) as f64 / 2.0; // P_p'(1)
    #[allow(clippy::needless_range_loop)]
    for j in 1..p {
        // Chebyshev-Gauss-Lobatto initial guess
        let mut x = -(std::f64::consts::PI * j as f64 / p as f64).cos();
        for _ in 0..100 {
            let (_, d, dd) = legendre_with_derivatives(p, x);
            let dx = d / dd;
            x -= dx;
            if dx.abs() <= 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
        let residual = legendre_with_derivatives(p, x).1.abs();
        if residual > 1e-14 * scale {
            return Err(BasisError::NoConvergence {
                degree: p,
                residual,
            });
        }
        nodes[j] = x;
    }
    // exact antisymmetry
    for j in 1..=(p - 1) / 2 {
        let half = 0.5 * (nodes[p - j] - nodes[j]);
        nodes[j] = -half;
        nodes[p - j] = half;
    }
    if p.is_multiple_of(2) {
        nodes[p / 2] = 0.0;
    }
    Ok(nodes)
}

/// Lagrange basis of degree `p` on the Gauss-Lobatto nodes of `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LobattoBasis {
    degree: usize,
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl LobattoBasis {
    pub fn new(p: usize) -> Result<Self, BasisError> {
        let nodes = gauss_lobatto_nodes(p)?;
        let bary = nodes
            .iter()
            .enumerate()
            .map(|(k, &tk)| {
                let prod: f64 = nodes
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, &tj)| tk - tj)
                    .product();
                1.0 / prod
            })
            .collect();
        Ok(Self {
            degree: p,
            nodes,
            bary,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Writes `l_k(t)` for all `k` into `out`.
    pub fn eval_all(&self, t: f64, out: &mut [f64]) {
        let n = self.nodes.len();
        debug_assert!(out.len() >= n);
        // out[k] <- prod_{j<k} (t - t_j), then multiplied by the suffix product
        let mut acc = 1.0;
        for (o, &node) in out.iter_mut().zip(&self.nodes) {
            *o = acc;
            acc *= t - node;
        }
        acc = 1.0;
        for k in (0..n).rev() {
            out[k] *= acc * self.bary[k];
            acc *= t - self.nodes[k];
        }
    }

    /// Writes `l_k'(t)` for all `k` into `out`.
    pub fn deriv_all(&self, t: f64, out: &mut [f64]) {
        let n = self.nodes.len();
        debug_assert!(out.len() >= n);
        let mut prefix = Vec::with_capacity(n);
        let (mut p, mut dp) = (1.0, 0.0);
        for &node in &self.nodes {
            prefix.push((p, dp));
            let f = t - node;
            dp = dp * f + p;
            p *= f;
        }
        let (mut q, mut dq) = (1.0, 0.0);
        for k in (0..n).rev() {
            let (pk, dpk) = prefix[k];
            out[k] = self.bary[k] * (dpk * q + pk * dq);
            let f = t - self.nodes[k];
            dq = dq * f + q;
            q *= f;
        }
    }

    pub fn eval(&self, k: usize, t: f64) -> f64 {
        let mut out = vec![0.0; self.nodes.len()];
        self.eval_all(t, &mut out);
        out[k]
    }

    pub fn deriv(&self, k: usize, t: f64) -> f64 {
        let mut out = vec![0.0; self.nodes.len()];
        self.deriv_all(t, &mut out);
        out[k]
    }
}

/// Value of the `k`-th degree-`p` Gauss-Lobatto Lagrange shape function at `t`.
pub fn shape_eval(p: usize, k: usize, t: f64) -> Result<f64, BasisError> {
    Ok(LobattoBasis::new(p)?.eval(k, t))
}

/// Derivative of the `k`-th degree-`p` shape function at `t`.
pub fn shape_deriv(p: usize, k: usize, t: f64) -> Result<f64, BasisError> {
    Ok(LobattoBasis::new(p)?.deriv(k, t))
}

/// Assignment of polynomial degrees to mesh elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegreeRule {
    /// Degree `p` on every element.
    Uniform(usize),
    /// Degree `p` on interior elements, degree 1 on the two elements touching the boundary.
    Reduced(usize),
}

impl DegreeRule {
    pub fn degree(&self) -> usize {
        match *self {
            DegreeRule::Uniform(p) | DegreeRule::Reduced(p) => p,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DegreeRule::Uniform(_) => "uniform",
            DegreeRule::Reduced(_) => "reduced",
        }
    }

    pub fn degrees(&self, mesh: &GeometricMesh) -> Vec<usize> {
        (0..mesh.num_elements())
            .map(|e| match *self {
                DegreeRule::Uniform(p) => p,
                DegreeRule::Reduced(p) if !mesh.is_boundary_element(e) => p,
                DegreeRule::Reduced(_) => 1,
            })
            .collect()
    }
}

/// Global numbering of the continuous piecewise polynomial basis.
///
/// Interior vertices are numbered first, left to right, followed by the element-internal
/// dofs element by element. The two domain endpoints carry no dof.
#[derive(Debug, Clone)]
pub struct DofMap {
    mesh: GeometricMesh,
    rule: DegreeRule,
    degrees: Vec<usize>,
    n_dofs: usize,
    local_to_global: Vec<Vec<Option<usize>>>,
    bases: Vec<LobattoBasis>,
}

pub fn build_dof_map(mesh: &GeometricMesh, rule: DegreeRule) -> Result<DofMap, BasisError> {
    DofMap::new(mesh, rule)
}

impl DofMap {
    pub fn new(mesh: &GeometricMesh, rule: DegreeRule) -> Result<Self, BasisError> {
        if rule.degree() == 0 {
            return Err(BasisError::InvalidDegree(0));
        }
        let degrees = rule.degrees(mesh);
        let n_el = mesh.num_elements();
        let n_vertices = n_el - 1;
        let mut next = n_vertices;
        let mut local_to_global = Vec::with_capacity(n_el);
        for (e, &p) in degrees.iter().enumerate() {
            let mut local = vec![None; p + 1];
            // vertex dof of node v is v - 1; nodes 0 and n_el are constrained
            local[0] = (e > 0).then(|| e - 1);
            local[p] = (e + 1 < n_el).then_some(e);
            for slot in local.iter_mut().take(p).skip(1) {
                *slot = Some(next);
                next += 1;
            }
            local_to_global.push(local);
        }
        let max_degree = *degrees.iter().max().unwrap();
        let bases = (1..=max_degree)
            .map(LobattoBasis::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            mesh: mesh.clone(),
            rule,
            degrees,
            n_dofs: next,
            local_to_global,
            bases,
        })
    }

    pub fn mesh(&self) -> &GeometricMesh {
        &self.mesh
    }

    pub fn rule(&self) -> DegreeRule {
        self.rule
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn degree(&self, e: usize) -> usize {
        self.degrees[e]
    }

    pub fn max_degree(&self) -> usize {
        self.bases.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Global index (or `None` if constrained) for each local shape function of element `e`.
    pub fn local_dofs(&self, e: usize) -> &[Option<usize>] {
        &self.local_to_global[e]
    }

    /// Shape functions used on elements of degree `p`.
    pub fn basis(&self, p: usize) -> &LobattoBasis {
        &self.bases[p - 1]
    }

    pub fn element_basis(&self, e: usize) -> &LobattoBasis {
        self.basis(self.degrees[e])
    }

    /// Physical location of the interpolation node carried by each global dof.
    pub fn dof_coordinates(&self) -> Vec<f64> {
        let mut coords = vec![0.0; self.n_dofs];
        for e in 0..self.mesh.num_elements() {
            let el = self.mesh.element(e);
            let basis = self.element_basis(e);
            for (k, dof) in self.local_dofs(e).iter().enumerate() {
                if let Some(g) = *dof {
                    coords[g] = match k {
                        0 => el.a,
                        k if k == basis.degree() => el.b,
                        _ => el.from_reference(basis.nodes()[k]),
                    };
                }
            }
        }
        coords
    }

    /// Permutation `g -> g'` of the global dofs induced by reflecting the mesh about its
    /// midpoint.
    pub fn reflection(&self) -> Vec<usize> {
        let n_el = self.mesh.num_elements();
        let mut map = vec![usize::MAX; self.n_dofs];
        for e in 0..n_el {
            let mirror = n_el - 1 - e;
            let p = self.degrees[e];
            debug_assert_eq!(p, self.degrees[mirror]);
            for k in 0..=p {
                if let (Some(g), Some(h)) = (
                    self.local_to_global[e][k],
                    self.local_to_global[mirror][p - k],
                ) {
                    map[g] = h;
                }
            }
        }
        map
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<(), BasisError> {
        if coeffs.len() != self.n_dofs {
            return Err(BasisError::DimensionMismatch {
                expected: self.n_dofs,
                got: coeffs.len(),
            });
        }
        Ok(())
    }

    /// Value on element `e` at reference coordinate `t`.
    pub fn eval_on_element(&self, coeffs: &[f64], e: usize, t: f64) -> f64 {
        let basis = self.element_basis(e);
        let mut vals = vec![0.0; basis.degree() + 1];
        basis.eval_all(t, &mut vals);
        self.local_dofs(e)
            .iter()
            .zip(&vals)
            .filter_map(|(dof, v)| dof.map(|g| coeffs[g] * v))
            .sum()
    }

    /// Derivative with respect to `x` on element `e` at reference coordinate `t`.
    pub fn deriv_on_element(&self, coeffs: &[f64], e: usize, t: f64) -> f64 {
        let basis = self.element_basis(e);
        let mut vals = vec![0.0; basis.degree() + 1];
        basis.deriv_all(t, &mut vals);
        let jac = 2.0 / self.mesh.element(e).length();
        jac * self
            .local_dofs(e)
            .iter()
            .zip(&vals)
            .filter_map(|(dof, v)| dof.map(|g| coeffs[g] * v))
            .sum::<f64>()
    }

    pub fn eval(&self, coeffs: &[f64], x: f64) -> Result<f64, BasisError> {
        self.check_len(coeffs)?;
        let e = self.mesh.element_of(x)?;
        let t = self.mesh.element(e).to_reference(x);
        Ok(self.eval_on_element(coeffs, e, t))
    }

    pub fn eval_deriv(&self, coeffs: &[f64], x: f64) -> Result<f64, BasisError> {
        self.check_len(coeffs)?;
        let e = self.mesh.element_of(x)?;
        let t = self.mesh.element(e).to_reference(x);
        Ok(self.deriv_on_element(coeffs, e, t))
    }
}

/// `sum_k c_k phi_k(x)`.
pub fn eval_fem_function(dofmap: &DofMap, coeffs: &[f64], x: f64) -> Result<f64, BasisError> {
    dofmap.eval(coeffs, x)
}

/// Derivative of `sum_k c_k phi_k` at `x` (taken from the element containing `x`).
pub fn eval_fem_derivative(dofmap: &DofMap, coeffs: &[f64], x: f64) -> Result<f64, BasisError> {
    dofmap.eval_deriv(coeffs, x)
}
