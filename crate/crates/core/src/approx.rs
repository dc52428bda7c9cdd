//! Interpolants, boundary-weighted norms and derivative growth of the benchmark solution.
//!
//! The weighted norm is
//!
//! ```text
//! ||v||^2 = || r^b' v' ||^2 + || r^(b'-1) v ||^2,   r = distance to the boundary,
//! ```
//!
//! computed on dyadically graded panels toward each singular endpoint.

use crate::basis::{BasisError, DegreeRule, DofMap, LobattoBasis};
use crate::geomesh::{GeometricMesh, Interval, MeshError};
use crate::postproc::{solution_constant, PostprocError};
use crate::quadrature::{gauss_jacobi, gauss_legendre, QuadratureError};
use nalgebra::DVector;
use statrs::function::gamma::ln_gamma;
use std::io::{self, Write};
use thiserror::Error;

/// Dyadic panels used before the tail is extrapolated.
const GRADED_LEVELS: usize = 40;
/// Gauss-Legendre points per graded panel.
const PANEL_POINTS: usize = 24;
/// Largest admissible derivative order in the recurrence.
pub const MAX_DERIVATIVE_ORDER: usize = 20;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("weight exponent must lie in [0, 1), got {0}")]
    InvalidWeight(f64),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("interval length must be positive and finite, got {0}")]
    InvalidLength(f64),
    #[error("weighted integral diverges at the singular endpoint (panel ratio {ratio})")]
    Divergent { ratio: f64 },
    #[error("tail extrapolation did not stabilise ({previous} vs {current})")]
    NotStabilized { previous: f64, current: f64 },
    #[error("integrand is not finite at distance {0} from the singular endpoint")]
    NonFinite(f64),
    #[error("function must vanish on the boundary, got {value} at x = {x}")]
    NonzeroTrace { x: f64, value: f64 },
    #[error("derivative order {0} exceeds the supported maximum")]
    OrderTooLarge(usize),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Postproc(#[from] PostprocError),
}

/// Weight exponent `beta'` and the slack `epsilon` of the weighted norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedNormSpec {
    pub beta_prime: f64,
    pub epsilon: f64,
}

impl WeightedNormSpec {
    pub fn new(beta_prime: f64, epsilon: f64) -> Result<Self, ApproxError> {
        if !(0.0..1.0).contains(&beta_prime) {
            return Err(ApproxError::InvalidWeight(beta_prime));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(ApproxError::InvalidEpsilon(epsilon));
        }
        Ok(Self {
            beta_prime,
            epsilon,
        })
    }
}

/// `int_0^length g(r) dr` for `g` singular only at `r = 0`.
///
/// Panels `[rho/2, rho]` halve toward 0; the remainder is summed as a geometric series
/// fitted to the last panels. A panel ratio near or above 1, or an extrapolated value that
/// moves between the last two levels, is reported as divergence.
pub fn graded_integral<G: Fn(f64) -> f64>(g: G, length: f64) -> Result<f64, ApproxError> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(ApproxError::InvalidLength(length));
    }
    let gl = gauss_legendre(PANEL_POINTS)?;
    let mut panels = Vec::with_capacity(GRADED_LEVELS);
    let mut rho = length;
    for _ in 0..GRADED_LEVELS {
        let lo = 0.5 * rho;
        let mut sum = 0.0;
        for (t, w) in gl.iter() {
            let r = lo + 0.5 * (t + 1.0) * (rho - lo);
            let value = g(r);
            if !value.is_finite() {
                return Err(ApproxError::NonFinite(r));
            }
            sum += w * value;
        }
        panels.push(0.5 * (rho - lo) * sum);
        rho = lo;
    }
    let total: f64 = panels.iter().sum();
    let k = panels.len();
    let (last, prev, prev2) = (panels[k - 1], panels[k - 2], panels[k - 3]);
    if last.abs() <= 1e-16 * total.abs() || last == 0.0 {
        return Ok(total);
    }
    let q = last / prev;
    let q_prev = prev / prev2;
    if !(q.is_finite() && q_prev.is_finite()) || q >= 1.0 - 1e-3 || q <= 0.0 {
        return Err(ApproxError::Divergent { ratio: q });
    }
    let current = total + last * q / (1.0 - q);
    let previous = (total - last) + prev * q_prev / (1.0 - q_prev);
    if (current - previous).abs() > 1e-7 * current.abs() {
        return Err(ApproxError::NotStabilized { previous, current });
    }
    Ok(current)
}

/// `sqrt(||r^b' v'||^2 + ||r^(b'-1) v||^2)` on `domain`, split at the midpoint.
pub fn weighted_h1_norm<V, D>(
    v: V,
    dv: D,
    spec: WeightedNormSpec,
    domain: Interval,
) -> Result<f64, ApproxError>
where
    V: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let half = 0.5 * domain.length();
    let bp = spec.beta_prime;
    let density =
        |x: f64, r: f64| r.powf(2.0 * bp) * dv(x).powi(2) + r.powf(2.0 * bp - 2.0) * v(x).powi(2);
    let left = graded_integral(|r| density(domain.a + r, r), half)?;
    let right = graded_integral(|r| density(domain.b - r, r), half)?;
    Ok((left + right).sqrt())
}

/// A function with two derivatives, evaluated pointwise.
pub trait SmoothFunction {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn second_derivative(&self, x: f64) -> f64;
}

/// `coeff * x^exponent` on `x > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Power {
    pub coeff: f64,
    pub exponent: f64,
}

impl Power {
    pub fn new(exponent: f64) -> Self {
        Self {
            coeff: 1.0,
            exponent,
        }
    }
}

impl SmoothFunction for Power {
    fn value(&self, x: f64) -> f64 {
        if self.exponent == 0.0 {
            return self.coeff;
        }
        self.coeff * x.powf(self.exponent)
    }

    fn derivative(&self, x: f64) -> f64 {
        let a = self.exponent;
        if a == 0.0 {
            return 0.0;
        }
        if a == 1.0 {
            return self.coeff;
        }
        self.coeff * a * x.powf(a - 1.0)
    }

    fn second_derivative(&self, x: f64) -> f64 {
        let a = self.exponent;
        if a == 0.0 || a == 1.0 {
            return 0.0;
        }
        if a == 2.0 {
            return 2.0 * self.coeff;
        }
        self.coeff * a * (a - 1.0) * x.powf(a - 2.0)
    }
}

/// Adapts three closures to [`SmoothFunction`].
pub struct Closures<F, G, H>(pub F, pub G, pub H);

impl<F, G, H> SmoothFunction for Closures<F, G, H>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    fn value(&self, x: f64) -> f64 {
        (self.0)(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        (self.1)(x)
    }
    fn second_derivative(&self, x: f64) -> f64 {
        (self.2)(x)
    }
}

/// `c0 + c1 x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub c0: f64,
    pub c1: f64,
}

impl Linear {
    pub fn through(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let c1 = (y1 - y0) / (x1 - x0);
        Self {
            c0: y0 - c1 * x0,
            c1,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.c0 + self.c1 * x
    }
}

/// Linear interpolant of `v` at 0 and 1.
pub fn linear_endpoint_interpolant<V: Fn(f64) -> f64>(v: V) -> Linear {
    Linear::through(0.0, v(0.0), 1.0, v(1.0))
}

/// Linear interpolant of `v` at 1/2 and 1.
pub fn tilde_pi1<V: Fn(f64) -> f64>(v: V) -> Linear {
    Linear::through(0.5, v(0.5), 1.0, v(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma5Record {
    /// `||x^(b'-1) e|| + ||x^b' e'||` with `e = v - Iv` on `(0, 1)`.
    pub lhs: f64,
    /// `||x^min(b'+1, 3/2-eps) v''||`.
    pub rhs: f64,
    /// `lhs / rhs`, or 0 when `lhs = 0`.
    pub ratio: f64,
}

/// Both sides of the weighted error bound for the endpoint interpolant on `(0, 1)`.
pub fn lemma5_check<V: SmoothFunction + ?Sized>(
    v: &V,
    spec: WeightedNormSpec,
) -> Result<Lemma5Record, ApproxError> {
    let bp = spec.beta_prime;
    let iv = Linear::through(0.0, v.value(0.0), 1.0, v.value(1.0));
    let e = |x: f64| v.value(x) - iv.eval(x);
    let de = |x: f64| v.derivative(x) - iv.c1;
    let e_term = graded_integral(|x| x.powf(2.0 * bp - 2.0) * e(x).powi(2), 1.0)?;
    let de_term = graded_integral(|x| x.powf(2.0 * bp) * de(x).powi(2), 1.0)?;
    let lhs = e_term.sqrt() + de_term.sqrt();
    let m = (bp + 1.0).min(1.5 - spec.epsilon);
    let rhs = graded_integral(|x| x.powf(2.0 * m) * v.second_derivative(x).powi(2), 1.0)?.sqrt();
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(Lemma5Record { lhs, rhs, ratio })
}

/// Degree-`p` interpolant at the Gauss-Lobatto nodes mapped to an element.
#[derive(Debug, Clone)]
pub struct ElementInterpolant {
    element: Interval,
    basis: LobattoBasis,
    values: Vec<f64>,
}

impl ElementInterpolant {
    pub fn element(&self) -> Interval {
        self.element
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    /// Values at the mapped nodes, in increasing order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut phi = vec![0.0; self.values.len()];
        self.basis.eval_all(self.element.to_reference(x), &mut phi);
        phi.iter().zip(&self.values).map(|(p, v)| p * v).sum()
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let mut dphi = vec![0.0; self.values.len()];
        self.basis
            .deriv_all(self.element.to_reference(x), &mut dphi);
        let scale = 2.0 / self.element.length();
        scale
            * dphi
                .iter()
                .zip(&self.values)
                .map(|(p, v)| p * v)
                .sum::<f64>()
    }
}

pub fn gauss_lobatto_interpolant<V: Fn(f64) -> f64>(
    v: V,
    element: Interval,
    p: usize,
) -> Result<ElementInterpolant, ApproxError> {
    let basis = LobattoBasis::new(p)?;
    let values = basis
        .nodes()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            // endpoints are taken exactly
            if k == 0 {
                v(element.a)
            } else if k == p {
                v(element.b)
            } else {
                v(element.from_reference(t))
            }
        })
        .collect();
    Ok(ElementInterpolant {
        element,
        basis,
        values,
    })
}

/// Coefficients of the interpolant that is linear on the two boundary elements and
/// Gauss-Lobatto of degree `p` elsewhere, in the reduced space of `mesh`.
pub fn build_theorem2_interpolant<U: Fn(f64) -> f64>(
    u: U,
    mesh: &GeometricMesh,
    p: usize,
) -> Result<(DofMap, DVector<f64>), ApproxError> {
    let domain = mesh.domain();
    for x in [domain.a, domain.b] {
        let value = u(x);
        if value.abs() > 1e-14 {
            return Err(ApproxError::NonzeroTrace { x, value });
        }
    }
    let dofmap = DofMap::new(mesh, DegreeRule::Reduced(p))?;
    let coeffs = DVector::from_iterator(
        dofmap.n_dofs(),
        dofmap.dof_coordinates().into_iter().map(&u),
    );
    Ok((dofmap, coeffs))
}

/// Weighted-norm distance between the benchmark solution and its interpolant in the reduced
/// space on the `(sigma, layers)` mesh of `(-1, 1)`, with `beta' = 1 - s - eps'`.
pub fn theorem2_interpolation_error(
    s: f64,
    sigma: f64,
    layers: usize,
    p: usize,
    eps_prime: f64,
) -> Result<f64, ApproxError> {
    let c = solution_constant(s)?;
    let spec = WeightedNormSpec::new(1.0 - s - eps_prime, eps_prime)?;
    let bp = spec.beta_prime;
    let mesh = GeometricMesh::new(Interval::reference(), sigma, layers)?;
    let u = |x: f64| c * ((1.0 - x) * (1.0 + x)).max(0.0).powf(s);
    let (dofmap, coeffs) = build_theorem2_interpolant(u, &mesh, p)?;
    let coeffs = coeffs.as_slice();
    // u and u' in terms of the distance r to the nearer endpoint
    let u_r = |r: f64| c * (r * (2.0 - r)).powf(s);
    let du_r = |r: f64| c * s * (r * (2.0 - r)).powf(s - 1.0) * (2.0 - 2.0 * r);

    let mut total = 0.0;
    let n_el = mesh.num_elements();
    for e in 0..n_el {
        let el = mesh.element(e);
        if e == 0 || e == n_el - 1 {
            // linear interpolant r * u(h) / h; symmetric in the two boundary elements
            let h = el.length();
            let slope = u_r(h) / h;
            total += graded_integral(
                |r| {
                    let err = u_r(r) - slope * r;
                    let derr = du_r(r) - slope;
                    r.powf(2.0 * bp) * derr * derr + r.powf(2.0 * bp - 2.0) * err * err
                },
                h,
            )?;
        } else {
            let gl = gauss_legendre(dofmap.degree(e) + 30)?;
            let half = 0.5 * el.length();
            for (t, w) in gl.iter() {
                let x = el.from_reference(t);
                let r = (1.0 + x).min(1.0 - x);
                let ux = u_r(r);
                let dux = if x < 0.0 { du_r(r) } else { -du_r(r) };
                let err = ux - dofmap.eval_on_element(coeffs, e, t);
                let derr = dux - dofmap.deriv_on_element(coeffs, e, t);
                total += w
                    * half
                    * (r.powf(2.0 * bp) * derr * derr + r.powf(2.0 * bp - 2.0) * err * err);
            }
        }
    }
    Ok(total.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpRecord {
    pub p: usize,
    pub layers: usize,
    pub sigma: f64,
    pub s: f64,
    pub weighted_error: f64,
}

pub const INTERP_CSV_HEADER: &str = "p,L,sigma,s,weighted_error";

/// Interpolation errors for `L = p = 1..=levels` and every `s`, in `(s, L)` order.
pub fn interp_study(
    s_list: &[f64],
    sigma: f64,
    levels: usize,
    eps_prime: f64,
) -> Result<Vec<InterpRecord>, ApproxError> {
    let mut out = Vec::new();
    for &s in s_list {
        for l in 1..=levels {
            let weighted_error = theorem2_interpolation_error(s, sigma, l, l, eps_prime)?;
            out.push(InterpRecord {
                p: l,
                layers: l,
                sigma,
                s,
                weighted_error,
            });
        }
    }
    Ok(out)
}

pub fn write_interp_csv<W: Write + ?Sized>(
    out: &mut W,
    records: &[InterpRecord],
) -> io::Result<()> {
    writeln!(out, "{INTERP_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e}",
            r.p, r.layers, r.sigma, r.s, r.weighted_error
        )?;
    }
    Ok(())
}

/// Polynomials `q_p` with `D^p (1 - x^2)^s = (1 - x^2)^(s-p) q_p(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeRecurrence {
    s: f64,
    /// Monomial coefficients, lowest power first.
    q: Vec<Vec<f64>>,
}

impl DerivativeRecurrence {
    pub fn new(s: f64, p_max: usize) -> Result<Self, ApproxError> {
        if p_max > MAX_DERIVATIVE_ORDER {
            return Err(ApproxError::OrderTooLarge(p_max));
        }
        let mut q = vec![vec![1.0]];
        for p in 0..p_max {
            let cur = &q[p];
            // q_{p+1} = (1 - x^2) q_p' - 2 (s - p) x q_p
            let mut next = vec![0.0; cur.len() + 1];
            for (k, &c) in cur.iter().enumerate() {
                if k >= 1 {
                    let d = k as f64 * c;
                    next[k - 1] += d;
                    next[k + 1] -= d;
                }
                next[k + 1] -= 2.0 * (s - p as f64) * c;
            }
            q.push(next);
        }
        Ok(Self { s, q })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn max_order(&self) -> usize {
        self.q.len() - 1
    }

    pub fn coefficients(&self, p: usize) -> &[f64] {
        &self.q[p]
    }

    pub fn eval_q(&self, p: usize, x: f64) -> f64 {
        self.q[p].iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// `D^p (1 - x^2)^s` for `|x| < 1`.
    pub fn derivative(&self, p: usize, x: f64) -> f64 {
        (1.0 - x * x).powf(self.s - p as f64) * self.eval_q(p, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Sequence {
    /// `||r^(p-1/2-s+eps) D^p u||` for `p = 1..=p_max`, index `p - 1`.
    pub norms: Vec<f64>,
    /// `max_p (norm_p / p!)^(1/p)`.
    pub gamma_emp: f64,
}

impl Theorem1Sequence {
    pub fn norm(&self, p: usize) -> f64 {
        self.norms[p - 1]
    }

    /// `(norm_p / p!)^(1/p)`.
    pub fn growth(&self, p: usize) -> f64 {
        ((self.norm(p).ln() - ln_gamma(p as f64 + 1.0)) / p as f64).exp()
    }
}

/// Weighted norms of `D^p u` for the benchmark solution `u`, with `r = 1 - |x|`.
///
/// The integrand is even; on `(0, 1)` it equals
/// `c_s^2 (1 - x)^(2 eps - 1) (1 + x)^(2s - 2p) q_p(x)^2`, integrated by Gauss-Jacobi.
pub fn theorem1_norm_sequence(
    s: f64,
    p_max: usize,
    epsilon: f64,
) -> Result<Theorem1Sequence, ApproxError> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(ApproxError::InvalidEpsilon(epsilon));
    }
    let c = solution_constant(s)?;
    let rec = DerivativeRecurrence::new(s, p_max)?;
    let alpha = 2.0 * epsilon - 1.0;
    let mut norms = Vec::with_capacity(p_max);
    for p in 1..=p_max {
        let rule = gauss_jacobi(2 * p + 40, alpha, 0.0)?;
        let integral = 2f64.powf(-alpha)
            * rule.integrate_on(0.0, 1.0, |x| {
                (1.0 + x).powf(2.0 * s - 2.0 * p as f64) * rec.eval_q(p, x).powi(2)
            });
        norms.push(c * (2.0 * integral).sqrt());
    }
    let mut seq = Theorem1Sequence {
        norms,
        gamma_emp: 0.0,
    };
    seq.gamma_emp = (1..=p_max).map(|p| seq.growth(p)).fold(0.0, f64::max);
    Ok(seq)
}
