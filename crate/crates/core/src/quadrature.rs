//! Gauss-Legendre and Gauss-Jacobi rules, and product rules for element pairs carrying the
//! weight `|x - z|^(1 - 2s)`.
//!
//! Pair rules integrate `F(x, z) |x - z|^(1-2s)` over `T_i x T_j`, where `F` is smooth. For
//! identical and touching elements the singular factor is absorbed into a Jacobi weight after a
//! Duffy-type change of variables; separated elements use a tensor Gauss-Legendre rule with the
//! weight folded into the quadrature weights.

use crate::basis::legendre_with_derivatives;
use crate::geomesh::{GeometricMesh, Interval};
use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("number of quadrature points must be at least 1")]
    NoPoints,
    #[error("Jacobi exponents must exceed -1, got alpha = {alpha}, beta = {beta}")]
    InvalidExponents { alpha: f64, beta: f64 },
    #[error("fractional order must lie in (0, 1), got {0}")]
    InvalidOrder(f64),
    #[error("element index {index} out of range for a mesh with {elements} elements")]
    InvalidElement { index: usize, elements: usize },
    #[error("pair class does not match the element geometry")]
    GeometryMismatch,
}

/// Quadrature rule on `[-1, 1]` for the weight `(1 - x)^alpha (1 + x)^beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `sum_q w_q f(x_q)` on `[-1, 1]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    /// Integrates `f` against the weight mapped onto `[a, b]`, i.e.
    /// `int_a^b ((b - x)/h)^alpha ((x - a)/h)^beta f(x) dx` with `h = (b - a)/2`.
    pub fn integrate_on<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self.iter().map(|(x, w)| w * f(mid + half * x)).sum::<f64>()
    }

    /// Nodes and weights mapped to `[0, 1]` for the weight `(1 - t)^alpha t^beta`.
    pub fn unit_interval(&self) -> Vec<(f64, f64)> {
        let scale = 2f64.powf(-(self.alpha + self.beta + 1.0));
        self.iter()
            .map(|(x, w)| (0.5 * (x + 1.0), w * scale))
            .collect()
    }
}

/// `int_{-1}^{1} (1 - x)^alpha (1 + x)^beta dx = 2^(alpha+beta+1) B(alpha+1, beta+1)`.
pub fn jacobi_moment(alpha: f64, beta: f64) -> f64 {
    ((alpha + beta + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(alpha + beta + 2.0))
    .exp()
}

/// `n`-point Gauss-Legendre rule by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Result<QuadRule, QuadratureError> {
    if n == 0 {
        return Err(QuadratureError::NoPoints);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut deriv = 1.0;
        for _ in 0..100 {
            let (p, d, _) = legendre_with_derivatives(n, x);
            let dx = p / d;
            x -= dx;
            deriv = d;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let d = legendre_with_derivatives(n, x).1;
        if d != 0.0 {
            deriv = d;
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        nodes[i] = x;
        weights[i] = w;
        nodes[n - 1 - i] = -x;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadRule {
        nodes,
        weights,
        alpha: 0.0,
        beta: 0.0,
    })
}

/// `n`-point Gauss-Jacobi rule for `(1 - x)^alpha (1 + x)^beta` by the Golub-Welsch method.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Result<QuadRule, QuadratureError> {
    if n == 0 {
        return Err(QuadratureError::NoPoints);
    }
    if !(alpha > -1.0 && beta > -1.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(QuadratureError::InvalidExponents { alpha, beta });
    }
    let mu0 = jacobi_moment(alpha, beta);
    let ab = alpha + beta;
    // recurrence coefficients of the orthonormal Jacobi polynomials
    let diag: Vec<f64> = (0..n)
        .map(|k| {
            let kf = k as f64;
            let denom = (2.0 * kf + ab) * (2.0 * kf + ab + 2.0);
            if denom.abs() < 1e-300 {
                // k = 0 with alpha + beta = 0
                (beta - alpha) / (ab + 2.0)
            } else {
                (beta * beta - alpha * alpha) / denom
            }
        })
        .collect();
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let kf = k as f64;
            let s = 2.0 * kf + ab;
            if k == 1 {
                // (k + alpha + beta) cancels against (s - 1)
                return (4.0 * (1.0 + alpha) * (1.0 + beta) / (s * s * (s + 1.0))).sqrt();
            }
            (4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab) / (s * s * (s + 1.0) * (s - 1.0)))
                .sqrt()
        })
        .collect();
    if n == 1 {
        return Ok(QuadRule {
            nodes: vec![diag[0]],
            weights: vec![mu0],
            alpha,
            beta,
        });
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jac[(k, k)] = diag[k];
    }
    for (k, &b) in off.iter().enumerate() {
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nodes, weights) = pairs.into_iter().unzip();
    Ok(QuadRule {
        nodes,
        weights,
        alpha,
        beta,
    })
}

/// Relative position of two mesh elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    Identical,
    /// The elements share one vertex; `right` is true if the vertex is the right end of `T_i`.
    Adjacent {
        right: bool,
    },
    Disjoint,
}

pub fn classify_pair(
    mesh: &GeometricMesh,
    i: usize,
    j: usize,
) -> Result<PairClass, QuadratureError> {
    let n = mesh.num_elements();
    for index in [i, j] {
        if index >= n {
            return Err(QuadratureError::InvalidElement { index, elements: n });
        }
    }
    Ok(match i.abs_diff(j) {
        0 => PairClass::Identical,
        1 => PairClass::Adjacent { right: j > i },
        _ => PairClass::Disjoint,
    })
}

/// One node of a [`PairRule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPoint {
    pub x: f64,
    pub z: f64,
    /// `x` in the reference coordinate of `T_i`.
    pub ref_x: f64,
    /// `z` in the reference coordinate of `T_j`.
    pub ref_z: f64,
    /// `x - z`, evaluated without cancellation.
    pub diff: f64,
    pub weight: f64,
}

/// Quadrature points `(x, z)` in `T_i x T_j` with weights such that
/// `sum w F(x, z)` approximates `int_{T_i} int_{T_j} F(x, z) |x - z|^(1 - 2s) dz dx`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairRule {
    pub points: Vec<PairPoint>,
}

impl PairRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        self.points.iter().map(|p| p.weight * f(p.x, p.z)).sum()
    }
}

/// Number of points used for separated elements: `n` plus `ceil(log2(size / dist))` when the
/// gap is smaller than the larger element.
pub fn disjoint_points(ti: &Interval, tj: &Interval, n: usize) -> usize {
    let size = ti.length().max(tj.length());
    let dist = ti.distance_to(tj);
    if dist < size && dist > 0.0 {
        n + (size / dist).log2().ceil() as usize
    } else {
        n
    }
}

fn check_order(s: f64) -> Result<(), QuadratureError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(QuadratureError::InvalidOrder(s));
    }
    Ok(())
}

/// Quadrature for the pair `(ti, tj)` of class `class`, `n` points per direction.
pub fn pair_quadrature(
    class: PairClass,
    ti: &Interval,
    tj: &Interval,
    s: f64,
    n: usize,
) -> Result<PairRule, QuadratureError> {
    check_order(s)?;
    if n == 0 {
        return Err(QuadratureError::NoPoints);
    }
    let exponent = 1.0 - 2.0 * s;
    match class {
        PairClass::Identical => {
            if ti != tj {
                return Err(QuadratureError::GeometryMismatch);
            }
            identical_rule(ti, exponent, n)
        }
        PairClass::Adjacent { right } => {
            let touching = if right { ti.b == tj.a } else { ti.a == tj.b };
            if !touching {
                return Err(QuadratureError::GeometryMismatch);
            }
            adjacent_rule(ti, tj, right, exponent, n)
        }
        PairClass::Disjoint => {
            if ti.distance_to(tj) <= 0.0 {
                return Err(QuadratureError::GeometryMismatch);
            }
            disjoint_rule(ti, tj, exponent, disjoint_points(ti, tj, n))
        }
    }
}

/// `T x T` split along the diagonal. On `x > z` write `x - z = h t`, `x = a + h (t + (1-t) u)`;
/// the Jacobian `(1 - t)` and `t^(1-2s)` form a Jacobi weight in `t`.
fn identical_rule(t: &Interval, exponent: f64, n: usize) -> Result<PairRule, QuadratureError> {
    let h = t.length();
    let radial = gauss_jacobi(n, 1.0, exponent)?.unit_interval();
    let angular = gauss_legendre(n)?.unit_interval();
    let scale = h * h * h.powf(exponent);
    let mut rule = PairRule::default();
    for &(r, wr) in &radial {
        for &(u, wu) in &angular {
            let weight = scale * wr * wu;
            // reference coordinates of the lower and upper point
            let lo = (1.0 - r) * u;
            let (t_lo, t_hi) = (2.0 * lo - 1.0, 2.0 * (lo + r) - 1.0);
            let (x_lo, x_hi) = (t.a + h * lo, t.a + h * (lo + r));
            rule.points.push(PairPoint {
                x: x_hi,
                z: x_lo,
                ref_x: t_hi,
                ref_z: t_lo,
                diff: h * r,
                weight,
            });
            rule.points.push(PairPoint {
                x: x_lo,
                z: x_hi,
                ref_x: t_lo,
                ref_z: t_hi,
                diff: -h * r,
                weight,
            });
        }
    }
    Ok(rule)
}

/// Elements on either side of a shared vertex `v`. With `x = v -+ h_i a`, `z = v +- h_j b` the
/// distance is `h_i a + h_j b`; the Duffy split `b = a tau` (and `a = b tau`) leaves
/// `a^(2-2s)` as the Jacobi weight in the radial variable.
fn adjacent_rule(
    ti: &Interval,
    tj: &Interval,
    right: bool,
    exponent: f64,
    n: usize,
) -> Result<PairRule, QuadratureError> {
    let (hi, hj) = (ti.length(), tj.length());
    // dir: direction from the shared vertex into T_i
    let (v, dir) = if right { (ti.b, -1.0) } else { (ti.a, 1.0) };
    let radial = gauss_jacobi(n, 0.0, exponent + 1.0)?.unit_interval();
    let angular = gauss_legendre(n)?.unit_interval();
    let mut rule = PairRule::default();
    // a, b: fractional distances of x and z from v
    let mut push = |a: f64, b: f64, weight: f64| {
        rule.points.push(PairPoint {
            x: v + dir * hi * a,
            z: v - dir * hj * b,
            ref_x: -dir * (1.0 - 2.0 * a),
            ref_z: dir * (1.0 - 2.0 * b),
            diff: dir * (hi * a + hj * b),
            weight,
        });
    };
    for &(r, wr) in &radial {
        for &(tau, wt) in &angular {
            push(
                r,
                r * tau,
                hi * hj * wr * wt * (hi + hj * tau).powf(exponent),
            );
            push(
                r * tau,
                r,
                hi * hj * wr * wt * (hi * tau + hj).powf(exponent),
            );
        }
    }
    Ok(rule)
}

fn disjoint_rule(
    ti: &Interval,
    tj: &Interval,
    exponent: f64,
    n: usize,
) -> Result<PairRule, QuadratureError> {
    let gl = gauss_legendre(n)?;
    let (hx, hz) = (0.5 * ti.length(), 0.5 * tj.length());
    let mut rule = PairRule::default();
    for (tx, wx) in gl.iter() {
        let x = ti.midpoint() + hx * tx;
        for (tz, wz) in gl.iter() {
            let z = tj.midpoint() + hz * tz;
            let diff = x - z;
            rule.points.push(PairPoint {
                x,
                z,
                ref_x: tx,
                ref_z: tz,
                diff,
                weight: hx * hz * wx * wz * diff.abs().powf(exponent),
            });
        }
    }
    Ok(rule)
}
