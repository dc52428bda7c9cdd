//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use frac_hp::basis::DofMap;
use nalgebra::DMatrix;
use statrs::function::gamma::gamma;

/// Tanh-sinh nodes on `[a, b]` with step `h`: `(x, distance to a, distance to b, weight)`.
///
/// Distances are formed without cancellation so endpoint singularities are resolved.
pub fn tanh_sinh(a: f64, b: f64, h: f64) -> Vec<(f64, f64, f64, f64)> {
    let half = 0.5 * (b - a);
    let mut out = Vec::new();
    let kmax = (4.0 / h).ceil() as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let u = 0.5 * std::f64::consts::PI * t.sinh();
        // 1 - tanh(u) = 2 / (exp(2u) + 1), 1 + tanh(u) = 2 / (exp(-2u) + 1)
        let da = half * 2.0 / ((-2.0 * u).exp() + 1.0);
        let db = half * 2.0 / ((2.0 * u).exp() + 1.0);
        let w = h * half * 0.5 * std::f64::consts::PI * t.cosh() / u.cosh().powi(2);
        if !(da > 0.0 && db > 0.0) || w < 1e-300 {
            continue;
        }
        let x = if da < db { a + da } else { b - db };
        out.push((x, da, db, w));
    }
    out
}

/// Tanh-sinh integral of a scalar function at step `h`.
pub fn tanh_sinh_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, h: f64) -> f64 {
    tanh_sinh(a, b, h)
        .into_iter()
        .map(|(x, _, _, w)| w * f(x))
        .sum()
}

/// Integrates to relative tolerance `tol` by halving the step.
pub fn adaptive_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let mut h = 0.5;
    let mut prev = tanh_sinh_integral(&f, a, b, h);
    for _ in 0..8 {
        h *= 0.5;
        let cur = tanh_sinh_integral(&f, a, b, h);
        if (cur - prev).abs() <= tol * cur.abs().max(1e-300) {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// `C(s) = 2^(2s) Gamma(s + 1/2) / (sqrt(pi) |Gamma(-s)|)`, evaluated directly.
pub fn kernel_constant_direct(s: f64) -> f64 {
    4f64.powf(s) * gamma(s + 0.5) / (std::f64::consts::PI.sqrt() * gamma(-s).abs())
}

/// All global basis values at `x` on element `e`.
fn basis_vector(dm: &DofMap, e: usize, x: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let el = dm.mesh().element(e);
    let t = el.to_reference(x).clamp(-1.0, 1.0);
    let basis = dm.element_basis(e);
    let mut vals = vec![0.0; basis.degree() + 1];
    basis.eval_all(t, &mut vals);
    for (k, dof) in dm.local_dofs(e).iter().enumerate() {
        if let Some(g) = *dof {
            out[g] = vals[k];
        }
    }
}

/// Stiffness matrix of the weak form on a domain-only split, by tanh-sinh with step `h`:
/// `C/2 int int (phi_i(x)-phi_i(z))(phi_j(x)-phi_j(z)) |x-z|^(-1-2s) + C int phi_i phi_j kappa`.
pub fn brute_force_stiffness(dm: &DofMap, s: f64, h: f64) -> DMatrix<f64> {
    let mesh = dm.mesh();
    let n = dm.n_dofs();
    let n_el = mesh.num_elements();
    let dom = mesh.domain();
    let c = kernel_constant_direct(s);
    let mut acc = DMatrix::<f64>::zeros(n, n);
    let mut px = vec![0.0; n];
    let mut pz = vec![0.0; n];
    let mut diff = vec![0.0; n];

    for ex in 0..n_el {
        let elx = mesh.element(ex);
        for (x, _, _, wx) in tanh_sinh(elx.a, elx.b, h) {
            basis_vector(dm, ex, x, &mut px);
            for ez in 0..n_el {
                let elz = mesh.element(ez);
                // pieces of the z element, each with its singular end identified
                let pieces: Vec<(f64, f64)> = if ez == ex {
                    vec![(elz.a, x), (x, elz.b)]
                } else {
                    vec![(elz.a, elz.b)]
                };
                for (za, zb) in pieces {
                    if zb <= za {
                        continue;
                    }
                    for (z, da, db, wz) in tanh_sinh(za, zb, h) {
                        let dist = if ez == ex {
                            if zb == x {
                                db
                            } else {
                                da
                            }
                        } else {
                            (x - z).abs()
                        };
                        if dist == 0.0 {
                            continue;
                        }
                        basis_vector(dm, ez, z, &mut pz);
                        let k = wx * wz * dist.powf(-1.0 - 2.0 * s);
                        for i in 0..n {
                            diff[i] = px[i] - pz[i];
                        }
                        for j in 0..n {
                            if diff[j] == 0.0 {
                                continue;
                            }
                            let dj = k * diff[j];
                            for i in 0..n {
                                acc[(i, j)] += diff[i] * dj;
                            }
                        }
                    }
                }
            }
            // complement part, with distances to the domain ends formed exactly on the
            // boundary elements
            let (ra, rb) = (x - dom.a, dom.b - x);
            let kappa = (ra.powf(-2.0 * s) + rb.powf(-2.0 * s)) / (2.0 * s);
            for j in 0..n {
                if px[j] == 0.0 {
                    continue;
                }
                for i in 0..n {
                    acc[(i, j)] += 2.0 * wx * kappa * px[i] * px[j];
                }
            }
        }
    }
    acc * (0.5 * c)
}
