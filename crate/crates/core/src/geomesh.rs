//! Geometric meshes on a bounded interval, graded towards both endpoints.
//!
//! The mesh is built on the reference interval `(-1, 1)` and mapped affinely onto the
//! requested domain. With grading factor `sigma` and `L` layers the reference nodes are
//!
//! ```text
//! x_0 = -1,   x_i = -1 + sigma^(L-i+1)  (i = 1..L),
//! x_{i+1} = 1 - sigma^(i-L)  (i = L..2L),   x_{2L+2} = 1,
//! ```
//!
//! giving `2L + 2` elements. Elements are indexed from zero: element `e` spans
//! `nodes[e]..nodes[e + 1]`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("grading factor must lie in (0, 1), got {0}")]
    InvalidSigma(f64),
    #[error("domain ({a}, {b}) is empty or reversed")]
    InvalidDomain { a: f64, b: f64 },
    #[error("{layers} layers with grading factor {sigma} exceed double precision on ({a}, {b})")]
    TooManyLayers {
        layers: usize,
        sigma: f64,
        a: f64,
        b: f64,
    },
    #[error("point {x} lies outside the domain ({a}, {b})")]
    OutsideDomain { x: f64, a: f64, b: f64 },
}

/// A closed interval `[a, b]` with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self, MeshError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(MeshError::InvalidDomain { a, b });
        }
        Ok(Self { a, b })
    }

    /// The reference interval `(-1, 1)`.
    pub const fn reference() -> Self {
        Self { a: -1.0, b: 1.0 }
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    #[inline]
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.a <= x && x <= self.b
    }

    /// Maps `t` in `[-1, 1]` affinely onto the interval.
    #[inline]
    pub fn from_reference(&self, t: f64) -> f64 {
        self.a + 0.5 * (t + 1.0) * (self.b - self.a)
    }

    /// Inverse of [`Interval::from_reference`].
    #[inline]
    pub fn to_reference(&self, x: f64) -> f64 {
        2.0 * (x - self.a) / (self.b - self.a) - 1.0
    }

    /// Distance between two intervals (zero if they touch or overlap).
    pub fn distance_to(&self, other: &Interval) -> f64 {
        (other.a - self.b).max(self.a - other.b).max(0.0)
    }
}

/// Geometric mesh with `2L + 2` elements refined towards both endpoints of the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricMesh {
    domain: Interval,
    sigma: f64,
    layers: usize,
    nodes: Vec<f64>,
    comparability: f64,
}

/// Builds the geometric mesh with grading factor `sigma` and `layers` refinement layers.
pub fn build_geometric_mesh(
    domain: Interval,
    sigma: f64,
    layers: usize,
) -> Result<GeometricMesh, MeshError> {
    GeometricMesh::new(domain, sigma, layers)
}

impl GeometricMesh {
    pub fn new(domain: Interval, sigma: f64, layers: usize) -> Result<Self, MeshError> {
        let domain = Interval::new(domain.a, domain.b)?;
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(MeshError::InvalidSigma(sigma));
        }
        let half = 0.5 * domain.length();
        // powers[k] = sigma^k, accumulated by repeated multiplication
        let mut powers = Vec::with_capacity(layers + 1);
        let mut pw = 1.0;
        for _ in 0..=layers {
            powers.push(pw);
            pw *= sigma;
        }
        let mut nodes = Vec::with_capacity(2 * layers + 3);
        nodes.push(domain.a);
        for i in 1..=layers {
            nodes.push(domain.a + half * powers[layers - i + 1]);
        }
        nodes.push(domain.midpoint());
        for i in (1..=layers).rev() {
            nodes.push(domain.b - half * powers[layers - i + 1]);
        }
        nodes.push(domain.b);
        debug_assert_eq!(nodes.len(), 2 * layers + 3);
        if !nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(MeshError::TooManyLayers {
                layers,
                sigma,
                a: domain.a,
                b: domain.b,
            });
        }

        let comparability = ((1.0 - sigma) / sigma).max(sigma / (1.0 - sigma));
        Ok(Self {
            domain,
            sigma,
            layers,
            nodes,
            comparability,
        })
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn num_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Element `e` as the interval `(nodes[e], nodes[e + 1])`.
    pub fn element(&self, e: usize) -> Interval {
        Interval {
            a: self.nodes[e],
            b: self.nodes[e + 1],
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = Interval> + '_ {
        self.nodes.windows(2).map(|w| Interval { a: w[0], b: w[1] })
    }

    /// Whether the closure of element `e` touches the domain boundary.
    pub fn is_boundary_element(&self, e: usize) -> bool {
        e == 0 || e + 1 == self.num_elements()
    }

    /// Constant `K` with `diam(T) <= K dist(T, boundary)` and `dist(T, boundary) <= K diam(T)`
    /// for every element not touching the boundary.
    pub fn comparability_constant(&self) -> f64 {
        self.comparability
    }

    /// Distance from element `e` to the nearest domain endpoint.
    pub fn boundary_distance(&self, e: usize) -> f64 {
        let el = self.element(e);
        (el.a - self.domain.a).min(self.domain.b - el.b)
    }

    /// Index of the element containing `x`. Points on a shared node belong to the element on
    /// their right, except `x = b` which belongs to the last element.
    pub fn element_of(&self, x: f64) -> Result<usize, MeshError> {
        if !self.domain.contains(x) {
            return Err(MeshError::OutsideDomain {
                x,
                a: self.domain.a,
                b: self.domain.b,
            });
        }
        let last = self.num_elements() - 1;
        // number of nodes <= x, minus one
        let idx = self.nodes.partition_point(|&n| n <= x);
        Ok((idx - 1).min(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn reference_mesh(sigma: f64, layers: usize) -> GeometricMesh {
        GeometricMesh::new(Interval::reference(), sigma, layers).unwrap()
    }

    #[test]
    fn nodes_half_grading_two_layers() {
        let mesh = reference_mesh(0.5, 2);
        let expected = [-1.0, -0.75, -0.5, 0.0, 0.5, 0.75, 1.0];
        assert_eq!(mesh.nodes().len(), 7);
        for (n, e) in mesh.nodes().iter().zip(expected) {
            assert_abs_diff_eq!(*n, e, epsilon = 1e-15);
        }
        assert_eq!(mesh.num_elements(), 6);
    }

    #[test]
    fn zero_layers_is_bisection() {
        let mesh = reference_mesh(0.6, 0);
        assert_eq!(mesh.nodes(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn shifted_domain() {
        let domain = Interval::new(0.0, 2.0).unwrap();
        let mesh = GeometricMesh::new(domain, 0.5, 1).unwrap();
        assert_eq!(mesh.nodes(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        let mesh = GeometricMesh::new(domain, 0.5, 2).unwrap();
        assert_eq!(mesh.nodes(), &[0.0, 0.25, 0.5, 1.0, 1.5, 1.75, 2.0]);
    }

    #[test]
    fn rejects_meshes_below_double_precision() {
        let domain = Interval::new(0.0, 0.1).unwrap();
        assert!(matches!(
            GeometricMesh::new(domain, 0.05, 13),
            Err(MeshError::TooManyLayers { .. })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = Interval::reference();
        assert_eq!(
            GeometricMesh::new(d, 0.0, 2),
            Err(MeshError::InvalidSigma(0.0))
        );
        assert!(GeometricMesh::new(d, 1.0, 2).is_err());
        assert!(GeometricMesh::new(d, f64::NAN, 2).is_err());
        assert!(Interval::new(1.0, 1.0).is_err());
        assert!(Interval::new(2.0, 1.0).is_err());
        let reversed = Interval { a: 1.0, b: -1.0 };
        assert!(matches!(
            GeometricMesh::new(reversed, 0.5, 1),
            Err(MeshError::InvalidDomain { .. })
        ));
    }

    #[test]
    fn element_lookup() {
        let mesh = reference_mesh(0.5, 2);
        // shared node resolves to the right element
        assert_eq!(mesh.element_of(-0.75).unwrap(), 1);
        assert_eq!(mesh.element(1), Interval { a: -0.75, b: -0.5 });
        assert_eq!(mesh.element_of(1.0).unwrap(), 5);
        assert_eq!(mesh.element_of(-1.0).unwrap(), 0);
        let e = mesh.element_of(0.1).unwrap();
        assert_eq!(mesh.element(e), Interval { a: 0.0, b: 0.5 });
        assert!(matches!(
            mesh.element_of(1.5),
            Err(MeshError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn interior_elements_are_comparable_to_their_distance() {
        for &sigma in &[0.2, 0.5, 0.6, 0.85] {
            let mesh = reference_mesh(sigma, 6);
            let k = mesh.comparability_constant();
            for e in 1..mesh.num_elements() - 1 {
                let diam = mesh.element(e).length();
                let dist = mesh.boundary_distance(e);
                assert!(diam <= k * dist * (1.0 + 1e-12));
                assert!(dist <= k * diam * (1.0 + 1e-12));
            }
        }
    }

    proptest! {
        #[test]
        fn mesh_invariants(sigma in 0.05f64..0.95, layers in 0usize..25, a in -5.0f64..5.0, len in 0.1f64..10.0) {
            let domain = Interval::new(a, a + len).unwrap();
            let mesh = match GeometricMesh::new(domain, sigma, layers) {
                Ok(mesh) => mesh,
                Err(MeshError::TooManyLayers { .. }) => {
                    // only legitimate when the boundary element is below the local spacing
                    prop_assert!(0.5 * len * sigma.powi(layers as i32) < 4.0 * f64::EPSILON * (a.abs() + len));
                    return Ok(());
                }
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            let nodes = mesh.nodes();
            prop_assert_eq!(nodes.len(), 2 * layers + 3);
            prop_assert_eq!(nodes[0], domain.a);
            prop_assert_eq!(*nodes.last().unwrap(), domain.b);
            prop_assert!(nodes.windows(2).all(|w| w[0] < w[1]));

            // reflection about the midpoint maps the node set onto itself
            let n = nodes.len();
            for i in 0..n {
                let mirrored = domain.a + domain.b - nodes[i];
                prop_assert!((mirrored - nodes[n - 1 - i]).abs() <= 1e-13 * (1.0 + a.abs() + len));
            }
        }

        #[test]
        fn reference_mesh_lengths(sigma in 0.3f64..0.9, layers in 0usize..20) {
            let mesh = reference_mesh(sigma, layers);
            let boundary_len = sigma.powi(layers as i32);
            let first = mesh.element(0).length();
            let last = mesh.element(mesh.num_elements() - 1).length();
            // node differences near +-1 carry an absolute rounding error of about eps
            let tol = 1e-14 + f64::EPSILON / boundary_len;
            prop_assert!(((first - boundary_len) / boundary_len).abs() < tol);
            prop_assert!(((last - boundary_len) / boundary_len).abs() < tol);
            // adjacent refined elements grow by 1/sigma moving inwards
            for e in 1..layers {
                let ratio = mesh.element(e + 1).length() / mesh.element(e).length();
                let tol = 1e-12 + 4.0 * f64::EPSILON / mesh.element(e).length();
                prop_assert!((ratio * sigma - 1.0).abs() < tol);
            }
        }
    }
}
