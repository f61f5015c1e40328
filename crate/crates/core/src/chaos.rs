//! Orthonormal chaos bases (Legendre for uniform, Hermite for Gaussian
//! velocity laws), Gauss rules built from the Jacobi matrix, and the map
//! from reference nodes to soliton velocities.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported node count.
pub const MAX_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Uniform law on `[-1, 1]`.
    Legendre,
    /// Standard normal law, probabilists' convention.
    Hermite,
}

impl Family {
    /// Three-term recurrence coefficients `(a_k, b_k)` of the monic family:
    /// `p_{k+1} = (x - a_k) p_k - b_k p_{k-1}`.
    fn recurrence(self, k: usize) -> (f64, f64) {
        let kf = k as f64;
        match self {
            Family::Legendre => (0.0, if k == 0 { 1.0 } else { kf * kf / (4.0 * kf * kf - 1.0) }),
            Family::Hermite => (0.0, if k == 0 { 1.0 } else { kf }),
        }
    }
}

/// Orthonormal polynomials `P_0..=P_Q` under the family's probability measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrthoBasis {
    pub family: Family,
    pub max_degree: usize,
}

impl OrthoBasis {
    pub fn new(family: Family, max_degree: usize) -> Self {
        Self { family, max_degree }
    }

    /// Values `P_0(xi), .., P_Q(xi)`.
    pub fn eval(&self, xi: f64) -> Result<Vec<f64>> {
        if !xi.is_finite() {
            return Err(Error::Domain(format!("basis argument must be finite, got {xi}")));
        }
        if self.family == Family::Legendre && xi.abs() > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("Legendre argument {xi} outside [-1, 1]")));
        }
        Ok(orthonormal_values(self.family, self.max_degree, xi))
    }
}

fn orthonormal_values(family: Family, degree: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    out.push(1.0);
    if degree == 0 {
        return out;
    }
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..degree {
        let (a, _) = family.recurrence(k);
        let root_b_next = family.recurrence(k + 1).1.sqrt();
        let root_b = if k == 0 { 0.0 } else { family.recurrence(k).1.sqrt() };
        let next = ((x - a) * cur - root_b * prev) / root_b_next;
        prev = cur;
        cur = next;
        out.push(cur);
    }
    out
}

/// `P_n(x)` and `P_n'(x)` for the orthonormal family.
fn orthonormal_with_derivative(family: Family, n: usize, x: f64) -> (f64, f64) {
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut d_prev, mut d) = (0.0, 0.0);
    for k in 0..n {
        let (a, _) = family.recurrence(k);
        let rb_next = family.recurrence(k + 1).1.sqrt();
        let rb = if k == 0 { 0.0 } else { family.recurrence(k).1.sqrt() };
        let p_next = ((x - a) * p - rb * p_prev) / rb_next;
        let d_next = (p + (x - a) * d - rb * d_prev) / rb_next;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

/// How reference nodes map onto velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VelocityMap {
    /// `V = (V_b - V_a)/2 xi + (V_a + V_b)/2`.
    Uniform { v_a: f64, v_b: f64 },
    /// `gamma = sd * z`, `xi = (sqrt(1 + 4 gamma^2) - 1) / (2 gamma)`, then the affine map.
    Gaussian { v_a: f64, v_b: f64, sd: f64 },
}

impl VelocityMap {
    pub fn interval(&self) -> (f64, f64) {
        match *self {
            VelocityMap::Uniform { v_a, v_b } | VelocityMap::Gaussian { v_a, v_b, .. } => (v_a, v_b),
        }
    }

    fn validate(&self) -> Result<()> {
        let (v_a, v_b) = self.interval();
        if !(v_a.is_finite() && v_b.is_finite() && v_a < v_b) {
            return Err(Error::InvalidArgument(format!(
                "velocity interval [{v_a}, {v_b}] is empty"
            )));
        }
        if let VelocityMap::Gaussian { sd, .. } = *self {
            if !(sd.is_finite() && sd > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "standard deviation must be positive, got {sd}"
                )));
            }
        }
        Ok(())
    }
}

/// Bounded odd map from the real line onto `(-1, 1)`; inverse of `xi / (1 - xi^2)`.
pub fn xi_from_gamma(gamma: f64) -> f64 {
    if gamma == 0.0 {
        0.0
    } else if gamma.is_infinite() {
        gamma.signum()
    } else {
        // (sqrt(1 + 4g^2) - 1) / (2g), written to avoid cancellation for small |g|
        2.0 * gamma / (1.0 + (1.0 + 4.0 * gamma * gamma).sqrt())
    }
}

pub fn gamma_from_xi(xi: f64) -> f64 {
    if xi == 0.0 {
        0.0
    } else {
        xi / (1.0 - xi * xi)
    }
}

fn affine(v_a: f64, v_b: f64, xi: f64) -> f64 {
    0.5 * (v_b - v_a) * xi + 0.5 * (v_a + v_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub family: Family,
    /// Polynomial order `Q`; the rule has `Q + 1` nodes.
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub map: VelocityMap,
}

/// Gauss rule of order `Q` (`Q + 1` nodes) with probability weights.
///
/// Nodes come from the eigenvalues of the symmetric Jacobi matrix, are
/// polished by Newton iteration on `P_{Q+1}`, and weights are the
/// Christoffel numbers `1 / sum_k P_k(x_j)^2`. The rule is symmetrized.
pub fn gauss_rule(family: Family, order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = order + 1;
    if n > MAX_NODES {
        return Err(Error::InvalidArgument(format!(
            "at most {MAX_NODES} nodes supported, got {n}"
        )));
    }
    if n == 1 {
        return Ok((vec![0.0], vec![1.0]));
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jacobi[(k, k)] = family.recurrence(k).0;
        if k + 1 < n {
            let off = family.recurrence(k + 1).1.sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, d) = orthonormal_with_derivative(family, n, *x);
            if d == 0.0 {
                break;
            }
            let step = p / d;
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // symmetric measures: enforce exact antisymmetry of the nodes
    for j in 0..n / 2 {
        let m = 0.5 * (nodes[n - 1 - j] - nodes[j]);
        nodes[j] = -m;
        nodes[n - 1 - j] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| 1.0 / orthonormal_values(family, n - 1, x).iter().map(|p| p * p).sum::<f64>())
        .collect();
    for j in 0..n / 2 {
        let w = 0.5 * (weights[j] + weights[n - 1 - j]);
        weights[j] = w;
        weights[n - 1 - j] = w;
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok((nodes, weights))
}

impl QuadratureRule {
    pub fn new(family: Family, order: usize, map: VelocityMap) -> Result<Self> {
        map.validate()?;
        match (family, &map) {
            (Family::Legendre, VelocityMap::Uniform { .. }) | (Family::Hermite, VelocityMap::Gaussian { .. }) => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "velocity map {map:?} does not match the {family:?} family"
                )))
            }
        }
        let (nodes, weights) = gauss_rule(family, order)?;
        Ok(Self {
            family,
            order,
            nodes,
            weights,
            map,
        })
    }

    /// Legendre rule with `n` nodes on `[v_a, v_b]`.
    pub fn legendre(n: usize, v_a: f64, v_b: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("rule needs at least one node".into()));
        }
        Self::new(Family::Legendre, n - 1, VelocityMap::Uniform { v_a, v_b })
    }

    /// Hermite rule with `n` nodes, `gamma = sd * z`, mapped into `[v_a, v_b]`.
    pub fn hermite(n: usize, v_a: f64, v_b: f64, sd: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("rule needs at least one node".into()));
        }
        Self::new(Family::Hermite, n - 1, VelocityMap::Gaussian { v_a, v_b, sd })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn basis(&self) -> OrthoBasis {
        OrthoBasis::new(self.family, self.order)
    }

    pub fn velocity_from_node(&self, node: f64) -> f64 {
        match self.map {
            VelocityMap::Uniform { v_a, v_b } => affine(v_a, v_b, node),
            VelocityMap::Gaussian { v_a, v_b, sd } => affine(v_a, v_b, xi_from_gamma(sd * node)),
        }
    }

    pub fn velocities(&self) -> Vec<f64> {
        self.nodes.iter().map(|&a| self.velocity_from_node(a)).collect()
    }

    /// Inverse of [`velocity_from_node`](Self::velocity_from_node).
    pub fn node_from_velocity(&self, velocity: f64) -> Result<f64> {
        let (v_a, v_b) = self.map.interval();
        if !(velocity >= v_a && velocity <= v_b) {
            return Err(Error::Domain(format!("velocity {velocity} outside [{v_a}, {v_b}]")));
        }
        let xi = ((2.0 * velocity - (v_a + v_b)) / (v_b - v_a)).clamp(-1.0, 1.0);
        match self.map {
            VelocityMap::Uniform { .. } => Ok(xi),
            VelocityMap::Gaussian { sd, .. } => {
                if xi.abs() >= 1.0 {
                    return Err(Error::Domain(
                        "interval endpoints map to infinite normal coordinate".into(),
                    ));
                }
                Ok(gamma_from_xi(xi) / sd)
            }
        }
    }

    /// `sum_j f(node_j) w_j`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| f(x) * w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_legendre() {
        let (x, w) = gauss_rule(Family::Legendre, 1).unwrap();
        assert_abs_diff_eq!(x[0], -0.5773502691896258, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 0.5773502691896258, epsilon = 1e-15);
        assert_eq!(w, vec![0.5, 0.5]);
        // moment oracle: E[xi^2] = 1/3 under the uniform law
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| x * x * w).sum();
        assert_abs_diff_eq!(m2, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_hermite() {
        let (x, w) = gauss_rule(Family::Hermite, 1).unwrap();
        assert_abs_diff_eq!(x[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn single_node_is_mean() {
        for f in [Family::Legendre, Family::Hermite] {
            let (x, w) = gauss_rule(f, 0).unwrap();
            assert_eq!((x, w), (vec![0.0], vec![1.0]));
        }
    }

    #[test]
    fn too_many_nodes() {
        assert!(gauss_rule(Family::Legendre, 64).is_err());
        assert!(gauss_rule(Family::Legendre, 63).is_ok());
    }

    #[test]
    fn low_order_basis() {
        let leg = OrthoBasis::new(Family::Legendre, 3);
        let her = OrthoBasis::new(Family::Hermite, 3);
        for xi in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            let p = leg.eval(xi).unwrap();
            assert_eq!(p[0], 1.0);
            assert_abs_diff_eq!(p[1], 3f64.sqrt() * xi, epsilon = 1e-15);
            // sqrt(5) * (3 xi^2 - 1) / 2
            assert_abs_diff_eq!(p[2], 5f64.sqrt() * (3.0 * xi * xi - 1.0) / 2.0, epsilon = 1e-14);
        }
        for z in [-2.5, -1.0, 0.0, 0.4, 3.0] {
            let p = her.eval(z).unwrap();
            assert_eq!(p[0], 1.0);
            assert_abs_diff_eq!(p[1], z, epsilon = 1e-15);
            assert_abs_diff_eq!(p[2], (z * z - 1.0) / 2f64.sqrt(), epsilon = 1e-14);
            assert_abs_diff_eq!(p[3], (z * z * z - 3.0 * z) / 6f64.sqrt(), epsilon = 1e-13);
        }
        assert!(matches!(leg.eval(1.1), Err(Error::Domain(_))));
        assert!(leg.eval(1.0 + 1e-13).is_ok());
        assert!(her.eval(f64::NAN).is_err());
    }

    #[test]
    fn hermite_second_polynomial_matches_gram_schmidt() {
        // Gram-Schmidt on 1, z, z^2 against N(0,1) moments 1, 0, 1, 0, 3:
        // z^2 - E[z^2] = z^2 - 1, with E[(z^2-1)^2] = 3 - 2 + 1 = 2.
        let p = OrthoBasis::new(Family::Hermite, 2).eval(1.7).unwrap();
        assert_abs_diff_eq!(p[2], (1.7f64 * 1.7 - 1.0) / 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn legendre_velocity_endpoints() {
        let r = QuadratureRule::legendre(4, 0.1, 0.14).unwrap();
        assert_abs_diff_eq!(r.velocity_from_node(-1.0), 0.1, epsilon = 1e-17);
        assert_abs_diff_eq!(r.velocity_from_node(1.0), 0.14, epsilon = 1e-17);
        for v in r.velocities() {
            assert!(v > 0.1 && v < 0.14);
        }
    }

    #[test]
    fn hermite_velocity_map() {
        let r = QuadratureRule::hermite(5, 0.1, 0.2, 0.1).unwrap();
        assert_abs_diff_eq!(r.velocity_from_node(0.0), 0.15, epsilon = 1e-16);
        assert_abs_diff_eq!(xi_from_gamma(1e12), 1.0, epsilon = 1e-11);
        assert_abs_diff_eq!(xi_from_gamma(-1e12), -1.0, epsilon = 1e-11);
        assert_abs_diff_eq!(r.velocity_from_node(1e14), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.velocity_from_node(-1e14), 0.1, epsilon = 1e-12);
        for v in r.velocities() {
            assert!(v > 0.1 && v < 0.2);
        }
        let z = r.nodes[3];
        let v = r.velocity_from_node(z);
        assert_abs_diff_eq!(r.node_from_velocity(v).unwrap(), z, epsilon = 1e-12);
    }

    #[test]
    fn xi_gamma_inverse_pair() {
        for g in [-50.0, -2.0, -0.1, 1e-9, 0.3, 7.0] {
            assert_abs_diff_eq!(gamma_from_xi(xi_from_gamma(g)), g, epsilon = 1e-12 * g.abs().max(1.0));
        }
    }

    #[test]
    fn mismatched_map_rejected() {
        assert!(QuadratureRule::new(
            Family::Legendre,
            2,
            VelocityMap::Gaussian {
                v_a: 0.0,
                v_b: 1.0,
                sd: 0.1
            }
        )
        .is_err());
        assert!(QuadratureRule::legendre(3, 0.2, 0.1).is_err());
        assert!(QuadratureRule::hermite(3, 0.1, 0.2, 0.0).is_err());
    }
}
