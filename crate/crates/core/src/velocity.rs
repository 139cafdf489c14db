//! Velocity-space quadrature and monomial moment bases.
//!
//! All velocity integrals in the crate go through the bracket operator
//! `<f> = sum_q w_q f(v_q)` of a [`QuadratureRule`]. 1D rules are
//! Gauss-Legendre on [-1,1] (total weight 2); 2D rules tensorize
//! Gauss-Legendre in `mu` with uniform midpoint nodes in `phi` on the
//! projected unit sphere `(v_x, v_y) = sqrt(1-mu^2) (cos phi, sin phi)`,
//! normalized so the total weight is 2*pi.
//!
//! Basis evaluations at the quadrature nodes are tabulated once per
//! (basis, rule) pair; they sit in the inner loop of every dual-objective
//! evaluation and every flux assembly.

use crate::error::{Error, Result};
use crate::moments::{basis_size, Dimension, MomentVector};

/// Velocity nodes and positive weights of a quadrature rule.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    dimension: Dimension,
    /// Node coordinates; 1D stores `[mu, 0]`.
    nodes: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// `n_q`-point Gauss-Legendre rule on [-1,1].
    ///
    /// Nodes are strictly inside the interval and exactly symmetric about
    /// zero; the rule integrates polynomials of degree `2 n_q - 1` exactly.
    pub fn gauss_legendre(n_q: usize) -> Result<Self> {
        if n_q == 0 {
            return Err(Error::Config("quadrature needs at least one node".into()));
        }
        let (mu, w) = gauss_legendre_nodes(n_q);
        Ok(QuadratureRule {
            dimension: Dimension::One,
            nodes: mu.into_iter().map(|m| [m, 0.0]).collect(),
            weights: w,
        })
    }

    /// Tensorized Gauss-Legendre x uniform-midpoint rule on the projected
    /// unit sphere, with weights scaled to a total of 2*pi.
    pub fn projected_sphere(n_mu: usize, n_phi: usize) -> Result<Self> {
        if n_mu == 0 || n_phi == 0 {
            return Err(Error::Config("quadrature needs at least one node".into()));
        }
        let (mu, w_mu) = gauss_legendre_nodes(n_mu);
        let w_phi = std::f64::consts::PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_mu * n_phi);
        let mut weights = Vec::with_capacity(n_mu * n_phi);
        for (m, wm) in mu.iter().zip(&w_mu) {
            let r = (1.0 - m * m).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n_phi as f64;
                nodes.push([r * phi.cos(), r * phi.sin()]);
                weights.push(wm * w_phi);
            }
        }
        Ok(QuadratureRule {
            dimension: Dimension::Two,
            nodes,
            weights,
        })
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn n_q(&self) -> usize {
        self.weights.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `<1>`, i.e. the measure of the velocity domain under this rule.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Nodes and weights of the n-point Gauss-Legendre rule, ascending order.
///
/// Roots of P_n via Newton iteration from the Chebyshev-like initial guess;
/// the negative half is mirrored so the rule is symmetric to the bit.
fn gauss_legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // i-th root counted from +1 downwards
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-15 {
                let (p2, d2) = legendre_with_derivative(n, t);
                dp = d2;
                t -= p2 / d2;
                break;
            }
        }
        let weight = 2.0 / ((1.0 - t * t) * dp * dp);
        x[n - 1 - i] = t;
        x[i] = -t;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
        let (_, d) = legendre_with_derivative(n, 0.0);
        w[n / 2] = 2.0 / (d * d);
    }
    (x, w)
}

/// (P_n(t), P_n'(t)) by the three-term recurrence.
fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p_next = ((2.0 * k - 1.0) * t * p - (k - 1.0) * p_prev) / k;
        p_prev = p;
        p = p_next;
    }
    let d = n as f64 * (t * p - p_prev) / (t * t - 1.0);
    (p, d)
}

/// Monomial moment basis with its evaluations tabulated at the nodes of one
/// quadrature rule.
#[derive(Clone, Debug)]
pub struct MomentBasis {
    order: usize,
    dimension: Dimension,
    basis_size: usize,
    n_q: usize,
    /// Row-major `basis_size x n_q`; row 0 is all ones.
    table: Vec<f64>,
}

impl MomentBasis {
    pub fn new(order: usize, rule: &QuadratureRule) -> Result<Self> {
        let dimension = rule.dimension();
        let size = basis_size(order, dimension)?;
        let n_q = rule.n_q();
        let mut table = vec![0.0; size * n_q];
        for (q, v) in rule.nodes().iter().enumerate() {
            match dimension {
                Dimension::One => {
                    let mut p = 1.0;
                    for i in 0..size {
                        table[i * n_q + q] = p;
                        p *= v[0];
                    }
                }
                Dimension::Two => {
                    table[q] = 1.0;
                    table[n_q + q] = v[0];
                    table[2 * n_q + q] = v[1];
                }
            }
        }
        Ok(MomentBasis {
            order,
            dimension,
            basis_size: size,
            n_q,
            table,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn basis_size(&self) -> usize {
        self.basis_size
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    /// Evaluations of basis function `i` at all quadrature nodes.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.table[i * self.n_q..(i + 1) * self.n_q]
    }

    /// `alpha · m(v_q)` for every node.
    pub fn dot_at_nodes(&self, alpha: &[f64]) -> Vec<f64> {
        assert_eq!(
            alpha.len(),
            self.basis_size,
            "multiplier length {} does not match basis size {}",
            alpha.len(),
            self.basis_size
        );
        let mut out = vec![0.0; self.n_q];
        for (i, &a) in alpha.iter().enumerate() {
            let row = self.row(i);
            for (o, &m) in out.iter_mut().zip(row) {
                *o += a * m;
            }
        }
        out
    }
}

/// Quadrature approximation of the velocity integral `<f>`.
///
/// A length mismatch between the nodal values and the rule is a programming
/// error and panics.
pub fn bracket(values_at_nodes: &[f64], rule: &QuadratureRule) -> f64 {
    assert_eq!(
        values_at_nodes.len(),
        rule.n_q(),
        "nodal vector length {} does not match n_q = {}",
        values_at_nodes.len(),
        rule.n_q()
    );
    let mut acc = 0.0;
    for (w, f) in rule.weights().iter().zip(values_at_nodes) {
        acc += w * f;
    }
    acc
}

/// Moments `u_i = <m_i f>` of a nodal density.
///
/// Small negative nodal values below -1e-12 are reported with a warning but
/// do not fail; component 0 reproduces `bracket` bit for bit.
pub fn moments_of(
    density_at_nodes: &[f64],
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> MomentVector {
    assert_eq!(
        density_at_nodes.len(),
        rule.n_q(),
        "nodal vector length {} does not match n_q = {}",
        density_at_nodes.len(),
        rule.n_q()
    );
    assert_eq!(basis.n_q(), rule.n_q(), "basis tabulated for another rule");
    if let Some(min) = density_at_nodes.iter().cloned().reduce(f64::min) {
        if min < -1e-12 {
            log::warn!("negative nodal density {min:.3e} passed to moments_of");
        }
    }
    let weighted: Vec<f64> = rule
        .weights()
        .iter()
        .zip(density_at_nodes)
        .map(|(w, f)| w * f)
        .collect();
    let mut values = vec![0.0; basis.basis_size()];
    for (i, value) in values.iter_mut().enumerate() {
        let row = basis.row(i);
        let mut acc = 0.0;
        for (m, wf) in row.iter().zip(&weighted) {
            acc += m * wf;
        }
        *value = acc;
    }
    MomentVector {
        values,
        order: basis.order(),
        dimension: basis.dimension(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_rule_is_textbook() {
        let rule = QuadratureRule::gauss_legendre(2).unwrap();
        let c = 1.0 / 3.0_f64.sqrt();
        assert_abs_diff_eq!(rule.nodes()[0][0], -c, epsilon = 1e-15);
        assert_abs_diff_eq!(rule.nodes()[1][0], c, epsilon = 1e-15);
        assert_abs_diff_eq!(rule.weights()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rule.weights()[1], 1.0, epsilon = 1e-15);
        // degree-3 exactness: integral of mu^2 over [-1,1]
        let sq: Vec<f64> = rule.nodes().iter().map(|v| v[0] * v[0]).collect();
        assert_abs_diff_eq!(bracket(&sq, &rule), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_empty_rules() {
        assert!(QuadratureRule::gauss_legendre(0).is_err());
        assert!(QuadratureRule::projected_sphere(0, 4).is_err());
    }

    #[test]
    fn weights_sum_to_measure() {
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        assert_abs_diff_eq!(rule.total_weight(), 2.0, epsilon = 1e-13);
        let rule2 = QuadratureRule::projected_sphere(10, 20).unwrap();
        assert_abs_diff_eq!(
            rule2.total_weight(),
            2.0 * std::f64::consts::PI,
            epsilon = 1e-10
        );
        assert_eq!(rule2.n_q(), 200);
    }

    #[test]
    fn nodes_strictly_interior_and_symmetric() {
        for n in [1, 2, 7, 28, 64] {
            let rule = QuadratureRule::gauss_legendre(n).unwrap();
            for (i, v) in rule.nodes().iter().enumerate() {
                assert!(v[0] > -1.0 && v[0] < 1.0);
                assert_eq!(v[0], -rule.nodes()[n - 1 - i][0]);
            }
            assert!(rule.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn gauss_exactness_on_random_polynomials() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for n in 2..=16usize {
            let rule = QuadratureRule::gauss_legendre(n).unwrap();
            let degree = 2 * n - 1;
            let coeffs: Vec<f64> = (0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let vals: Vec<f64> = rule
                .nodes()
                .iter()
                .map(|v| {
                    coeffs
                        .iter()
                        .rev()
                        .fold(0.0, |acc, &c| acc * v[0] + c)
                })
                .collect();
            // analytic: integral of mu^k over [-1,1] is 0 (odd) or 2/(k+1)
            let exact: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| if k % 2 == 0 { 2.0 * c / (k as f64 + 1.0) } else { 0.0 })
                .sum();
            assert_abs_diff_eq!(bracket(&vals, &rule), exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn bracket_closed_forms() {
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        let ones = vec![1.0; rule.n_q()];
        assert_abs_diff_eq!(bracket(&ones, &rule), 2.0, epsilon = 1e-13);
        let rule2 = QuadratureRule::projected_sphere(10, 20).unwrap();
        let ones2 = vec![1.0; rule2.n_q()];
        assert_abs_diff_eq!(
            bracket(&ones2, &rule2),
            2.0 * std::f64::consts::PI,
            epsilon = 1e-10
        );
        // integral of exp over [-1,1] = e - 1/e
        let ex: Vec<f64> = rule.nodes().iter().map(|v| v[0].exp()).collect();
        assert_abs_diff_eq!(
            bracket(&ex, &rule),
            1f64.exp() - (-1f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn projected_sphere_odd_and_even_integrals() {
        let rule = QuadratureRule::projected_sphere(10, 20).unwrap();
        let vx: Vec<f64> = rule.nodes().iter().map(|v| v[0]).collect();
        assert_abs_diff_eq!(bracket(&vx, &rule), 0.0, epsilon = 1e-12);
        // v_x^2 against a dense reference rule
        let dense = QuadratureRule::projected_sphere(1000, 1000).unwrap();
        let f = |v: &[f64; 2]| v[0] * v[0];
        let coarse = bracket(&rule.nodes().iter().map(f).collect::<Vec<_>>(), &rule);
        let fine = bracket(&dense.nodes().iter().map(f).collect::<Vec<_>>(), &dense);
        assert_abs_diff_eq!(coarse, fine, epsilon = 1e-8);
    }

    #[test]
    fn moments_of_closed_forms() {
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        let m1 = MomentBasis::new(1, &rule).unwrap();
        let half = vec![0.5; rule.n_q()];
        let u = moments_of(&half, &m1, &rule);
        assert_abs_diff_eq!(u.values[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(u.values[1], 0.0, epsilon = 1e-14);

        let m2 = MomentBasis::new(2, &rule).unwrap();
        let ones = vec![1.0; rule.n_q()];
        let u = moments_of(&ones, &m2, &rule);
        assert_abs_diff_eq!(u.values[0], 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(u.values[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(u.values[2], 2.0 / 3.0, epsilon = 1e-13);

        // f = exp(mu): moments [e - 1/e, 2/e] by integration by parts
        let ex: Vec<f64> = rule.nodes().iter().map(|v| v[0].exp()).collect();
        let u = moments_of(&ex, &m1, &rule);
        assert_abs_diff_eq!(u.values[0], 1f64.exp() - (-1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(u.values[1], 2.0 * (-1f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn component_zero_matches_bracket_exactly() {
        let rule = QuadratureRule::gauss_legendre(17).unwrap();
        let basis = MomentBasis::new(3, &rule).unwrap();
        let f: Vec<f64> = rule.nodes().iter().map(|v| (0.3 * v[0]).exp()).collect();
        assert_eq!(moments_of(&f, &basis, &rule).values[0], bracket(&f, &rule));
    }

    #[test]
    fn phi_independent_density_has_zero_first_moments() {
        let rule = QuadratureRule::projected_sphere(8, 16).unwrap();
        let basis = MomentBasis::new(1, &rule).unwrap();
        // density depending only on |v| (hence phi-independent)
        let f: Vec<f64> = rule
            .nodes()
            .iter()
            .map(|v| 1.0 + v[0] * v[0] + v[1] * v[1])
            .collect();
        let u = moments_of(&f, &basis, &rule);
        assert_abs_diff_eq!(u.values[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u.values[2], 0.0, epsilon = 1e-12);
    }
}
