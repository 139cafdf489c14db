//! Maxwell-Boltzmann entropy pair and the dual objective of the minimal
//! entropy closure.
//!
//! The kinetic entropy density is `eta(z) = z ln z - z` with Legendre dual
//! `eta*(y) = exp(y)`. For moments `u` the closure solves
//!
//! ```text
//!   min_alpha  <exp(alpha · m)> - alpha · u
//! ```
//!
//! (the negated dual problem, oriented as a convex minimization). At the
//! optimum the reconstructed density `f = exp(alpha · m)` reproduces `u`,
//! and the minimal entropy of `u` is `h = alpha · u - <exp(alpha · m)>`.
//!
//! Every exponential is guarded at 700 to fail loudly near the realizable
//! boundary instead of silently returning infinities.

use crate::error::{Error, Result};
use crate::moments::{LagrangeMultipliers, MomentVector};
use crate::velocity::{moments_of, MomentBasis, QuadratureRule};
use nalgebra::DMatrix;

/// Largest admissible exponent; exp overflows to inf just above 709.
pub const EXP_GUARD: f64 = 700.0;

/// Kinetic entropy density `eta(z) = z ln z - z`, defined for `z > 0`.
pub fn eta(z: f64) -> Result<f64> {
    if z <= 0.0 {
        return Err(Error::Domain(format!("eta requires z > 0, got {z}")));
    }
    Ok(z * z.ln() - z)
}

/// `eta'(z) = ln z`, defined for `z > 0`.
pub fn eta_prime(z: f64) -> Result<f64> {
    if z <= 0.0 {
        return Err(Error::Domain(format!("eta' requires z > 0, got {z}")));
    }
    Ok(z.ln())
}

/// Legendre dual `eta*(y) = exp(y)`.
pub fn eta_star(y: f64) -> f64 {
    y.exp()
}

/// `(eta*)'(y) = exp(y)`.
pub fn eta_star_prime(y: f64) -> f64 {
    y.exp()
}

fn guarded_exp(exponent: f64, node: usize) -> Result<f64> {
    if exponent > EXP_GUARD {
        return Err(Error::Overflow { node, exponent });
    }
    Ok(exponent.exp())
}

/// Density `f_q = exp(alpha · m(v_q))` at every quadrature node.
///
/// Positive by construction; exponents past the guard report the offending
/// node.
pub fn reconstruct_density(
    alpha: &LagrangeMultipliers,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    check_alpha_shape(alpha, basis)?;
    let exponents = basis.dot_at_nodes(alpha.as_slice());
    let _ = rule;
    exponents
        .into_iter()
        .enumerate()
        .map(|(q, e)| guarded_exp(e, q))
        .collect()
}

fn check_alpha_shape(alpha: &LagrangeMultipliers, basis: &MomentBasis) -> Result<()> {
    if alpha.len() != basis.basis_size() {
        return Err(Error::Shape(format!(
            "multiplier length {} does not match basis size {}",
            alpha.len(),
            basis.basis_size()
        )));
    }
    Ok(())
}

fn check_pair_shape(
    alpha: &LagrangeMultipliers,
    u: &MomentVector,
    basis: &MomentBasis,
) -> Result<()> {
    check_alpha_shape(alpha, basis)?;
    if u.len() != basis.basis_size() {
        return Err(Error::Shape(format!(
            "moment length {} does not match basis size {}",
            u.len(),
            basis.basis_size()
        )));
    }
    Ok(())
}

/// Negated dual objective `<exp(alpha · m)> - alpha · u`; strictly convex
/// in `alpha`.
pub fn dual_objective(
    alpha: &LagrangeMultipliers,
    u: &MomentVector,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_pair_shape(alpha, u, basis)?;
    let f = reconstruct_density(alpha, basis, rule)?;
    let integral: f64 = rule.weights().iter().zip(&f).map(|(w, f)| w * f).sum();
    let linear: f64 = alpha
        .as_slice()
        .iter()
        .zip(u.as_slice())
        .map(|(a, u)| a * u)
        .sum();
    Ok(integral - linear)
}

/// Gradient `<m exp(alpha · m)> - u` of the negated dual objective; zero at
/// the optimum.
pub fn dual_gradient(
    alpha: &LagrangeMultipliers,
    u: &MomentVector,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    check_pair_shape(alpha, u, basis)?;
    let f = reconstruct_density(alpha, basis, rule)?;
    let recon = moments_of(&f, basis, rule);
    Ok(recon
        .values
        .iter()
        .zip(u.as_slice())
        .map(|(r, u)| r - u)
        .collect())
}

/// Hessian `<m (X) m exp(alpha · m)>`; symmetric, and positive definite for
/// finite multipliers when the rule has at least `basis_size` nodes.
pub fn dual_hessian(
    alpha: &LagrangeMultipliers,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    check_alpha_shape(alpha, basis)?;
    let f = reconstruct_density(alpha, basis, rule)?;
    let n = basis.basis_size();
    let weighted: Vec<f64> = rule.weights().iter().zip(&f).map(|(w, f)| w * f).collect();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let row_i = basis.row(i);
        for j in i..n {
            let row_j = basis.row(j);
            let mut acc = 0.0;
            for ((mi, mj), wf) in row_i.iter().zip(row_j).zip(&weighted) {
                acc += mi * mj * wf;
            }
            h[(i, j)] = acc;
            h[(j, i)] = acc;
        }
    }
    Ok(h)
}

/// Minimal entropy `h(u) = alpha · u - <exp(alpha · m)>` for a dual-optimal
/// (or near-optimal) pair.
///
/// This algebraic form is the only runtime path; agreement with `<eta(f_u)>`
/// is checked in the test suite, not recomputed here.
pub fn entropy_functional(
    u: &MomentVector,
    alpha: &LagrangeMultipliers,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_pair_shape(alpha, u, basis)?;
    let f = reconstruct_density(alpha, basis, rule)?;
    let integral: f64 = rule.weights().iter().zip(&f).map(|(w, f)| w * f).sum();
    let linear: f64 = alpha
        .as_slice()
        .iter()
        .zip(u.as_slice())
        .map(|(a, u)| a * u)
        .sum();
    Ok(linear - integral)
}

/// Dependent multiplier `alpha_0 = -ln <exp(alpha^r · m^r)>` that gives the
/// assembled `[alpha_0, alpha^r]` unit mass.
pub fn alpha_zero_from_reduced(
    alpha_r: &[f64],
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<f64> {
    if alpha_r.len() + 1 != basis.basis_size() {
        return Err(Error::Shape(format!(
            "reduced multiplier length {} does not match basis size {}",
            alpha_r.len(),
            basis.basis_size()
        )));
    }
    let mut acc = 0.0;
    for q in 0..rule.n_q() {
        let mut e = 0.0;
        for (i, a) in alpha_r.iter().enumerate() {
            e += a * basis.row(i + 1)[q];
        }
        acc += rule.weights()[q] * guarded_exp(e, q)?;
    }
    if acc <= 0.0 || !acc.is_finite() {
        return Err(Error::Domain(format!(
            "partition integral {acc:.3e} is not a positive finite number"
        )));
    }
    Ok(-acc.ln())
}

/// Shift the zero component by `ln u0`: the multipliers of `u = u0 * ubar`
/// are those of `ubar` with `alpha_0 + ln u0`.
pub fn rescale_alpha(alpha_normalized: &LagrangeMultipliers, u0: f64) -> Result<LagrangeMultipliers> {
    if u0 <= 0.0 {
        return Err(Error::Domain(format!("rescale_alpha requires u0 > 0, got {u0}")));
    }
    let mut values = alpha_normalized.values.clone();
    values[0] += u0.ln();
    Ok(LagrangeMultipliers::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::Dimension;
    use approx::assert_abs_diff_eq;

    fn setup_1d(order: usize) -> (MomentBasis, QuadratureRule) {
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        let basis = MomentBasis::new(order, &rule).unwrap();
        (basis, rule)
    }

    #[test]
    fn entropy_pair_pointwise() {
        assert_abs_diff_eq!(eta(1.0).unwrap(), -1.0);
        assert_abs_diff_eq!(eta_star(0.0), 1.0);
        assert!(eta(0.0).is_err());
        assert!(eta_prime(-1.0).is_err());
        // Legendre pair identities
        assert_abs_diff_eq!(eta(eta_star_prime(0.0)).unwrap(), -1.0, epsilon = 1e-14);
        for y in [-1.3, 0.0, 0.7, 2.5] {
            assert_abs_diff_eq!(eta_prime(eta_star_prime(y)).unwrap(), y, epsilon = 1e-14);
        }
    }

    #[test]
    fn reconstruct_constant_densities() {
        let (basis, rule) = setup_1d(1);
        let f = reconstruct_density(
            &LagrangeMultipliers::new(vec![0.0, 0.0]),
            &basis,
            &rule,
        )
        .unwrap();
        assert!(f.iter().all(|&v| v == 1.0));
        let f = reconstruct_density(
            &LagrangeMultipliers::new(vec![-(2f64.ln()), 0.0]),
            &basis,
            &rule,
        )
        .unwrap();
        for v in f {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-16);
        }
        let f = reconstruct_density(&LagrangeMultipliers::new(vec![0.0, 1.0]), &basis, &rule)
            .unwrap();
        let u = moments_of(&f, &basis, &rule);
        assert_abs_diff_eq!(u.values[0], 1f64.exp() - (-1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(u.values[1], 2.0 * (-1f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn overflow_is_reported_with_node() {
        let (basis, rule) = setup_1d(1);
        let err = reconstruct_density(
            &LagrangeMultipliers::new(vec![800.0, 0.0]),
            &basis,
            &rule,
        )
        .unwrap_err();
        match err {
            Error::Overflow { exponent, .. } => assert!(exponent > 700.0),
            other => panic!("expected overflow, got {other}"),
        }
    }

    #[test]
    fn dual_objective_values() {
        let (basis, rule) = setup_1d(1);
        let u = MomentVector::new(vec![2.0, 0.0], 1, Dimension::One).unwrap();
        let alpha = LagrangeMultipliers::new(vec![0.0, 0.0]);
        assert_abs_diff_eq!(
            dual_objective(&alpha, &u, &basis, &rule).unwrap(),
            2.0,
            epsilon = 1e-13
        );
        let u = MomentVector::new(vec![1.0, 0.0], 1, Dimension::One).unwrap();
        let alpha = LagrangeMultipliers::new(vec![-(2f64.ln()), 0.0]);
        assert_abs_diff_eq!(
            dual_objective(&alpha, &u, &basis, &rule).unwrap(),
            1.0 + 2f64.ln(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn dual_gradient_values() {
        let (basis, rule) = setup_1d(1);
        let u = MomentVector::new(vec![1.0, 0.0], 1, Dimension::One).unwrap();
        let g = dual_gradient(
            &LagrangeMultipliers::new(vec![-(2f64.ln()), 0.0]),
            &u,
            &basis,
            &rule,
        )
        .unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-14);

        let u = MomentVector::new(vec![2.0, 0.0], 1, Dimension::One).unwrap();
        let g = dual_gradient(&LagrangeMultipliers::new(vec![0.0, 0.0]), &u, &basis, &rule)
            .unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-14);

        let u = MomentVector::new(vec![0.0, 0.0], 1, Dimension::One).unwrap();
        let g = dual_gradient(&LagrangeMultipliers::new(vec![0.0, 1.0]), &u, &basis, &rule)
            .unwrap();
        assert_abs_diff_eq!(g[0], 1f64.exp() - (-1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 2.0 * (-1f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (basis, rule) = setup_1d(2);
        let u = MomentVector::new(vec![1.3, 0.2, 0.5], 2, Dimension::One).unwrap();
        let alpha = LagrangeMultipliers::new(vec![-0.4, 0.6, -0.3]);
        let g = dual_gradient(&alpha, &u, &basis, &rule).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut ap = alpha.clone();
            let mut am = alpha.clone();
            ap.values[i] += h;
            am.values[i] -= h;
            let fd = (dual_objective(&ap, &u, &basis, &rule).unwrap()
                - dual_objective(&am, &u, &basis, &rule).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() / g[i].abs().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn hessian_values_symmetry_and_fd() {
        let (basis, rule) = setup_1d(1);
        let h = dual_hessian(&LagrangeMultipliers::new(vec![0.0, 0.0]), &basis, &rule).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(h[(0, 1)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h[(1, 1)], 2.0 / 3.0, epsilon = 1e-13);

        let alpha = LagrangeMultipliers::new(vec![0.3, -0.8]);
        let h = dual_hessian(&alpha, &basis, &rule).unwrap();
        assert_eq!(h[(0, 1)], h[(1, 0)]);

        // finite differences of the gradient
        let u = MomentVector::new(vec![1.0, 0.1], 1, Dimension::One).unwrap();
        let step = 1e-6;
        for j in 0..2 {
            let mut ap = alpha.clone();
            let mut am = alpha.clone();
            ap.values[j] += step;
            am.values[j] -= step;
            let gp = dual_gradient(&ap, &u, &basis, &rule).unwrap();
            let gm = dual_gradient(&am, &u, &basis, &rule).unwrap();
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * step);
                assert!((fd - h[(i, j)]).abs() / h[(i, j)].abs().max(1.0) < 1e-5);
            }
        }
    }

    #[test]
    fn entropy_functional_values() {
        let (basis, rule) = setup_1d(1);
        let u = MomentVector::new(vec![1.0, 0.0], 1, Dimension::One).unwrap();
        let alpha = LagrangeMultipliers::new(vec![-(2f64.ln()), 0.0]);
        assert_abs_diff_eq!(
            entropy_functional(&u, &alpha, &basis, &rule).unwrap(),
            -(2f64.ln()) - 1.0,
            epsilon = 1e-13
        );
        let u = MomentVector::new(vec![2.0, 0.0], 1, Dimension::One).unwrap();
        let alpha = LagrangeMultipliers::new(vec![0.0, 0.0]);
        assert_abs_diff_eq!(
            entropy_functional(&u, &alpha, &basis, &rule).unwrap(),
            -2.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn alpha_zero_normalizes_mass() {
        let (basis, rule) = setup_1d(1);
        assert_abs_diff_eq!(
            alpha_zero_from_reduced(&[0.0], &basis, &rule).unwrap(),
            -(2f64.ln()),
            epsilon = 1e-14
        );
        let rule2 = QuadratureRule::projected_sphere(10, 20).unwrap();
        let basis2 = MomentBasis::new(1, &rule2).unwrap();
        assert_abs_diff_eq!(
            alpha_zero_from_reduced(&[0.0, 0.0], &basis2, &rule2).unwrap(),
            -(2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-14
        );
        // alpha^r = 1: normalized first moment is coth(1) - 1
        let a0 = alpha_zero_from_reduced(&[1.0], &basis, &rule).unwrap();
        let alpha = LagrangeMultipliers::from_reduced(a0, &[1.0]);
        let f = reconstruct_density(&alpha, &basis, &rule).unwrap();
        let u = moments_of(&f, &basis, &rule);
        assert_abs_diff_eq!(u.values[0], 1.0, epsilon = 1e-12);
        let coth1 = 1f64.cosh() / 1f64.sinh();
        assert_abs_diff_eq!(u.values[1], coth1 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rescale_shifts_only_component_zero() {
        let alpha = LagrangeMultipliers::new(vec![-(2f64.ln()), 0.0]);
        let scaled = rescale_alpha(&alpha, 2.0).unwrap();
        assert_abs_diff_eq!(scaled.values[0], 0.0, epsilon = 1e-15);
        assert_eq!(scaled.values[1], 0.0);
        let same = rescale_alpha(&alpha, 1.0).unwrap();
        assert_eq!(same, alpha);
        assert!(rescale_alpha(&alpha, 0.0).is_err());
    }
}
