//! Newton solver for the dual entropy closure problem.
//!
//! Minimizes `<exp(alpha · m)> - alpha · u` with exact Hessians, Armijo
//! backtracking, and an escalating diagonal ridge for factorization failures
//! near the realizable boundary. The converged result carries a residual
//! certificate: the gradient sup-norm, which equals the moment
//! reconstruction error `|<m exp(alpha·m)> - u|_inf`.
//!
//! The same solver labels training data and closes the kinetic scheme, so
//! determinism matters: identical inputs and configuration produce identical
//! iterates.

use crate::entropy::{dual_gradient, dual_hessian, dual_objective, entropy_functional};
use crate::error::{Error, Result};
use crate::moments::{LagrangeMultipliers, MomentVector};
use crate::velocity::{MomentBasis, QuadratureRule};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Solver knobs. The defaults keep the gradient tolerance well below
/// single precision so that training labels out-resolve the surrogate.
#[derive(Clone, Debug)]
pub struct NewtonConfig {
    /// Stop when the gradient sup-norm drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Multiplicative step shrink factor of the backtracking line search.
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// First ridge added to the Hessian diagonal on factorization failure;
    /// grows tenfold up to [`NewtonConfig::ridge_cap`].
    pub ridge_floor: f64,
    pub ridge_cap: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tolerance: 1e-8,
            max_iterations: 200,
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 60,
            ridge_floor: 1e-10,
            ridge_cap: 1e-2,
        }
    }
}

impl NewtonConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        NewtonConfig {
            tolerance,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tolerance <= 0.0 {
            return Err(Error::Config("newton tolerance must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.shrink) || self.shrink == 0.0 {
            return Err(Error::Config("line-search shrink must be in (0,1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one dual solve.
#[derive(Clone, Debug)]
pub struct ClosureResult {
    pub alpha: LagrangeMultipliers,
    /// Minimal entropy `alpha · u - <exp(alpha · m)>` at the final iterate.
    pub h: f64,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub converged: bool,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Isotropic multipliers with the same mass as `u`; exact for equilibrium
/// inputs and a safe starting point everywhere.
fn cold_start(u: &MomentVector, basis: &MomentBasis, rule: &QuadratureRule) -> LagrangeMultipliers {
    let mut values = vec![0.0; basis.basis_size()];
    values[0] = (u.u0() / rule.total_weight()).ln();
    LagrangeMultipliers::new(values)
}

/// Solve the dual problem for one moment vector.
///
/// Non-convergence within the iteration budget is reported through the
/// `converged` flag, not an error; a Hessian that cannot be factorized even
/// with the full ridge ladder aborts with a boundary-proximity error.
pub fn solve_dual(
    u: &MomentVector,
    warm_start: Option<&LagrangeMultipliers>,
    cfg: &NewtonConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<ClosureResult> {
    cfg.validate()?;
    if !(u.u0() > 0.0) || u.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "dual solve requires finite moments with u0 > 0, got {:?}",
            u.values
        )));
    }

    let mut alpha = warm_start
        .cloned()
        .unwrap_or_else(|| cold_start(u, basis, rule));
    let mut objective = match dual_objective(&alpha, u, basis, rule) {
        Ok(v) => v,
        // a warm start past the overflow guard is useless; restart cold
        Err(Error::Overflow { .. }) => {
            alpha = cold_start(u, basis, rule);
            dual_objective(&alpha, u, basis, rule)?
        }
        Err(e) => return Err(e),
    };

    let n = basis.basis_size();
    let mut iterations = 0;
    let mut gradient_norm;
    loop {
        let g = dual_gradient(&alpha, u, basis, rule)?;
        gradient_norm = sup_norm(&g);
        if gradient_norm <= cfg.tolerance {
            let h = entropy_functional(u, &alpha, basis, rule)?;
            return Ok(ClosureResult {
                alpha,
                h,
                iterations,
                final_gradient_norm: gradient_norm,
                converged: true,
            });
        }
        if iterations >= cfg.max_iterations {
            break;
        }

        let hessian = dual_hessian(&alpha, basis, rule)?;
        let direction = factor_and_solve(&hessian, &g, n, cfg)?;
        let slope: f64 = g.iter().zip(direction.iter()).map(|(a, b)| a * b).sum();

        // Full Newton step first, then Armijo backtracking. Trial points
        // past the overflow guard are rejected like any insufficient step.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..cfg.max_backtracks {
            let trial = LagrangeMultipliers::new(
                alpha
                    .as_slice()
                    .iter()
                    .zip(direction.iter())
                    .map(|(a, d)| a + step * d)
                    .collect(),
            );
            match dual_objective(&trial, u, basis, rule) {
                Ok(trial_objective)
                    if trial_objective <= objective + cfg.armijo * step * slope =>
                {
                    alpha = trial;
                    objective = trial_objective;
                    accepted = true;
                    break;
                }
                Ok(_) | Err(Error::Overflow { .. }) => step *= cfg.shrink,
                Err(e) => return Err(e),
            }
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }

    let h = entropy_functional(u, &alpha, basis, rule)?;
    Ok(ClosureResult {
        alpha,
        h,
        iterations,
        final_gradient_norm: gradient_norm,
        converged: false,
    })
}

/// Newton direction `-H^{-1} g`, with a tenfold ridge ladder on Cholesky
/// failure.
fn factor_and_solve(
    hessian: &DMatrix<f64>,
    g: &[f64],
    n: usize,
    cfg: &NewtonConfig,
) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(g);
    let mut ridge = 0.0;
    loop {
        let mut m = hessian.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            let d = chol.solve(&rhs);
            return Ok(d.iter().map(|v| -v).collect());
        }
        ridge = if ridge == 0.0 {
            cfg.ridge_floor
        } else {
            ridge * 10.0
        };
        if ridge > cfg.ridge_cap {
            return Err(Error::BoundaryProximity { ridge });
        }
    }
}

/// Element-wise [`solve_dual`] over a batch, cold-started and distributed
/// across cores. Failures stay per element; order is preserved.
pub fn solve_dual_batch(
    us: &[MomentVector],
    cfg: &NewtonConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Vec<Result<ClosureResult>> {
    us.par_iter()
        .map(|u| solve_dual(u, None, cfg, basis, rule))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::Dimension;
    use approx::assert_abs_diff_eq;

    fn setup(order: usize) -> (MomentBasis, QuadratureRule) {
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        let basis = MomentBasis::new(order, &rule).unwrap();
        (basis, rule)
    }

    #[test]
    fn isotropic_inputs_converge_immediately() {
        let (basis, rule) = setup(1);
        let cfg = NewtonConfig::default();
        let u = MomentVector::new(vec![1.0, 0.0], 1, Dimension::One).unwrap();
        let res = solve_dual(&u, None, &cfg, &basis, &rule).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 3);
        assert_abs_diff_eq!(res.alpha.values[0], -(2f64.ln()), epsilon = 1e-10);
        assert_abs_diff_eq!(res.alpha.values[1], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(res.h, -(2f64.ln()) - 1.0, epsilon = 1e-10);

        let u = MomentVector::new(vec![2.0, 0.0], 1, Dimension::One).unwrap();
        let res = solve_dual(&u, None, &cfg, &basis, &rule).unwrap();
        assert_abs_diff_eq!(res.alpha.values[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(res.alpha.values[1], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(res.h, -2.0, epsilon = 1e-10);
    }

    #[test]
    fn near_boundary_needs_more_iterations_but_certifies() {
        let (basis, rule) = setup(1);
        let cfg = NewtonConfig::default();
        let easy = MomentVector::new(vec![1.0, 0.1], 1, Dimension::One).unwrap();
        let hard = MomentVector::new(vec![1.0, 0.9], 1, Dimension::One).unwrap();
        let easy_res = solve_dual(&easy, None, &cfg, &basis, &rule).unwrap();
        let hard_res = solve_dual(&hard, None, &cfg, &basis, &rule).unwrap();
        assert!(easy_res.converged && hard_res.converged);
        assert!(hard_res.iterations > easy_res.iterations);
        for (u, res) in [(&easy, &easy_res), (&hard, &hard_res)] {
            let g = dual_gradient(&res.alpha, u, &basis, &rule).unwrap();
            assert!(sup_norm(&g) <= cfg.tolerance);
        }
    }

    #[test]
    fn entropy_matches_nodal_quadrature_of_eta() {
        use crate::entropy::{eta, reconstruct_density};
        use crate::velocity::bracket;
        let (basis, rule) = setup(2);
        let cfg = NewtonConfig::with_tolerance(1e-12);
        let u = MomentVector::new(vec![1.0, 0.2, 0.4], 2, Dimension::One).unwrap();
        let res = solve_dual(&u, None, &cfg, &basis, &rule).unwrap();
        assert!(res.converged);
        let f = reconstruct_density(&res.alpha, &basis, &rule).unwrap();
        let eta_f: Vec<f64> = f.iter().map(|&z| eta(z).unwrap()).collect();
        assert!((bracket(&eta_f, &rule) - res.h).abs() < 1e-10);
    }

    #[test]
    fn descent_is_monotone() {
        let (basis, rule) = setup(2);
        // instrument by re-running with shrinking max_iterations
        let u = MomentVector::new(vec![1.0, 0.55, 0.5], 2, Dimension::One).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=12 {
            let cfg = NewtonConfig {
                max_iterations: k,
                tolerance: 1e-15,
                ..Default::default()
            };
            let res = solve_dual(&u, None, &cfg, &basis, &rule).unwrap();
            let obj = dual_objective(&res.alpha, &u, &basis, &rule).unwrap();
            assert!(obj <= last + 1e-12);
            last = obj;
        }
    }

    #[test]
    fn warm_start_dominates_cold_start() {
        use rand::prelude::*;
        let (basis, rule) = setup(1);
        let cfg = NewtonConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut wins = 0;
        let total = 1000;
        for _ in 0..total {
            let target: f64 = rng.gen_range(-0.95..0.95);
            let neighbor = (target + 0.02).clamp(-0.95, 0.95);
            let u_t = MomentVector::new(vec![1.0, target], 1, Dimension::One).unwrap();
            let u_n = MomentVector::new(vec![1.0, neighbor], 1, Dimension::One).unwrap();
            let warm = solve_dual(&u_n, None, &cfg, &basis, &rule).unwrap();
            let cold = solve_dual(&u_t, None, &cfg, &basis, &rule).unwrap();
            let warmed = solve_dual(&u_t, Some(&warm.alpha), &cfg, &basis, &rule).unwrap();
            if warmed.iterations <= cold.iterations {
                wins += 1;
            }
        }
        assert!(wins * 10 >= total * 9, "warm start won only {wins}/{total}");
    }

    #[test]
    fn batch_matches_serial_map_bitwise() {
        let (basis, rule) = setup(1);
        let cfg = NewtonConfig::default();
        let us: Vec<MomentVector> = [0.0, 0.0, 0.0, 0.3, -0.7, 0.85]
            .iter()
            .map(|&c| MomentVector::new(vec![1.0, c], 1, Dimension::One).unwrap())
            .collect();
        let batch = solve_dual_batch(&us, &cfg, &basis, &rule);
        for (u, res) in us.iter().zip(batch) {
            let serial = solve_dual(u, None, &cfg, &basis, &rule).unwrap();
            let res = res.unwrap();
            assert_eq!(serial.alpha.values, res.alpha.values);
            assert_eq!(serial.h, res.h);
            assert_eq!(serial.iterations, res.iterations);
        }
    }

    #[test]
    fn batch_parallel_speedup_is_observable() {
        if std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1) < 2 {
            return;
        }
        use rand::prelude::*;
        let (basis, rule) = setup(1);
        let cfg = NewtonConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let us: Vec<MomentVector> = (0..10_000)
            .map(|_| {
                MomentVector::new(vec![1.0, rng.gen_range(-0.95..0.95)], 1, Dimension::One)
                    .unwrap()
            })
            .collect();
        let t0 = std::time::Instant::now();
        for u in &us {
            solve_dual(u, None, &cfg, &basis, &rule).unwrap();
        }
        let serial = t0.elapsed();
        let t1 = std::time::Instant::now();
        let _ = solve_dual_batch(&us, &cfg, &basis, &rule);
        let parallel = t1.elapsed();
        assert!(
            parallel < serial,
            "parallel batch ({parallel:?}) not faster than serial ({serial:?})"
        );
    }

    #[test]
    fn scaling_law_relates_solutions() {
        let (basis, rule) = setup(1);
        let cfg = NewtonConfig::with_tolerance(1e-11);
        let u = MomentVector::new(vec![1.0, 0.4], 1, Dimension::One).unwrap();
        let base = solve_dual(&u, None, &cfg, &basis, &rule).unwrap();
        for c in [0.1, 2.0, 10.0] {
            let scaled = MomentVector::new(vec![c, c * 0.4], 1, Dimension::One).unwrap();
            let res = solve_dual(&scaled, None, &cfg, &basis, &rule).unwrap();
            assert!((res.alpha.values[0] - (base.alpha.values[0] + c.ln())).abs() < 1e-8);
            assert!((res.alpha.values[1] - base.alpha.values[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_nonpositive_mass() {
        let (basis, rule) = setup(1);
        let u = MomentVector::new(vec![0.0, 0.0], 1, Dimension::One).unwrap();
        assert!(solve_dual(&u, None, &NewtonConfig::default(), &basis, &rule).is_err());
    }
}
