//! Geometry of the realizable set in normalized, reduced coordinates.
//!
//! Normalization divides a moment vector by its density `u0`; the reduced
//! vector drops the leading one. In 1D the interior of the realizable set is
//! cut out by an explicit chain of inequalities up to order four; in 2D the
//! first-order condition is `|ubar^r| < 1`. The reported margin is the
//! minimum slack over the active inequalities and doubles as the boundary
//! distance proxy used by the training-data samplers.

use crate::error::{Error, Result};
use crate::moments::{Dimension, MomentVector};

/// Reduced normalized moments `[u1/u0, ..., uN/u0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedMoments {
    pub values: Vec<f64>,
    pub order: usize,
    pub dimension: Dimension,
}

/// The inequality that attains the minimum slack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    U1Upper,
    U1Lower,
    U2Upper,
    U2Lower,
    U3Upper,
    U3Lower,
    U4Upper,
    U4Lower,
    NormBound,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Constraint::U1Upper => "u1 <= 1",
            Constraint::U1Lower => "u1 >= -1",
            Constraint::U2Upper => "u2 <= 1",
            Constraint::U2Lower => "u2 >= u1^2",
            Constraint::U3Upper => "u3 upper bound",
            Constraint::U3Lower => "u3 lower bound",
            Constraint::U4Upper => "u4 upper bound",
            Constraint::U4Lower => "u4 lower bound",
            Constraint::NormBound => "|u^r| <= 1",
        };
        f.write_str(s)
    }
}

/// Outcome of a realizability query. `realizable` holds exactly when the
/// margin is strictly positive; the boundary itself reports margin zero.
#[derive(Clone, Debug)]
pub struct RealizabilityReport {
    pub realizable: bool,
    pub margin: f64,
    pub binding_constraint: Constraint,
}

impl RealizabilityReport {
    fn from_slacks(slacks: &[(Constraint, f64)]) -> Self {
        let (binding, margin) = slacks
            .iter()
            .fold((slacks[0].0, f64::INFINITY), |(bc, bm), &(c, m)| {
                if m < bm {
                    (c, m)
                } else {
                    (bc, bm)
                }
            });
        RealizabilityReport {
            realizable: margin > 0.0,
            margin,
            binding_constraint: binding,
        }
    }
}

/// Split `u` into its density and reduced normalized coordinates.
pub fn normalize(u: &MomentVector) -> Result<(f64, ReducedMoments)> {
    let u0 = u.u0();
    if u0 <= 0.0 {
        return Err(Error::Domain(format!(
            "normalization requires u0 > 0, got {u0}"
        )));
    }
    Ok((
        u0,
        ReducedMoments {
            values: u.values[1..].iter().map(|v| v / u0).collect(),
            order: u.order,
            dimension: u.dimension,
        },
    ))
}

/// Inverse of [`normalize`].
pub fn denormalize(u0: f64, reduced: &ReducedMoments) -> MomentVector {
    let mut values = Vec::with_capacity(reduced.values.len() + 1);
    values.push(u0);
    values.extend(reduced.values.iter().map(|v| v * u0));
    MomentVector {
        values,
        order: reduced.order,
        dimension: reduced.dimension,
    }
}

/// Denominators this close to zero are treated as sitting on the boundary
/// instead of dividing.
const DENOM_GUARD: f64 = 1e-14;

/// 1D realizability chain for orders one to four.
pub fn check_kershaw_1d(reduced: &ReducedMoments) -> Result<RealizabilityReport> {
    if reduced.dimension != Dimension::One {
        return Err(Error::Config(
            "the 1D inequality chain only applies to 1D moments".into(),
        ));
    }
    let n = reduced.order;
    if n == 0 || n > 4 || reduced.values.len() != n {
        return Err(Error::Config(format!(
            "1D realizability check supports orders 1..=4, got order {n} with {} entries",
            reduced.values.len()
        )));
    }
    let v = &reduced.values;
    let mut slacks = vec![
        (Constraint::U1Upper, 1.0 - v[0]),
        (Constraint::U1Lower, v[0] + 1.0),
    ];
    if n >= 2 {
        slacks.push((Constraint::U2Upper, 1.0 - v[1]));
        slacks.push((Constraint::U2Lower, v[1] - v[0] * v[0]));
    }
    if n >= 3 {
        let d_minus = 1.0 - v[0];
        let d_plus = 1.0 + v[0];
        if d_minus.abs() < DENOM_GUARD {
            slacks.push((Constraint::U3Upper, 0.0));
        } else {
            let upper = v[1] - (v[0] - v[1]).powi(2) / d_minus;
            slacks.push((Constraint::U3Upper, upper - v[2]));
        }
        if d_plus.abs() < DENOM_GUARD {
            slacks.push((Constraint::U3Lower, 0.0));
        } else {
            let lower = -v[1] + (v[0] + v[1]).powi(2) / d_plus;
            slacks.push((Constraint::U3Lower, v[2] - lower));
        }
    }
    if n >= 4 {
        let d_var = v[1] - v[0] * v[0];
        let d_top = 1.0 - v[1];
        if d_var.abs() < DENOM_GUARD {
            slacks.push((Constraint::U4Upper, 0.0));
        } else {
            let upper = (v[1].powi(3) - v[2] * v[2] + 2.0 * v[0] * v[1] * v[2]) / d_var;
            slacks.push((Constraint::U4Upper, upper - v[3]));
        }
        if d_top.abs() < DENOM_GUARD {
            slacks.push((Constraint::U4Lower, 0.0));
        } else {
            let lower = v[1] - (v[0] - v[2]).powi(2) / d_top;
            slacks.push((Constraint::U4Lower, v[3] - lower));
        }
    }
    Ok(RealizabilityReport::from_slacks(&slacks))
}

/// First-order norm condition `|ubar^r|_2 <= 1`.
pub fn check_m1_norm(reduced: &ReducedMoments) -> Result<RealizabilityReport> {
    if reduced.order != 1 {
        return Err(Error::Config(format!(
            "the norm condition only applies to first-order moments, got order {}",
            reduced.order
        )));
    }
    let norm = reduced.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let margin = 1.0 - norm;
    Ok(RealizabilityReport {
        realizable: margin > 0.0,
        margin,
        binding_constraint: Constraint::NormBound,
    })
}

/// Dispatch to the check that is valid for the basis tag: the inequality
/// chain in 1D, the norm condition for 2D M1.
pub fn check(reduced: &ReducedMoments) -> Result<RealizabilityReport> {
    match reduced.dimension {
        Dimension::One => check_kershaw_1d(reduced),
        Dimension::Two => check_m1_norm(reduced),
    }
}

/// Margin of a realizable point, used as the sampler's distance proxy.
/// Non-realizable input is a domain error.
pub fn boundary_distance(reduced: &ReducedMoments) -> Result<f64> {
    let report = check(reduced)?;
    if !report.realizable {
        return Err(Error::NotRealizable {
            margin: report.margin,
            binding: report.binding_constraint.to_string(),
        });
    }
    Ok(report.margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn reduced_1d(values: Vec<f64>) -> ReducedMoments {
        let order = values.len();
        ReducedMoments {
            values,
            order,
            dimension: Dimension::One,
        }
    }

    #[test]
    fn normalize_examples() {
        let u = MomentVector::new(vec![2.0, 1.0], 1, Dimension::One).unwrap();
        let (u0, r) = normalize(&u).unwrap();
        assert_eq!(u0, 2.0);
        assert_eq!(r.values, vec![0.5]);

        let u = MomentVector::new(vec![1.0, 0.3, 0.3], 1, Dimension::Two).unwrap();
        let (u0, r) = normalize(&u).unwrap();
        assert_eq!(u0, 1.0);
        assert_eq!(r.values, vec![0.3, 0.3]);

        let bad = MomentVector::new(vec![0.0, 0.0], 1, Dimension::One).unwrap();
        assert!(normalize(&bad).is_err());
    }

    #[test]
    fn kershaw_first_and_second_order() {
        let r = check_kershaw_1d(&reduced_1d(vec![0.5])).unwrap();
        assert!(r.realizable);
        assert_abs_diff_eq!(r.margin, 0.5);
        assert_eq!(r.binding_constraint, Constraint::U1Upper);

        // lower parabola boundary
        let r = check_kershaw_1d(&reduced_1d(vec![0.5, 0.25])).unwrap();
        assert_abs_diff_eq!(r.margin, 0.0);
        assert!(!r.realizable);
        assert_eq!(r.binding_constraint, Constraint::U2Lower);

        let r = check_kershaw_1d(&reduced_1d(vec![0.0, 0.5])).unwrap();
        assert!(r.realizable);
        assert_abs_diff_eq!(r.margin, 0.5);
    }

    #[test]
    fn kershaw_guarded_denominators() {
        // u1 = 1 makes the third-order upper bound denominator vanish
        let r = check_kershaw_1d(&reduced_1d(vec![1.0, 1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(r.margin, 0.0);
        // u2 = u1^2 makes the fourth-order upper bound denominator vanish
        let r = check_kershaw_1d(&reduced_1d(vec![0.5, 0.25, 0.125, 0.0625])).unwrap();
        assert_abs_diff_eq!(r.margin, 0.0);
    }

    #[test]
    fn m1_norm_examples() {
        let r = check_m1_norm(&ReducedMoments {
            values: vec![0.3, 0.3],
            order: 1,
            dimension: Dimension::Two,
        })
        .unwrap();
        assert!(r.realizable);
        assert_abs_diff_eq!(r.margin, 1.0 - 0.3 * 2.0f64.sqrt(), epsilon = 1e-15);

        let r = check_m1_norm(&reduced_1d(vec![1.0])).unwrap();
        assert_abs_diff_eq!(r.margin, 0.0);
        assert!(!r.realizable);

        let r = check_m1_norm(&ReducedMoments {
            values: vec![0.8, 0.8],
            order: 1,
            dimension: Dimension::Two,
        })
        .unwrap();
        assert!(!r.realizable);
    }

    #[test]
    fn boundary_distance_matches_margin() {
        let r = reduced_1d(vec![0.5]);
        assert_abs_diff_eq!(boundary_distance(&r).unwrap(), 0.5);
        let r2 = ReducedMoments {
            values: vec![0.3, 0.3],
            order: 1,
            dimension: Dimension::Two,
        };
        assert_abs_diff_eq!(
            boundary_distance(&r2).unwrap(),
            1.0 - 0.3 * 2.0f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(boundary_distance(&reduced_1d(vec![1.5])).is_err());
    }

    #[test]
    fn feasible_point_has_exp_density_witness() {
        // ubar = [1, 0, 0.5] is strictly realizable; the dual solve produces
        // a positive nodal density whose moments match.
        use crate::newton::{solve_dual, NewtonConfig};
        use crate::velocity::{MomentBasis, QuadratureRule};
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        let basis = MomentBasis::new(2, &rule).unwrap();
        let u = MomentVector::new(vec![1.0, 0.0, 0.5], 2, Dimension::One).unwrap();
        let res = solve_dual(&u, None, &NewtonConfig::default(), &basis, &rule).unwrap();
        assert!(res.converged);
        let f = crate::entropy::reconstruct_density(&res.alpha, &basis, &rule).unwrap();
        assert!(f.iter().all(|&v| v > 0.0));
        let recon = crate::velocity::moments_of(&f, &basis, &rule);
        for (a, b) in recon.values.iter().zip(u.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn normalize_denormalize_roundtrip(u0 in 0.01f64..100.0, u1 in -0.99f64..0.99) {
            let u = MomentVector::new(vec![u0, u1 * u0], 1, Dimension::One).unwrap();
            let (d, r) = normalize(&u).unwrap();
            let back = denormalize(d, &r);
            prop_assert!((back.values[0] - u.values[0]).abs() <= 1e-15 * u0.abs());
            prop_assert!((back.values[1] - u.values[1]).abs() <= 1e-12 * u0.abs().max(1.0));
        }

        #[test]
        fn m1_margin_decreases_with_distance_from_center(a in 0.0f64..0.98, b in 0.001f64..0.01) {
            let inner = check_kershaw_1d(&reduced_1d(vec![a])).unwrap();
            let outer = check_kershaw_1d(&reduced_1d(vec![a + b])).unwrap();
            prop_assert!(outer.margin < inner.margin);
        }

        #[test]
        fn margin_is_scale_invariant(c in 0.01f64..50.0, u1 in -0.9f64..0.9) {
            let u = MomentVector::new(vec![1.0, u1], 1, Dimension::One).unwrap();
            let scaled = MomentVector::new(vec![c, c * u1], 1, Dimension::One).unwrap();
            let (_, r1) = normalize(&u).unwrap();
            let (_, r2) = normalize(&scaled).unwrap();
            let m1 = check(&r1).unwrap().margin;
            let m2 = check(&r2).unwrap().margin;
            prop_assert!((m1 - m2).abs() < 1e-12);
        }
    }
}
