//! Validation metrics for trained closure surrogates.
//!
//! Mean squared and mean absolute errors of the three surrogate outputs
//! against labeled samples. Vector quantities (multipliers, moments) are
//! averaged over their components, so the numbers are comparable across
//! moment orders.

use crate::error::Result;
use crate::icnn::{infer_normalized, IcnnModel};
use crate::sampler::ClosureSample;
use crate::velocity::{MomentBasis, QuadratureRule};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default)]
pub struct ClosureMetrics {
    pub mse_h: f64,
    pub mse_alpha: f64,
    pub mse_u: f64,
    pub mae_h: f64,
    pub mae_alpha: f64,
    pub mae_u: f64,
}

impl ClosureMetrics {
    /// One row in the layout of the validation-loss tables:
    /// MSE(h) MSE(alpha) MSE(u) MAE(h) MAE(alpha) MAE(u).
    pub fn table_row(&self) -> String {
        format!(
            "{:.3e}  {:.3e}  {:.3e}  {:.3e}  {:.3e}  {:.3e}",
            self.mse_h, self.mse_alpha, self.mse_u, self.mae_h, self.mae_alpha, self.mae_u
        )
    }
}

/// Evaluate a model against labeled samples.
pub fn evaluate_closure(
    model: &IcnnModel,
    samples: &[ClosureSample],
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<ClosureMetrics> {
    if samples.is_empty() {
        return Err(crate::error::Error::Config(
            "metrics need a non-empty sample set".into(),
        ));
    }
    let per_sample: Result<Vec<[f64; 6]>> = samples
        .par_iter()
        .map(|s| {
            let res = infer_normalized(model, &s.u.values[1..], basis, rule)?;
            let n_alpha = s.alpha.values.len() as f64;
            let n_u = s.u.values.len() as f64;
            let dh = res.h - s.h;
            let (mut se_a, mut ae_a) = (0.0, 0.0);
            for (a, b) in res.alpha.values.iter().zip(&s.alpha.values) {
                se_a += (a - b) * (a - b);
                ae_a += (a - b).abs();
            }
            let (mut se_u, mut ae_u) = (0.0, 0.0);
            for (a, b) in res.u.values.iter().zip(&s.u.values) {
                se_u += (a - b) * (a - b);
                ae_u += (a - b).abs();
            }
            Ok([
                dh * dh,
                se_a / n_alpha,
                se_u / n_u,
                dh.abs(),
                ae_a / n_alpha,
                ae_u / n_u,
            ])
        })
        .collect();
    let per_sample = per_sample?;
    let n = per_sample.len() as f64;
    let mut sums = [0.0; 6];
    for row in &per_sample {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    Ok(ClosureMetrics {
        mse_h: sums[0] / n,
        mse_alpha: sums[1] / n,
        mse_u: sums[2] / n,
        mae_h: sums[3] / n,
        mae_alpha: sums[4] / n,
        mae_u: sums[5] / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::Layout;
    use crate::sampler::{sample_uniform_moments, SamplerConfig};
    use crate::velocity::QuadratureRule;

    #[test]
    fn metrics_are_zero_for_self_consistent_labels() {
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        let basis = MomentBasis::new(1, &rule).unwrap();
        let model = IcnnModel::init(1, Layout::new(5, 2).unwrap(), 1).unwrap();
        let cfg = SamplerConfig {
            count: 20,
            seed: 3,
            ..Default::default()
        };
        let samples = sample_uniform_moments(&cfg, &basis, &rule).unwrap();
        // relabel by the model itself: metrics must vanish except for the
        // u-part of the reconstruction mismatch, which is measured against
        // the stored u
        let relabeled: Vec<_> = samples
            .iter()
            .map(|s| {
                let res = infer_normalized(&model, &s.u.values[1..], &basis, &rule).unwrap();
                crate::sampler::ClosureSample {
                    u: s.u.clone(),
                    alpha: res.alpha,
                    h: res.h,
                }
            })
            .collect();
        let m = evaluate_closure(&model, &relabeled, &basis, &rule).unwrap();
        assert_eq!(m.mse_h, 0.0);
        assert_eq!(m.mse_alpha, 0.0);
        assert!(m.mse_u > 0.0, "untrained reconstruction should miss u");
    }
}
