//! Sobolev-style training of the convex surrogate.
//!
//! The loss is the batch mean of three squared-error terms: the entropy
//! value, the multipliers recovered from the input gradient, and the moment
//! reconstruction. The multiplier and moment terms differentiate the input
//! gradient with respect to the parameters; that second-order piece is
//! computed exactly by running the reverse pass in forward-mode dual
//! arithmetic, with the input tangent set to the loss sensitivity of the
//! reduced multipliers.
//!
//! Updates use Adam; after every step the inter-layer weights are clipped
//! at zero, which keeps the network input-convex at all times outside the
//! in-flight update itself. Training is serial and fully determined by the
//! configuration seed.

use super::{Dual, IcnnModel};
use crate::entropy::{alpha_zero_from_reduced, reconstruct_density};
use crate::error::{Error, Result};
use crate::moments::LagrangeMultipliers;
use crate::sampler::ClosureSample;
use crate::velocity::{moments_of, MomentBasis, QuadratureRule};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Whether the multiplier loss compares full multipliers (including the
/// reconstructed zero component) or only the reduced part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AlphaLossMode {
    #[default]
    Full,
    Reduced,
}

impl std::str::FromStr for AlphaLossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AlphaLossMode::Full),
            "reduced" => Ok(AlphaLossMode::Reduced),
            other => Err(Error::Config(format!("unknown alpha loss mode {other}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without sufficient improvement of the monitored loss before
    /// the learning rate is halved.
    pub lr_patience: usize,
    /// Relative improvement that counts as progress for the plateau check.
    pub lr_threshold: f64,
    pub lr_min: f64,
    /// Fraction of the dataset held out for validation; zero trains on
    /// everything and monitors the training loss instead.
    pub validation_split: f64,
    pub seed: u64,
    /// Weights of the (h, alpha, u) loss terms.
    pub loss_weights: [f64; 3],
    pub alpha_loss: AlphaLossMode,
    /// Full-batch Levenberg-Marquardt steps run after the Adam epochs.
    /// Adam stalls around 1e-4 on small Sobolev fits; the polish phase
    /// closes the remaining gap deterministically. Zero disables it.
    pub polish_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 128,
            learning_rate: 1e-3,
            lr_patience: 100,
            lr_threshold: 0.05,
            lr_min: 1e-6,
            validation_split: 0.1,
            seed: 0,
            loss_weights: [1.0, 1.0, 1.0],
            alpha_loss: AlphaLossMode::Full,
            polish_steps: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.loss_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return Err(Error::Config("validation split must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Mean loss terms of one batch; `total` applies the configured weights.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub h: f64,
    pub alpha: f64,
    pub u: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss and the last good
    /// parameters were restored.
    pub diverged: bool,
    /// Dataset indices held out for validation by the shuffle split.
    pub val_indices: Vec<usize>,
}

/// Per-sample evaluation: loss terms plus the sensitivities needed for the
/// parameter gradient.
struct SampleEval {
    loss: [f64; 3],
    /// d(loss)/d(h_theta).
    dh: f64,
    /// d(loss)/d(alpha_theta^r) including the alpha_0 and u chains.
    dgrad: Vec<f64>,
}

fn eval_sample(
    model: &IcnnModel,
    sample: &ClosureSample,
    basis: &MomentBasis,
    rule: &QuadratureRule,
    weights: [f64; 3],
    mode: AlphaLossMode,
) -> Result<(SampleEval, Vec<f64>)> {
    let x = &sample.u.values[1..];
    let n = x.len();
    let h_theta = model.forward(x)?;
    let grad = model.input_gradient(x)?;
    let alpha0 = alpha_zero_from_reduced(&grad, basis, rule)?;
    let alpha_theta = LagrangeMultipliers::from_reduced(alpha0, &grad);
    let f = reconstruct_density(&alpha_theta, basis, rule)?;
    let u_theta = moments_of(&f, basis, rule);

    let [w_h, w_a, w_u] = weights;
    let dh_label = h_theta - sample.h;
    let loss_h = dh_label * dh_label;

    let d_alpha: Vec<f64> = alpha_theta
        .values
        .iter()
        .zip(&sample.alpha.values)
        .map(|(a, b)| a - b)
        .collect();
    let loss_alpha = match mode {
        AlphaLossMode::Full => d_alpha.iter().map(|d| d * d).sum::<f64>(),
        AlphaLossMode::Reduced => d_alpha[1..].iter().map(|d| d * d).sum::<f64>(),
    };

    let d_u: Vec<f64> = u_theta
        .values
        .iter()
        .zip(sample.u.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let loss_u = d_u.iter().map(|d| d * d).sum::<f64>();

    // Sensitivity of the loss with respect to the reduced multipliers
    // (the network's input gradient). Chain pieces:
    //   d alpha_0 / d g_i = -u_theta_i
    //   d u_k / d g_i     = H_{k,i} - u_theta_k * u_theta_i
    // with H the second-moment matrix of the reconstructed density.
    let mut dgrad = vec![0.0; n];
    for i in 0..n {
        let mut v = 2.0 * w_a * d_alpha[i + 1];
        if mode == AlphaLossMode::Full {
            v += 2.0 * w_a * d_alpha[0] * (-u_theta.values[i + 1]);
        }
        dgrad[i] = v;
    }
    if w_u > 0.0 {
        let weighted: Vec<f64> = rule.weights().iter().zip(&f).map(|(w, f)| w * f).collect();
        for i in 0..n {
            let row_i = basis.row(i + 1);
            let mut acc = 0.0;
            for k in 0..=n {
                let row_k = basis.row(k);
                let mut h_ki = 0.0;
                for ((mk, mi), wf) in row_k.iter().zip(row_i).zip(&weighted) {
                    h_ki += mk * mi * wf;
                }
                acc += d_u[k] * (h_ki - u_theta.values[k] * u_theta.values[i + 1]);
            }
            dgrad[i] += 2.0 * w_u * acc;
        }
    }

    Ok((
        SampleEval {
            loss: [loss_h, loss_alpha, loss_u],
            dh: 2.0 * w_h * dh_label,
            dgrad,
        },
        grad,
    ))
}

/// Mean loss of a batch under the configured weights.
pub fn loss_batch(
    model: &IcnnModel,
    samples: &[ClosureSample],
    basis: &MomentBasis,
    rule: &QuadratureRule,
    weights: [f64; 3],
    mode: AlphaLossMode,
) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Err(Error::Config("loss of an empty batch is undefined".into()));
    }
    let mut sums = [0.0; 3];
    for sample in samples {
        let (eval, _) = eval_sample(model, sample, basis, rule, weights, mode)?;
        for (s, l) in sums.iter_mut().zip(eval.loss) {
            *s += l;
        }
    }
    let n = samples.len() as f64;
    let mean = [sums[0] / n, sums[1] / n, sums[2] / n];
    Ok(LossBreakdown {
        h: mean[0],
        alpha: mean[1],
        u: mean[2],
        total: weights[0] * mean[0] + weights[1] * mean[1] + weights[2] * mean[2],
    })
}

/// Exact parameter gradient of the batch-mean loss, accumulated into `grad`.
/// Returns the batch's summed loss terms.
fn batch_gradient(
    model: &IcnnModel,
    samples: &[&ClosureSample],
    basis: &MomentBasis,
    rule: &QuadratureRule,
    weights: [f64; 3],
    mode: AlphaLossMode,
    grad: &mut [f64],
    dual_buf: &mut Vec<Dual>,
) -> Result<[f64; 3]> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let inv_n = 1.0 / samples.len() as f64;
    let mut sums = [0.0; 3];
    for sample in samples {
        let (eval, _) = eval_sample(model, sample, basis, rule, weights, mode)?;
        for (s, l) in sums.iter_mut().zip(eval.loss) {
            *s += l;
        }
        // dual forward/reverse pass: value part carries dN/dtheta, tangent
        // part carries d(v . dN/dx)/dtheta with v the multiplier sensitivity
        let x: Vec<Dual> = sample.u.values[1..]
            .iter()
            .zip(&eval.dgrad)
            .map(|(&v, &t)| Dual { v, t })
            .collect();
        dual_buf.clear();
        dual_buf.resize(model.param_count(), Dual { v: 0.0, t: 0.0 });
        let (pre, _) = model.forward_pass::<Dual>(&x);
        let mut input_grad = vec![Dual { v: 0.0, t: 0.0 }; x.len()];
        model.backward_pass::<Dual>(
            &x,
            &pre,
            Dual { v: 1.0, t: 0.0 },
            Some(dual_buf),
            &mut input_grad,
        );
        for (g, d) in grad.iter_mut().zip(dual_buf.iter()) {
            *g += (eval.dh * d.v + d.t) * inv_n;
        }
    }
    Ok(sums)
}

/// Weighted residual vector and its parameter Jacobian for the full
/// dataset, scaled so the squared norm equals the weighted mean loss.
///
/// Per sample the rows are the entropy residual, the multiplier residuals
/// (with the `alpha_0` chain in full mode), and the moment-reconstruction
/// residuals. Jacobian rows combine the plain parameter gradient with
/// directional derivatives of the input gradient, one dual pass per input
/// coordinate.
fn residual_jacobian(
    model: &IcnnModel,
    samples: &[ClosureSample],
    basis: &MomentBasis,
    rule: &QuadratureRule,
    weights: [f64; 3],
    mode: AlphaLossMode,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = model.input_dim();
    let n_params = model.param_count();
    let scale = 1.0 / (samples.len() as f64).sqrt();
    let [w_h, w_a, w_u] = weights;
    let (sw_h, sw_a, sw_u) = (w_h.sqrt() * scale, w_a.sqrt() * scale, w_u.sqrt() * scale);
    let mut residuals = Vec::new();
    let mut jacobian: Vec<Vec<f64>> = Vec::new();

    for sample in samples {
        let x = &sample.u.values[1..];
        let grad = model.input_gradient(x)?;
        let alpha0 = alpha_zero_from_reduced(&grad, basis, rule)?;
        let alpha_theta = LagrangeMultipliers::from_reduced(alpha0, &grad);
        let f = reconstruct_density(&alpha_theta, basis, rule)?;
        let u_theta = moments_of(&f, basis, rule);
        let h_theta = model.forward(x)?;

        // directional dual passes: tangent part of pass i is d(grad_i)/dtheta
        let mut grad_n: Vec<f64> = vec![0.0; n_params];
        let mut grad_g: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let xd: Vec<Dual> = x
                .iter()
                .enumerate()
                .map(|(k, &v)| Dual {
                    v,
                    t: if k == i { 1.0 } else { 0.0 },
                })
                .collect();
            let (pre, _) = model.forward_pass::<Dual>(&xd);
            let mut buf = vec![Dual { v: 0.0, t: 0.0 }; n_params];
            let mut input_grad = vec![Dual { v: 0.0, t: 0.0 }; n];
            model.backward_pass::<Dual>(
                &xd,
                &pre,
                Dual { v: 1.0, t: 0.0 },
                Some(&mut buf),
                &mut input_grad,
            );
            if i == 0 {
                grad_n = buf.iter().map(|d| d.v).collect();
            }
            grad_g.push(buf.iter().map(|d| d.t).collect());
        }

        // entropy residual
        residuals.push(sw_h * (h_theta - sample.h));
        jacobian.push(grad_n.iter().map(|g| sw_h * g).collect());

        // d(alpha_0)/dtheta through the unit-mass identity
        let dalpha0: Vec<f64> = (0..n_params)
            .map(|p| {
                let mut acc = 0.0;
                for i in 0..n {
                    acc -= u_theta.values[i + 1] * grad_g[i][p];
                }
                acc
            })
            .collect();
        if mode == AlphaLossMode::Full {
            residuals.push(sw_a * (alpha_theta.values[0] - sample.alpha.values[0]));
            jacobian.push(dalpha0.iter().map(|g| sw_a * g).collect());
        }
        for i in 0..n {
            residuals.push(sw_a * (alpha_theta.values[i + 1] - sample.alpha.values[i + 1]));
            jacobian.push(grad_g[i].iter().map(|g| sw_a * g).collect());
        }

        // moment-reconstruction residuals: du_k/dg_i = H_ki - u_k u_i
        let weighted: Vec<f64> = rule.weights().iter().zip(&f).map(|(w, f)| w * f).collect();
        for k in 0..=n {
            let row_k = basis.row(k);
            let mut coeff = vec![0.0; n];
            for (i, c) in coeff.iter_mut().enumerate() {
                let row_i = basis.row(i + 1);
                let mut h_ki = 0.0;
                for ((mk, mi), wf) in row_k.iter().zip(row_i).zip(&weighted) {
                    h_ki += mk * mi * wf;
                }
                *c = h_ki - u_theta.values[k] * u_theta.values[i + 1];
            }
            residuals.push(sw_u * (u_theta.values[k] - sample.u.values[k]));
            jacobian.push(
                (0..n_params)
                    .map(|p| {
                        let mut acc = 0.0;
                        for i in 0..n {
                            acc += coeff[i] * grad_g[i][p];
                        }
                        sw_u * acc
                    })
                    .collect(),
            );
        }
    }
    Ok((residuals, jacobian))
}

/// Full-batch Levenberg-Marquardt refinement of the weighted loss.
fn polish(
    model: &mut IcnnModel,
    samples: &[ClosureSample],
    cfg: &TrainConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<()> {
    use nalgebra::{DMatrix, DVector};
    let n_params = model.param_count();
    let wz_coord: Vec<bool> = {
        let mut mask = vec![false; n_params];
        for shape in model.shapes() {
            if let Some(range) = &shape.wz {
                for i in range.clone() {
                    mask[i] = true;
                }
            }
        }
        mask
    };
    let mut lambda: f64 = 1e-3;
    let mut loss = loss_batch(model, samples, basis, rule, cfg.loss_weights, cfg.alpha_loss)?
        .total;
    for _ in 0..cfg.polish_steps {
        let (res, jac) =
            residual_jacobian(model, samples, basis, rule, cfg.loss_weights, cfg.alpha_loss)?;
        let n_rows = res.len();
        let mut jtj: DMatrix<f64> = DMatrix::zeros(n_params, n_params);
        let mut jtr: DVector<f64> = DVector::zeros(n_params);
        for r in 0..n_rows {
            let row = &jac[r];
            for a in 0..n_params {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                jtr[a] += ra * res[r];
                for b in a..n_params {
                    jtj[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..n_params {
            for b in 0..a {
                jtj[(a, b)] = jtj[(b, a)];
            }
        }

        let saved = model.params().to_vec();
        let mut accepted = false;
        for _ in 0..25 {
            // active-set rounds: coordinates of W^z that a trial step would
            // drive negative are constrained to land exactly at zero, then
            // the system is re-solved so the free parameters compensate
            let mut pinned = vec![false; n_params];
            let mut delta: DVector<f64> = DVector::zeros(n_params);
            let mut solvable = true;
            for _round in 0..4 {
                let mut m = jtj.clone();
                let mut rhs = jtr.clone();
                for i in 0..n_params {
                    m[(i, i)] += lambda * (jtj[(i, i)].max(1e-12));
                }
                for i in 0..n_params {
                    if pinned[i] {
                        let target = saved[i];
                        for a in 0..n_params {
                            rhs[a] -= m[(a, i)] * target;
                        }
                        for a in 0..n_params {
                            m[(a, i)] = 0.0;
                            m[(i, a)] = 0.0;
                        }
                        m[(i, i)] = 1.0;
                        rhs[i] = target;
                    }
                }
                let Some(chol) = m.cholesky() else {
                    solvable = false;
                    break;
                };
                delta = chol.solve(&rhs);
                let mut new_pins = 0;
                for (i, is_wz) in wz_coord.iter().enumerate() {
                    if *is_wz && !pinned[i] && saved[i] - delta[i] < 0.0 {
                        pinned[i] = true;
                        new_pins += 1;
                    }
                }
                if new_pins == 0 {
                    break;
                }
            }
            if !solvable {
                lambda *= 3.0;
                continue;
            }
            for (p, (s, d)) in model
                .params_mut()
                .iter_mut()
                .zip(saved.iter().zip(delta.iter()))
            {
                *p = s - d;
            }
            model.project_wz();
            let trial =
                loss_batch(model, samples, basis, rule, cfg.loss_weights, cfg.alpha_loss);
            match trial {
                Ok(t) if t.total.is_finite() && t.total < loss => {
                    loss = t.total;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => {
                    model.params_mut().copy_from_slice(&saved);
                    lambda *= 3.0;
                }
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Train a model on labeled closure samples.
///
/// Adam on the three-term loss with per-step projection of `W^z` to the
/// non-negative orthant, plateau halving of the learning rate, and a
/// divergence guard that restores the best-seen parameters when the
/// monitored loss turns non-finite.
pub fn train(
    mut model: IcnnModel,
    samples: &[ClosureSample],
    cfg: &TrainConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<(IcnnModel, TrainHistory)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training needs a non-empty dataset".into()));
    }
    let n_reduced = basis.basis_size() - 1;
    if model.input_dim() != n_reduced {
        return Err(Error::Shape(format!(
            "model with {} inputs cannot train on order-{} data",
            model.input_dim(),
            basis.order()
        )));
    }
    for s in samples {
        if s.u.len() != basis.basis_size() {
            return Err(Error::Shape("sample shape does not match basis".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    indices.shuffle(&mut rng);
    let n_val = ((samples.len() as f64) * cfg.validation_split).round() as usize;
    let (val_idx, train_idx) = indices.split_at(n_val);
    let val_set: Vec<ClosureSample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
    let mut train_idx: Vec<usize> = train_idx.to_vec();
    if train_idx.is_empty() {
        return Err(Error::Config(
            "validation split leaves no training samples".into(),
        ));
    }

    let mut adam = Adam::new(model.param_count());
    let mut grad = vec![0.0; model.param_count()];
    let mut dual_buf: Vec<Dual> = Vec::new();
    let mut lr = cfg.learning_rate;
    let mut history = TrainHistory {
        val_indices: val_idx.to_vec(),
        ..Default::default()
    };
    let mut best_monitor = f64::INFINITY;
    let mut best_params = model.params().to_vec();
    let mut plateau_reference = f64::INFINITY;
    let mut epochs_since_progress = 0usize;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<&ClosureSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch_sums = batch_gradient(
                &model,
                &batch,
                basis,
                rule,
                cfg.loss_weights,
                cfg.alpha_loss,
                &mut grad,
                &mut dual_buf,
            )?;
            adam.step(model.params_mut(), &grad, lr);
            model.project_wz();
            for (s, b) in sums.iter_mut().zip(batch_sums) {
                *s += b;
            }
        }
        let n = train_idx.len() as f64;
        let train_loss = LossBreakdown {
            h: sums[0] / n,
            alpha: sums[1] / n,
            u: sums[2] / n,
            total: (cfg.loss_weights[0] * sums[0]
                + cfg.loss_weights[1] * sums[1]
                + cfg.loss_weights[2] * sums[2])
                / n,
        };
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(loss_batch(
                &model,
                &val_set,
                basis,
                rule,
                cfg.loss_weights,
                cfg.alpha_loss,
            )?)
        };
        history.records.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train: train_loss,
            val: val_loss,
        });

        let monitored = val_loss.map(|v| v.total).unwrap_or(train_loss.total);
        if !monitored.is_finite() {
            log::warn!("loss became non-finite at epoch {epoch}; restoring best parameters");
            model.params_mut().copy_from_slice(&best_params);
            history.diverged = true;
            break;
        }
        if monitored < best_monitor {
            best_monitor = monitored;
            best_params.copy_from_slice(model.params());
        }
        // the plateau check only credits improvements past the relative
        // threshold, so a slow crawl still decays the step size
        if monitored < plateau_reference * (1.0 - cfg.lr_threshold) {
            plateau_reference = monitored;
            epochs_since_progress = 0;
        } else {
            epochs_since_progress += 1;
            if epochs_since_progress > cfg.lr_patience && lr > cfg.lr_min {
                lr = (lr * 0.5).max(cfg.lr_min);
                epochs_since_progress = 0;
                plateau_reference = monitored;
            }
        }
    }

    if cfg.polish_steps > 0 && !history.diverged {
        polish(&mut model, &train_samples(samples, &train_idx), cfg, basis, rule)?;
        let train_loss = loss_batch(
            &model,
            &train_samples(samples, &train_idx),
            basis,
            rule,
            cfg.loss_weights,
            cfg.alpha_loss,
        )?;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(loss_batch(
                &model,
                &val_set,
                basis,
                rule,
                cfg.loss_weights,
                cfg.alpha_loss,
            )?)
        };
        history.records.push(EpochRecord {
            epoch: cfg.epochs,
            learning_rate: lr,
            train: train_loss,
            val: val_loss,
        });
    }

    model.meta.epochs = history.records.len();
    if let Some(last) = history.records.last() {
        model.meta.final_train = Some([last.train.h, last.train.alpha, last.train.u]);
        model.meta.final_val = last.val.map(|v| [v.h, v.alpha, v.u]);
    }
    Ok((model, history))
}

fn train_samples(samples: &[ClosureSample], idx: &[usize]) -> Vec<ClosureSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::{infer_normalized, Layout};
    use crate::newton::NewtonConfig;
    use crate::sampler::{sample_uniform_moments, SamplerConfig};
    use approx::assert_abs_diff_eq;

    fn setup() -> (MomentBasis, QuadratureRule) {
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        let basis = MomentBasis::new(1, &rule).unwrap();
        (basis, rule)
    }

    fn isotropic_sample(basis: &MomentBasis, rule: &QuadratureRule) -> ClosureSample {
        use crate::moments::{Dimension, MomentVector};
        let u = MomentVector::new(vec![1.0, 0.0], 1, Dimension::One).unwrap();
        let alpha = LagrangeMultipliers::new(vec![-(2f64.ln()), 0.0]);
        let h = crate::entropy::entropy_functional(&u, &alpha, basis, rule).unwrap();
        ClosureSample { u, alpha, h }
    }

    #[test]
    fn zero_network_loss_on_isotropic_sample() {
        let (basis, rule) = setup();
        let mut model = IcnnModel::init(1, Layout::new(4, 2).unwrap(), 0).unwrap();
        model.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let sample = isotropic_sample(&basis, &rule);
        let loss = loss_batch(
            &model,
            &[sample],
            &basis,
            &rule,
            [1.0, 1.0, 1.0],
            AlphaLossMode::Full,
        )
        .unwrap();
        // zero network: h_theta = 0, label h = -ln2 - 1
        let expect_h = (2f64.ln() + 1.0).powi(2);
        assert_abs_diff_eq!(loss.h, expect_h, epsilon = 1e-12);
        assert!(loss.alpha < 1e-24);
        assert!(loss.u < 1e-24);
    }

    #[test]
    fn self_labeled_sample_has_zero_loss() {
        let (basis, rule) = setup();
        let model = IcnnModel::init(1, Layout::new(6, 3).unwrap(), 3).unwrap();
        // iterate the reconstruction map to its fixed point, where the
        // model's own outputs form a consistent training triplet
        let mut x = 0.4;
        for _ in 0..200 {
            let res = infer_normalized(&model, &[x], &basis, &rule).unwrap();
            let next = res.u.values[1];
            if (next - x).abs() < 1e-16 {
                break;
            }
            x = next;
        }
        let res = infer_normalized(&model, &[x], &basis, &rule).unwrap();
        let sample = ClosureSample {
            u: res.u.clone(),
            alpha: res.alpha.clone(),
            h: res.h,
        };
        let loss = loss_batch(
            &model,
            &[sample],
            &basis,
            &rule,
            [1.0, 1.0, 1.0],
            AlphaLossMode::Full,
        )
        .unwrap();
        assert!(loss.total <= 1e-20, "loss {} not ~0", loss.total);
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let (basis, rule) = setup();
        let cfg = SamplerConfig {
            count: 8,
            seed: 2,
            ..Default::default()
        };
        let samples = sample_uniform_moments(&cfg, &basis, &rule).unwrap();
        let refs: Vec<&ClosureSample> = samples.iter().collect();
        let mut model = IcnnModel::init(1, Layout::new(5, 2).unwrap(), 11).unwrap();
        let weights = [1.0, 1.0, 1.0];
        let mut grad = vec![0.0; model.param_count()];
        let mut dual_buf = Vec::new();
        batch_gradient(
            &model,
            &refs,
            &basis,
            &rule,
            weights,
            AlphaLossMode::Full,
            &mut grad,
            &mut dual_buf,
        )
        .unwrap();
        // central differences over a 10-parameter slice
        let step = 1e-6;
        let stride = (model.param_count() / 10).max(1);
        for pi in (0..model.param_count()).step_by(stride).take(10) {
            let orig = model.params()[pi];
            model.params_mut()[pi] = orig + step;
            let lp = loss_batch(&model, &samples, &basis, &rule, weights, AlphaLossMode::Full)
                .unwrap()
                .total;
            model.params_mut()[pi] = orig - step;
            let lm = loss_batch(&model, &samples, &basis, &rule, weights, AlphaLossMode::Full)
                .unwrap()
                .total;
            model.params_mut()[pi] = orig;
            let fd = (lp - lm) / (2.0 * step);
            let denom = fd.abs().max(1e-6);
            assert!(
                (fd - grad[pi]).abs() / denom < 1e-4,
                "param {pi}: fd {fd} vs adjoint {}",
                grad[pi]
            );
        }
    }

    #[test]
    fn overfits_a_tiny_dataset() {
        let (basis, rule) = setup();
        let cfg = SamplerConfig {
            count: 10,
            delta: 0.05,
            seed: 5,
            newton: NewtonConfig::default(),
            ..Default::default()
        };
        let samples = sample_uniform_moments(&cfg, &basis, &rule).unwrap();
        let model = IcnnModel::init(1, Layout::new(8, 2).unwrap(), 42).unwrap();
        let train_cfg = TrainConfig {
            epochs: 2500,
            batch_size: 10,
            learning_rate: 1e-2,
            lr_patience: 150,
            lr_threshold: 0.05,
            lr_min: 1e-7,
            validation_split: 0.0,
            seed: 42,
            polish_steps: 80,
            ..Default::default()
        };
        let (trained, history) = train(model, &samples, &train_cfg, &basis, &rule).unwrap();
        let final_loss = history.records.last().unwrap().train.total;
        assert!(
            final_loss < 1e-6,
            "training loss {final_loss} did not reach 1e-6"
        );
        assert!(trained.min_wz() >= 0.0);
        assert!(!history.diverged);
    }

    #[test]
    fn training_is_deterministic() {
        let (basis, rule) = setup();
        let cfg = SamplerConfig {
            count: 32,
            seed: 6,
            ..Default::default()
        };
        let samples = sample_uniform_moments(&cfg, &basis, &rule).unwrap();
        let train_cfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            seed: 9,
            ..Default::default()
        };
        let run = || {
            let model = IcnnModel::init(1, Layout::new(6, 2).unwrap(), 1).unwrap();
            train(model, &samples, &train_cfg, &basis, &rule).unwrap()
        };
        let (a, _) = run();
        let (b, _) = run();
        assert_eq!(a.params(), b.params());
    }
}

#[cfg(test)]
mod jacobian_check {
    use super::*;
    use crate::icnn::Layout;
    use crate::sampler::{sample_uniform_moments, SamplerConfig};

    #[test]
    fn jacobian_consistent_with_gradient() {
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        let basis = MomentBasis::new(1, &rule).unwrap();
        let cfg = SamplerConfig {
            count: 6,
            delta: 0.05,
            seed: 5,
            ..Default::default()
        };
        let samples = sample_uniform_moments(&cfg, &basis, &rule).unwrap();
        let refs: Vec<&ClosureSample> = samples.iter().collect();
        let model = IcnnModel::init(1, Layout::new(5, 2).unwrap(), 3).unwrap();
        let weights = [1.0, 1.0, 1.0];
        let mut grad = vec![0.0; model.param_count()];
        let mut buf = Vec::new();
        batch_gradient(
            &model, &refs, &basis, &rule, weights, AlphaLossMode::Full, &mut grad, &mut buf,
        )
        .unwrap();
        let (res, jac) =
            residual_jacobian(&model, &samples, &basis, &rule, weights, AlphaLossMode::Full)
                .unwrap();
        // gradient of |r|^2 is 2 J^T r
        for p in 0..model.param_count() {
            let mut jtr = 0.0;
            for (ri, row) in res.iter().zip(&jac) {
                jtr += ri * row[p];
            }
            let expect = 2.0 * jtr;
            assert!(
                (expect - grad[p]).abs() <= 1e-10 * grad[p].abs().max(1.0),
                "param {p}: 2J^Tr = {expect}, gradient = {}",
                grad[p]
            );
        }
        // loss equals |r|^2
        let loss = loss_batch(&model, &samples, &basis, &rule, weights, AlphaLossMode::Full)
            .unwrap()
            .total;
        let r2: f64 = res.iter().map(|r| r * r).sum();
        assert!((loss - r2).abs() < 1e-12 * loss.max(1.0));
    }
}
