//! Batch normalization over (n, h, w) per channel, with running statistics
//! for eval mode and exact gradients in both modes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel affine parameters and running statistics.
///
/// `momentum` is the retained fraction: after a training step,
/// `running <- momentum * running + (1 - momentum) * batch_stat`. The batch
/// variance is the biased (divide by m) estimator, both for normalization and
/// for the running update.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<S: Scalar> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<S: Scalar> BatchNormState<S> {
    /// Identity initialization: gamma 1, beta 0, running stats (0, 1).
    pub fn identity(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            epsilon: 1e-5,
            momentum: 0.9,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What backward needs from the forward pass: the statistics actually used.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mode: BnMode,
    /// Per-channel mean used for normalization.
    pub mean: Vec<f64>,
    /// Per-channel (biased) variance used for normalization.
    pub var: Vec<f64>,
}

fn check_channels<S: Scalar>(x: &Tensor4<S>, state: &BatchNormState<S>) -> Result<()> {
    if x.c() != state.channels() {
        return Err(Error::ShapeMismatch {
            context: "batchnorm",
            detail: format!("input has {} channels, state has {}", x.c(), state.channels()),
        });
    }
    Ok(())
}

/// Pure forward pass: normalizes without touching the running statistics.
/// Use [`bn_update_running`] (or [`batchnorm_forward`]) to fold a train-mode
/// cache into the state.
pub fn bn_forward<S: Scalar>(
    x: &Tensor4<S>,
    state: &BatchNormState<S>,
    mode: BnMode,
) -> Result<(Tensor4<S>, BnCache)> {
    check_channels(x, state)?;
    let (n, c, h, w) = x.shape();
    let m = n * h * w;
    let (mean, var) = match mode {
        BnMode::Train => {
            if m <= 1 {
                return Err(Error::InvalidArgument(format!(
                    "train-mode batch norm needs n*h*w > 1, got {m}"
                )));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ci in 0..c {
                let mut sum = 0.0f64;
                for ni in 0..n {
                    for &v in x.plane(ni, ci) {
                        sum += v.as_f64();
                    }
                }
                let mu = sum / m as f64;
                let mut sq = 0.0f64;
                for ni in 0..n {
                    for &v in x.plane(ni, ci) {
                        let d = v.as_f64() - mu;
                        sq += d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = sq / m as f64;
            }
            (mean, var)
        }
        BnMode::Eval => (
            state.running_mean.iter().map(|v| v.as_f64()).collect(),
            state.running_var.iter().map(|v| v.as_f64()).collect(),
        ),
    };
    let mut y = x.clone();
    for ni in 0..n {
        for ci in 0..c {
            let inv_std = 1.0 / (var[ci] + state.epsilon).sqrt();
            let (g, b) = (state.gamma[ci].as_f64(), state.beta[ci].as_f64());
            let mu = mean[ci];
            for v in y.plane_mut(ni, ci) {
                *v = S::from_f64((v.as_f64() - mu) * inv_std * g + b);
            }
        }
    }
    Ok((y, BnCache { mode, mean, var }))
}

/// Folds a train-mode cache into the running statistics.
pub fn bn_update_running<S: Scalar>(state: &mut BatchNormState<S>, cache: &BnCache) {
    if cache.mode != BnMode::Train {
        return;
    }
    let keep = state.momentum;
    for ci in 0..state.channels() {
        let rm = state.running_mean[ci].as_f64() * keep + cache.mean[ci] * (1.0 - keep);
        let rv = state.running_var[ci].as_f64() * keep + cache.var[ci] * (1.0 - keep);
        state.running_mean[ci] = S::from_f64(rm);
        state.running_var[ci] = S::from_f64(rv);
    }
}

/// Forward pass that also updates running statistics in train mode.
pub fn batchnorm_forward<S: Scalar>(
    x: &Tensor4<S>,
    state: &mut BatchNormState<S>,
    mode: BnMode,
) -> Result<(Tensor4<S>, BnCache)> {
    let (y, cache) = bn_forward(x, state, mode)?;
    bn_update_running(state, &cache);
    Ok((y, cache))
}

/// Gradients w.r.t. input, gamma, beta.
///
/// Train mode differentiates through the batch statistics; eval mode treats
/// the running statistics as constants (the layer is then affine in x).
pub fn bn_backward<S: Scalar>(
    x: &Tensor4<S>,
    state: &BatchNormState<S>,
    cache: &BnCache,
    dy: &Tensor4<S>,
) -> Result<(Tensor4<S>, Vec<S>, Vec<S>)> {
    check_channels(x, state)?;
    if dy.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            context: "bn_backward",
            detail: format!("dy {:?} vs x {:?}", dy.shape(), x.shape()),
        });
    }
    let (n, c, h, w) = x.shape();
    let m = (n * h * w) as f64;
    let mut dx = x.zeros_like();
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    for ci in 0..c {
        let mu = cache.mean[ci];
        let inv_std = 1.0 / (cache.var[ci] + state.epsilon).sqrt();
        let g = state.gamma[ci].as_f64();

        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for ni in 0..n {
            let xp = x.plane(ni, ci);
            let dp = dy.plane(ni, ci);
            for (xv, dv) in xp.iter().zip(dp) {
                let xhat = (xv.as_f64() - mu) * inv_std;
                sum_dy += dv.as_f64();
                sum_dy_xhat += dv.as_f64() * xhat;
            }
        }
        dgamma[ci] = S::from_f64(sum_dy_xhat);
        dbeta[ci] = S::from_f64(sum_dy);

        match cache.mode {
            BnMode::Train => {
                // dx = (g*inv_std/m) * (m*dy - sum_dy - xhat * sum_dy_xhat)
                for ni in 0..n {
                    let xp = x.plane(ni, ci).to_vec();
                    let dp = dy.plane(ni, ci).to_vec();
                    let out = dx.plane_mut(ni, ci);
                    for i in 0..out.len() {
                        let xhat = (xp[i].as_f64() - mu) * inv_std;
                        let v = (g * inv_std / m)
                            * (m * dp[i].as_f64() - sum_dy - xhat * sum_dy_xhat);
                        out[i] = S::from_f64(v);
                    }
                }
            }
            BnMode::Eval => {
                let scale = g * inv_std;
                for ni in 0..n {
                    let dp = dy.plane(ni, ci).to_vec();
                    let out = dx.plane_mut(ni, ci);
                    for i in 0..out.len() {
                        out[i] = S::from_f64(dp[i].as_f64() * scale);
                    }
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::train::grad_check;

    fn random_input(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f64> {
        let mut rng = Rng::new(seed);
        Tensor4::from_fn(n, c, h, w, |_, _, _, _| rng.normal() * 1.5 + 0.3)
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor4::<f64>::filled(2, 3, 4, 4, 5.0);
        let state = BatchNormState::identity(3);
        let (y, _) = bn_forward(&x, &state, BnMode::Train).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn affine_parameters_shift_and_scale() {
        let x = random_input(1, 4, 2, 5, 5);
        let mut state = BatchNormState::identity(2);
        state.gamma = vec![2.0; 2];
        state.beta = vec![3.0; 2];
        let (y, _) = bn_forward(&x, &state, BnMode::Train).unwrap();
        let (n, _, h, w) = y.shape();
        let m = (n * h * w) as f64;
        for ci in 0..2 {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for ni in 0..n {
                for &v in y.plane(ni, ci) {
                    sum += v;
                }
            }
            let mean = sum / m;
            for ni in 0..n {
                for &v in y.plane(ni, ci) {
                    sq += (v - mean) * (v - mean);
                }
            }
            let std = (sq / m).sqrt();
            assert!((mean - 3.0).abs() < 1e-6, "mean {mean}");
            assert!((std - 2.0).abs() < 1e-3, "std {std}");
        }
    }

    #[test]
    fn train_mode_output_is_unit_normalized() {
        let x = random_input(2, 3, 4, 6, 6);
        let state = BatchNormState::identity(4);
        let (y, _) = bn_forward(&x, &state, BnMode::Train).unwrap();
        let (n, _, h, w) = y.shape();
        let m = (n * h * w) as f64;
        for ci in 0..4 {
            let mut sum = 0.0;
            for ni in 0..n {
                for &v in y.plane(ni, ci) {
                    sum += v;
                }
            }
            assert!((sum / m).abs() < 1e-10);
            let mut sq = 0.0;
            for ni in 0..n {
                for &v in y.plane(ni, ci) {
                    sq += v * v;
                }
            }
            assert!((sq / m - 1.0).abs() < 1e-5); // epsilon shrinks variance slightly
        }
    }

    #[test]
    fn eval_mode_uses_frozen_stats() {
        let x = random_input(3, 1, 2, 3, 3);
        let mut state = BatchNormState::identity(2);
        state.gamma = vec![1.5, 0.5];
        state.beta = vec![0.25, -1.0];
        let (y, _) = bn_forward(&x, &state, BnMode::Eval).unwrap();
        let denom = (1.0 + state.epsilon).sqrt();
        for ci in 0..2 {
            for yx in 0..9 {
                let expect =
                    state.gamma[ci] * x.data()[ci * 9 + yx] / denom + state.beta[ci];
                assert!((y.data()[ci * 9 + yx] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let x = random_input(4, 2, 1, 4, 4);
        let mut state = BatchNormState::identity(1);
        let (_, cache) = batchnorm_forward(&x, &mut state, BnMode::Train).unwrap();
        let expect_mean = 0.0 * 0.9 + cache.mean[0] * 0.1;
        let expect_var = 1.0 * 0.9 + cache.var[0] * 0.1;
        assert!((state.running_mean[0] - expect_mean).abs() < 1e-12);
        assert!((state.running_var[0] - expect_var).abs() < 1e-12);
    }

    #[test]
    fn singleton_batch_rejected_in_train_mode() {
        let x = Tensor4::<f64>::filled(1, 2, 1, 1, 1.0);
        let state = BatchNormState::identity(2);
        assert!(bn_forward(&x, &state, BnMode::Train).is_err());
        assert!(bn_forward(&x, &state, BnMode::Eval).is_ok());
    }

    fn bn_objective(
        x: &Tensor4<f64>,
        state: &BatchNormState<f64>,
        mode: BnMode,
        sens: &Tensor4<f64>,
    ) -> f64 {
        let (y, _) = bn_forward(x, state, mode).unwrap();
        y.data().iter().zip(sens.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences_train() {
        let x = random_input(5, 2, 3, 4, 4);
        let mut state = BatchNormState::identity(3);
        state.gamma = vec![1.2, 0.8, -0.5];
        state.beta = vec![0.1, -0.2, 0.4];
        let sens = random_input(6, 2, 3, 4, 4);
        let (_, cache) = bn_forward(&x, &state, BnMode::Train).unwrap();
        let (dx, dgamma, dbeta) = bn_backward(&x, &state, &cache, &sens).unwrap();

        let rep = grad_check(
            |t| bn_objective(t, &state, BnMode::Train, &sens),
            &x,
            &dx,
            1e-5,
            96,
            1,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-6, "dx rel err {}", rep.max_rel_err);

        // gamma/beta through a tensor carrier
        let gamma_t = Tensor4::from_vec(1, 1, 1, 3, state.gamma.clone()).unwrap();
        let dgamma_t = Tensor4::from_vec(1, 1, 1, 3, dgamma).unwrap();
        let rep = grad_check(
            |gt| {
                let mut s2 = state.clone();
                s2.gamma = gt.data().to_vec();
                bn_objective(&x, &s2, BnMode::Train, &sens)
            },
            &gamma_t,
            &dgamma_t,
            1e-5,
            8,
            2,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-7, "dgamma rel err {}", rep.max_rel_err);

        let beta_t = Tensor4::from_vec(1, 1, 1, 3, state.beta.clone()).unwrap();
        let dbeta_t = Tensor4::from_vec(1, 1, 1, 3, dbeta).unwrap();
        let rep = grad_check(
            |bt| {
                let mut s2 = state.clone();
                s2.beta = bt.data().to_vec();
                bn_objective(&x, &s2, BnMode::Train, &sens)
            },
            &beta_t,
            &dbeta_t,
            1e-5,
            8,
            3,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-8, "dbeta rel err {}", rep.max_rel_err);
    }

    #[test]
    fn backward_matches_finite_differences_eval() {
        let x = random_input(7, 2, 2, 4, 4);
        let mut state = BatchNormState::identity(2);
        state.running_mean = vec![0.3, -0.2];
        state.running_var = vec![1.7, 0.6];
        state.gamma = vec![0.9, 1.4];
        let sens = random_input(8, 2, 2, 4, 4);
        let (_, cache) = bn_forward(&x, &state, BnMode::Eval).unwrap();
        let (dx, _, _) = bn_backward(&x, &state, &cache, &sens).unwrap();
        let rep = grad_check(
            |t| bn_objective(t, &state, BnMode::Eval, &sens),
            &x,
            &dx,
            1e-3,
            96,
            4,
        )
        .unwrap();
        // eval mode is affine, so the check is tight
        assert!(rep.max_rel_err < 1e-8, "dx rel err {}", rep.max_rel_err);
    }
}
