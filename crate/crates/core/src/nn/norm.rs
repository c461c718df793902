//! Per-channel batch normalization over NCHW activations.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Saved state for the training-mode backward pass.
pub struct BnCache<S> {
    xhat: Tensor<S>,
    inv_std: Vec<S>,
}

/// Training mode: normalizes with batch statistics.
///
/// Returns the output, the cache, and the batch mean and unbiased variance
/// for the running-statistics update.
pub fn bn_forward_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
) -> (Tensor<S>, BnCache<S>, Vec<S>, Vec<S>) {
    let (n, c, h, w) = x.dims4();
    let p = h * w;
    let count = (n * p) as f64;
    let mut mean = vec![S::zero(); c];
    let mut var_unbiased = vec![S::zero(); c];
    let mut inv_std = vec![S::zero(); c];
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for ch in 0..c {
        let mut sum = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * p;
            sum += x.data()[off..off + p]
                .iter()
                .map(|v| v.to_f64_lossy())
                .sum::<f64>();
        }
        let mu = sum / count;
        let mut sq = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * p;
            sq += x.data()[off..off + p]
                .iter()
                .map(|v| {
                    let d = v.to_f64_lossy() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        let var = sq / count;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        mean[ch] = S::lit(mu);
        var_unbiased[ch] = S::lit(if count > 1.0 { sq / (count - 1.0) } else { var });
        inv_std[ch] = S::lit(istd);
        let (mu_s, istd_s) = (S::lit(mu), S::lit(istd));
        for b in 0..n {
            let off = (b * c + ch) * p;
            for q in off..off + p {
                let xh = (x.data()[q] - mu_s) * istd_s;
                xhat.data_mut()[q] = xh;
                y.data_mut()[q] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (y, BnCache { xhat, inv_std }, mean, var_unbiased)
}

/// Inference mode: normalizes with the running statistics.
pub fn bn_forward_eval<S: Scalar>(
    x: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
    mean: &[S],
    var: &[S],
) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let p = h * w;
    let mut y = Tensor::zeros(x.shape());
    let eps = S::lit(BN_EPS);
    for ch in 0..c {
        let scale = gamma[ch] / (var[ch] + eps).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        for b in 0..n {
            let off = (b * c + ch) * p;
            for (o, &i) in y.data_mut()[off..off + p]
                .iter_mut()
                .zip(&x.data()[off..off + p])
            {
                *o = i * scale + shift;
            }
        }
    }
    y
}

/// Training-mode backward: returns `(dx, dgamma, dbeta)`.
pub fn bn_backward_train<S: Scalar>(
    cache: &BnCache<S>,
    gamma: &[S],
    dy: &Tensor<S>,
) -> (Tensor<S>, Vec<S>, Vec<S>) {
    let (n, c, h, w) = dy.dims4();
    let p = h * w;
    let count = S::lit((n * p) as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    for ch in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * p;
            for q in off..off + p {
                let g = dy.data()[q].to_f64_lossy();
                sum_dy += g;
                sum_dy_xhat += g * cache.xhat.data()[q].to_f64_lossy();
            }
        }
        dgamma[ch] = S::lit(sum_dy_xhat);
        dbeta[ch] = S::lit(sum_dy);
        let k = gamma[ch] * cache.inv_std[ch] / count;
        let (sd, sdx) = (S::lit(sum_dy), S::lit(sum_dy_xhat));
        for b in 0..n {
            let off = (b * c + ch) * p;
            for q in off..off + p {
                dx.data_mut()[q] = k * (count * dy.data()[q] - sd - cache.xhat.data()[q] * sdx);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Inference-mode backward with respect to the input only.
pub fn bn_backward_eval<S: Scalar>(gamma: &[S], var: &[S], dy: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = dy.dims4();
    let p = h * w;
    let eps = S::lit(BN_EPS);
    let mut dx = Tensor::zeros(dy.shape());
    for ch in 0..c {
        let scale = gamma[ch] / (var[ch] + eps).sqrt();
        for b in 0..n {
            let off = (b * c + ch) * p;
            for (o, &g) in dx.data_mut()[off..off + p]
                .iter_mut()
                .zip(&dy.data()[off..off + p])
            {
                *o = g * scale;
            }
        }
    }
    dx
}

/// Exponential moving average update of running statistics.
pub fn update_running<S: Scalar>(running: &mut [S], batch: &[S]) {
    let m = S::lit(BN_MOMENTUM);
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = (S::one() - m) * *r + m * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn train_backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(&[3, 2, 2, 2], 1.0, &mut rng);
        let gamma = vec![1.5, 0.7];
        let beta = vec![0.1, -0.2];
        let (y, cache, _, _) = bn_forward_train(&x, &gamma, &beta);
        let r = Tensor::<f64>::randn(y.shape(), 1.0, &mut rng);
        let (dx, dgamma, _) = bn_backward_train(&cache, &gamma, &r);
        let h = 1e-6;
        for q in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[q] += h;
            let mut xm = x.clone();
            xm.data_mut()[q] -= h;
            let num = (loss(&bn_forward_train(&xp, &gamma, &beta).0, &r)
                - loss(&bn_forward_train(&xm, &gamma, &beta).0, &r))
                / (2.0 * h);
            assert!(
                (num - dx.data()[q]).abs() < 1e-6,
                "dx[{q}]: {num} vs {}",
                dx.data()[q]
            );
        }
        let mut gp = gamma.clone();
        gp[1] += h;
        let mut gm = gamma.clone();
        gm[1] -= h;
        let num = (loss(&bn_forward_train(&x, &gp, &beta).0, &r)
            - loss(&bn_forward_train(&x, &gm, &beta).0, &r))
            / (2.0 * h);
        assert!((num - dgamma[1]).abs() < 1e-6);
    }

    #[test]
    fn eval_with_batch_stats_matches_train_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::randn(&[4, 3, 2, 2], 2.0, &mut rng);
        let gamma = vec![1.0, 2.0, 0.5];
        let beta = vec![0.0, 1.0, -1.0];
        let (y, _, mean, var_unbiased) = bn_forward_train(&x, &gamma, &beta);
        let count = 16.0;
        let var: Vec<f64> = var_unbiased
            .iter()
            .map(|v| v * (count - 1.0) / count)
            .collect();
        let ye = bn_forward_eval(&x, &gamma, &beta, &mean, &var);
        for (a, b) in y.data().iter().zip(ye.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
