//! Per-channel batch normalization with running statistics.

use crate::tensor::{Shape, Tensor, TensorError};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics saved by the training-mode forward pass; variance is the
/// biased (1/N) estimator.
#[derive(Clone, Debug)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<usize, TensorError> {
    let c = x.shape().c;
    let expected = Shape::new(1, c, 1, 1);
    for t in [gamma, beta] {
        if t.shape() != expected {
            return Err(TensorError::Shape {
                expected,
                got: t.shape(),
            });
        }
    }
    Ok(c)
}

/// Normalizes with batch statistics and returns them for the running-stat
/// update and the backward pass. Requires at least two samples per channel.
pub fn forward_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, BnBatchStats), TensorError> {
    let c = check_affine(x, gamma, beta)?;
    let s = x.shape();
    let per_channel = s.n * s.h * s.w;
    if per_channel < 2 {
        return Err(TensorError::Param(format!(
            "training-mode batch norm needs at least 2 values per channel, got {per_channel}"
        )));
    }
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for b in 0..s.n {
            let base = s.index(b, ch, 0, 0);
            acc += x.data()[base..base + s.h * s.w].iter().sum::<f64>();
        }
        let m = acc / per_channel as f64;
        let mut vacc = 0.0;
        for b in 0..s.n {
            let base = s.index(b, ch, 0, 0);
            for &v in &x.data()[base..base + s.h * s.w] {
                let d = v - m;
                vacc += d * d;
            }
        }
        mean[ch] = m;
        var[ch] = vacc / per_channel as f64;
    }
    let y = normalize(x, gamma, beta, &mean, &var)?;
    Ok((y, BnBatchStats { mean, var }))
}

/// Normalizes with the stored running statistics.
pub fn forward_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Tensor, TensorError> {
    let c = check_affine(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(TensorError::Param(
            "running statistics do not match channel count".into(),
        ));
    }
    if running_var.iter().any(|&v| v < 0.0) {
        return Err(TensorError::Param(
            "running variance must be non-negative".into(),
        ));
    }
    normalize(x, gamma, beta, running_mean, running_var)
}

fn normalize(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
) -> Result<Tensor, TensorError> {
    let s = x.shape();
    let mut y = Tensor::zeros(s)?;
    for ch in 0..s.c {
        let inv = 1.0 / (var[ch] + BN_EPSILON).sqrt();
        let g = gamma.data()[ch];
        let bt = beta.data()[ch];
        let m = mean[ch];
        for b in 0..s.n {
            let base = s.index(b, ch, 0, 0);
            let plane = s.h * s.w;
            for (o, &v) in y.data_mut()[base..base + plane]
                .iter_mut()
                .zip(&x.data()[base..base + plane])
            {
                *o = g * (v - m) * inv + bt;
            }
        }
    }
    Ok(y)
}

/// Folds fresh batch statistics into the running estimates.
pub fn update_running(
    running_mean: &mut [f64],
    running_var: &mut [f64],
    stats: &BnBatchStats,
) {
    for (r, &m) in running_mean.iter_mut().zip(&stats.mean) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
    }
    for (r, &v) in running_var.iter_mut().zip(&stats.var) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
    }
}

/// Gradients of the training-mode forward wrt input, gamma, and beta.
pub fn backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &BnBatchStats,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let s = x.shape();
    if dy.shape() != s {
        return Err(TensorError::Shape {
            expected: s,
            got: dy.shape(),
        });
    }
    let per_channel = (s.n * s.h * s.w) as f64;
    let mut dx = Tensor::zeros(s)?;
    let mut dgamma = Tensor::zeros(gamma.shape())?;
    let mut dbeta = Tensor::zeros(gamma.shape())?;
    let plane = s.h * s.w;
    for ch in 0..s.c {
        let m = stats.mean[ch];
        let inv = 1.0 / (stats.var[ch] + BN_EPSILON).sqrt();
        let g = gamma.data()[ch];
        // First pass: reductions over the channel.
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..s.n {
            let base = s.index(b, ch, 0, 0);
            for (&gy, &v) in dy.data()[base..base + plane]
                .iter()
                .zip(&x.data()[base..base + plane])
            {
                sum_dy += gy;
                sum_dy_xhat += gy * (v - m) * inv;
            }
        }
        dbeta.data_mut()[ch] = sum_dy;
        dgamma.data_mut()[ch] = sum_dy_xhat;
        // Second pass: input gradient.
        let scale = g * inv;
        for b in 0..s.n {
            let base = s.index(b, ch, 0, 0);
            for i in 0..plane {
                let xhat = (x.data()[base + i] - m) * inv;
                dx.data_mut()[base + i] = scale
                    * (dy.data()[base + i]
                        - sum_dy / per_channel
                        - xhat * sum_dy_xhat / per_channel);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(c: usize, g: f64, b: f64) -> (Tensor, Tensor) {
        (
            Tensor::new(Shape::new(1, c, 1, 1), g).unwrap(),
            Tensor::new(Shape::new(1, c, 1, 1), b).unwrap(),
        )
    }

    #[test]
    fn normalized_input_passes_through() {
        // Zero-mean unit-variance channel: +1/-1 alternating.
        let s = Shape::new(1, 1, 2, 2);
        let x = Tensor::from_vec(s, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (gamma, beta) = affine(1, 1.0, 0.0);
        let (y, _) = forward_train(&x, &gamma, &beta).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn training_mode_matches_target_moments() {
        let s = Shape::new(2, 3, 4, 4);
        let x = Tensor::seeded_uniform(s, -3.0, 5.0, 17).unwrap();
        let (gamma, beta) = affine(3, 1.5, 0.25);
        let (y, _) = forward_train(&x, &gamma, &beta).unwrap();
        let n = (s.n * s.h * s.w) as f64;
        for ch in 0..3 {
            let mut mean = 0.0;
            for b in 0..s.n {
                for i in 0..16 {
                    mean += y.data()[y.shape().index(b, ch, i / 4, i % 4)];
                }
            }
            mean /= n;
            let mut var = 0.0;
            for b in 0..s.n {
                for i in 0..16 {
                    let d = y.data()[y.shape().index(b, ch, i / 4, i % 4)] - mean;
                    var += d * d;
                }
            }
            var /= n;
            assert!((mean - 0.25).abs() < 1e-6);
            assert!((var.sqrt() - 1.5).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_handles_zero_variance() {
        let s = Shape::new(1, 1, 2, 2);
        let x = Tensor::new(s, 4.0).unwrap();
        let (gamma, beta) = affine(1, 1.0, 0.0);
        let y = forward_eval(&x, &gamma, &beta, &[4.0], &[0.0]).unwrap();
        assert!(y.all_finite());
        assert!(y.data().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn single_value_training_batch_errors() {
        let x = Tensor::new(Shape::new(1, 1, 1, 1), 1.0).unwrap();
        let (gamma, beta) = affine(1, 1.0, 0.0);
        assert!(forward_train(&x, &gamma, &beta).is_err());
    }
}
