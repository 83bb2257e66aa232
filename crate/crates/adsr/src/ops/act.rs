//! Learnable power activations.
//!
//! The signed form maps `y` to `sign(y) * |y|^alpha`; the rectified form used
//! inside blocks maps to `max(y, 0)^alpha`, which reduces to plain ReLU at
//! `alpha = 1`. Exponents greater than one sharpen contrast, exponents below
//! one smooth it.

use crate::tensor::{Tensor, TensorError};

/// Clamp bounds applied to the exponent after each optimizer step.
pub const ALPHA_MIN: f64 = 0.1;
pub const ALPHA_MAX: f64 = 4.0;

fn check_alpha(alpha: f64) -> Result<(), TensorError> {
    if alpha <= 0.0 {
        return Err(TensorError::Param(format!(
            "power exponent must be positive, got {alpha}"
        )));
    }
    Ok(())
}

/// `sign(y) * |y|^alpha`, elementwise.
pub fn power_signed(y: &Tensor, alpha: f64) -> Result<Tensor, TensorError> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(y.clone());
    }
    Ok(y.map(|v| v.signum() * v.abs().powf(alpha)))
}

/// Gradients of [`power_signed`] wrt its input and exponent. The gradient at
/// `y = 0` is taken as zero for both, sidestepping the `alpha < 1`
/// singularity on a measure-zero set.
pub fn power_signed_backward(y: &Tensor, alpha: f64, dy: &Tensor) -> (Tensor, f64) {
    let mut dalpha = 0.0;
    let mut dinput = Tensor::zeros(y.shape()).expect("shape already validated");
    for ((di, &v), &g) in dinput.data_mut().iter_mut().zip(y.data()).zip(dy.data()) {
        if v != 0.0 {
            let a = v.abs();
            *di = g * alpha * a.powf(alpha - 1.0);
            dalpha += g * v.signum() * a.powf(alpha) * a.ln();
        }
    }
    (dinput, dalpha)
}

/// `max(y, 0)^alpha`, elementwise.
pub fn power_relu(y: &Tensor, alpha: f64) -> Result<Tensor, TensorError> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(y.map(|v| v.max(0.0)));
    }
    Ok(y.map(|v| if v > 0.0 { v.powf(alpha) } else { 0.0 }))
}

/// Gradients of [`power_relu`]. At exactly zero the input gradient uses the
/// right derivative when it is finite (1 at `alpha = 1`, 0 for `alpha > 1`)
/// and 0 otherwise; blocks whose batch-norm scale starts at zero sit exactly
/// on this point at initialization, and the unit subgradient is what lets
/// them start training.
pub fn power_relu_backward(y: &Tensor, alpha: f64, dy: &Tensor) -> (Tensor, f64) {
    let mut dalpha = 0.0;
    let mut dinput = Tensor::zeros(y.shape()).expect("shape already validated");
    for ((di, &v), &g) in dinput.data_mut().iter_mut().zip(y.data()).zip(dy.data()) {
        if v > 0.0 {
            *di = g * alpha * v.powf(alpha - 1.0);
            dalpha += g * v.powf(alpha) * v.ln();
        } else if v == 0.0 && alpha == 1.0 {
            *di = g;
        }
    }
    (dinput, dalpha)
}

pub fn relu(y: &Tensor) -> Tensor {
    y.map(|v| v.max(0.0))
}

/// ReLU backward with the same unit subgradient at zero as
/// [`power_relu_backward`].
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dinput = Tensor::zeros(y.shape()).expect("shape already validated");
    for ((di, &v), &g) in dinput.data_mut().iter_mut().zip(y.data()).zip(dy.data()) {
        if v >= 0.0 {
            *di = g;
        }
    }
    dinput
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn unit_exponent_is_identity() {
        let y = Tensor::seeded_uniform(Shape::new(1, 1, 3, 3), -2.0, 2.0, 4).unwrap();
        let p = power_signed(&y, 1.0).unwrap();
        assert_eq!(p.data(), y.data());
    }

    #[test]
    fn square_root_of_negative_four() {
        let y = Tensor::scalar(-4.0);
        let p = power_signed(&y, 0.5).unwrap();
        assert_eq!(p.data(), &[-2.0]);
    }

    #[test]
    fn non_positive_exponent_errors() {
        let y = Tensor::scalar(1.0);
        assert!(power_signed(&y, 0.0).is_err());
        assert!(power_signed(&y, -1.0).is_err());
        assert!(power_relu(&y, 0.0).is_err());
    }

    #[test]
    fn signed_power_is_odd_and_monotone() {
        let alpha = 1.7;
        let vals = [-3.0, -1.5, -0.2, 0.0, 0.4, 2.0, 5.0];
        let y = Tensor::from_vec(Shape::new(1, 1, 1, vals.len()), vals.to_vec()).unwrap();
        let p = power_signed(&y, alpha).unwrap();
        let neg = power_signed(&y.scale(-1.0), alpha).unwrap();
        for (a, b) in p.data().iter().zip(neg.data()) {
            assert_eq!(*a, -*b);
        }
        for pair in p.data().windows(2) {
            assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn rectified_power_zero_point_gradient() {
        let y = Tensor::scalar(0.0);
        let dy = Tensor::scalar(1.0);
        let (di, da) = power_relu_backward(&y, 1.0, &dy);
        assert_eq!(di.data(), &[1.0]);
        assert_eq!(da, 0.0);
        let (di, _) = power_relu_backward(&y, 1.5, &dy);
        assert_eq!(di.data(), &[0.0]);
    }

    #[test]
    fn signed_power_zero_point_gradient_is_zero() {
        let y = Tensor::scalar(0.0);
        let dy = Tensor::scalar(1.0);
        let (di, da) = power_signed_backward(&y, 0.5, &dy);
        assert_eq!(di.data(), &[0.0]);
        assert_eq!(da, 0.0);
    }
}
