//! Adder correlation: feature matching by negated L1 distance instead of
//! multiply-accumulate.
//!
//! The forward output is `Y(b,q,m,n) = -sum_{g,i,j} |X(b,g,m*s+i,n*s+j) - W(q,g,i,j)|`
//! over zero-padded input, so every output element is non-positive. Training
//! uses surrogate gradients: full-precision `(x - w)` for the weights and a
//! hard-tanh-clipped `(w - x)` for the inputs; the exact sign subgradient is
//! exposed separately for verification.

use super::{geometry, zero_padded};
use crate::tensor::{Shape, Tensor, TensorError};

/// L1-distance correlation of `x` `(n, c_in, h, w)` with filters `w`
/// `(c_out, c_in, k, k)` under zero padding.
pub fn correlate(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor, TensorError> {
    let g = geometry(x.shape(), w.shape(), stride, pad)?;
    let xp = zero_padded(x, &g);
    let mut out = Tensor::zeros(Shape::new(g.n, g.c_out, g.oh, g.ow))?;
    let od = out.data_mut();
    let wd = w.data();
    for b in 0..g.n {
        for q in 0..g.c_out {
            let out_base = (b * g.c_out + q) * g.oh * g.ow;
            for ci in 0..g.c_in {
                let xplane = &xp[(b * g.c_in + ci) * g.ph * g.pw..];
                for i in 0..g.k {
                    for j in 0..g.k {
                        let wv = wd[((q * g.c_in + ci) * g.k + i) * g.k + j];
                        for oy in 0..g.oh {
                            let xrow = &xplane[(oy * g.stride + i) * g.pw + j..];
                            let orow = &mut od[out_base + oy * g.ow..out_base + (oy + 1) * g.ow];
                            if g.stride == 1 {
                                for (o, &xv) in orow.iter_mut().zip(&xrow[..g.ow]) {
                                    *o += (xv - wv).abs();
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += (xrow[ox * g.stride] - wv).abs();
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for v in od.iter_mut() {
        *v = -*v;
    }
    debug_assert!(out.data().iter().all(|&v| v <= 0.0), "positive adder output");
    debug_assert!(x.all_finite() == false || w.all_finite() == false || out.all_finite());
    Ok(out)
}

/// Surrogate gradients for [`correlate`]: `dw = dy * (x - w)`,
/// `dx = dy * clamp(w - x, -1, 1)`.
pub fn backward_surrogate(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    dy: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    backward_with(x, w, stride, pad, dy, |xv, wv| {
        (xv - wv, (wv - xv).clamp(-1.0, 1.0))
    })
}

/// Exact sign subgradients of [`correlate`]: `dw = dy * sign(x - w)`,
/// `dx = -dy * sign(x - w)`. Used to verify the forward pass against finite
/// differences, not for training.
pub fn backward_true_sign(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    dy: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    backward_with(x, w, stride, pad, dy, |xv, wv| {
        let s = sign(xv - wv);
        (s, -s)
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shared backward walk; `rule(x, w) -> (weight factor, input factor)`.
fn backward_with(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    dy: &Tensor,
    rule: impl Fn(f64, f64) -> (f64, f64),
) -> Result<(Tensor, Tensor), TensorError> {
    let g = geometry(x.shape(), w.shape(), stride, pad)?;
    let expected = Shape::new(g.n, g.c_out, g.oh, g.ow);
    if dy.shape() != expected {
        return Err(TensorError::Shape {
            expected,
            got: dy.shape(),
        });
    }
    let xp = zero_padded(x, &g);
    let mut dxp = vec![0.0; xp.len()];
    let mut dw = Tensor::zeros(w.shape())?;
    let dwd = dw.data_mut();
    let wd = w.data();
    let dyd = dy.data();
    for b in 0..g.n {
        for q in 0..g.c_out {
            let dy_base = (b * g.c_out + q) * g.oh * g.ow;
            for ci in 0..g.c_in {
                let plane = (b * g.c_in + ci) * g.ph * g.pw;
                for i in 0..g.k {
                    for j in 0..g.k {
                        let widx = ((q * g.c_in + ci) * g.k + i) * g.k + j;
                        let wv = wd[widx];
                        let mut wacc = 0.0;
                        for oy in 0..g.oh {
                            let row = plane + (oy * g.stride + i) * g.pw + j;
                            let dyrow = &dyd[dy_base + oy * g.ow..dy_base + (oy + 1) * g.ow];
                            for (ox, &dyv) in dyrow.iter().enumerate() {
                                let xi = row + ox * g.stride;
                                let (wf, xf) = rule(xp[xi], wv);
                                wacc += dyv * wf;
                                dxp[xi] += dyv * xf;
                            }
                        }
                        dwd[widx] += wacc;
                    }
                }
            }
        }
    }
    Ok((unpad(&dxp, x.shape(), g.ph, g.pw, pad)?, dw))
}

pub(crate) fn unpad(
    dxp: &[f64],
    shape: Shape,
    ph: usize,
    pw: usize,
    pad: usize,
) -> Result<Tensor, TensorError> {
    if pad == 0 {
        return Tensor::from_vec(shape, dxp.to_vec());
    }
    let mut dx = Tensor::zeros(shape)?;
    for b in 0..shape.n {
        for c in 0..shape.c {
            for y in 0..shape.h {
                let src = ((b * shape.c + c) * ph + y + pad) * pw + pad;
                let dst = shape.index(b, c, y, 0);
                dx.data_mut()[dst..dst + shape.w].copy_from_slice(&dxp[src..src + shape.w]);
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: (usize, usize, usize, usize), data: Vec<f64>) -> Tensor {
        Tensor::from_vec(Shape::new(shape.0, shape.1, shape.2, shape.3), data).unwrap()
    }

    #[test]
    fn one_by_one_kernel() {
        let x = t((1, 1, 1, 1), vec![5.0]);
        let w = t((1, 1, 1, 1), vec![3.0]);
        let y = correlate(&x, &w, 1, 0).unwrap();
        assert_eq!(y.data(), &[-2.0]);
    }

    #[test]
    fn matching_patch_scores_zero() {
        let w = Tensor::seeded_uniform(Shape::new(1, 2, 3, 3), -1.0, 1.0, 3).unwrap();
        // Input equal to the filter at the (single) valid position.
        let x = Tensor::from_vec(Shape::new(1, 2, 3, 3), w.data().to_vec()).unwrap();
        let y = correlate(&x, &w, 1, 0).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn output_is_non_positive() {
        let x = Tensor::seeded_uniform(Shape::new(2, 3, 6, 5), -4.0, 4.0, 11).unwrap();
        let w = Tensor::seeded_uniform(Shape::new(4, 3, 3, 3), -2.0, 2.0, 12).unwrap();
        let y = correlate(&x, &w, 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4)).unwrap();
        let w = Tensor::zeros(Shape::new(1, 3, 3, 3)).unwrap();
        assert!(matches!(
            correlate(&x, &w, 1, 1),
            Err(TensorError::Shape { .. })
        ));
    }

    #[test]
    fn kernel_larger_than_padded_input_errors() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2)).unwrap();
        let w = Tensor::zeros(Shape::new(1, 1, 5, 5)).unwrap();
        assert!(matches!(
            correlate(&x, &w, 1, 0),
            Err(TensorError::Param(_))
        ));
    }

    #[test]
    fn surrogate_vanishes_when_input_matches_filter() {
        let w = Tensor::seeded_uniform(Shape::new(1, 1, 3, 3), -1.0, 1.0, 5).unwrap();
        let x = Tensor::from_vec(Shape::new(1, 1, 3, 3), w.data().to_vec()).unwrap();
        let dy = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![2.5]).unwrap();
        let (dx, dw) = backward_surrogate(&x, &w, 1, 0, &dy).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn surrogate_one_by_one_case() {
        let x = t((1, 1, 1, 1), vec![5.0]);
        let w = t((1, 1, 1, 1), vec![3.0]);
        let dy = t((1, 1, 1, 1), vec![1.0]);
        let (dx, dw) = backward_surrogate(&x, &w, 1, 0, &dy).unwrap();
        assert_eq!(dw.data(), &[2.0]); // x - w
        assert_eq!(dx.data(), &[-1.0]); // clamp(w - x, -1, 1) = clamp(-2, ..)
    }

    #[test]
    fn backward_rejects_mismatched_dy() {
        let x = Tensor::zeros(Shape::new(1, 1, 4, 4)).unwrap();
        let w = Tensor::zeros(Shape::new(1, 1, 3, 3)).unwrap();
        let dy = Tensor::zeros(Shape::new(1, 1, 4, 4)).unwrap();
        assert!(backward_surrogate(&x, &w, 1, 0, &dy).is_err());
    }

    #[test]
    fn joint_translation_leaves_output_unchanged() {
        // Quantized values keep the shifted additions exact, so the identity
        // holds bitwise with no padding.
        let quant =
            |t: &Tensor| t.map(|v| (v * 256.0).round() / 256.0);
        let x = quant(&Tensor::seeded_uniform(Shape::new(1, 2, 5, 5), -2.0, 2.0, 21).unwrap());
        let w = quant(&Tensor::seeded_uniform(Shape::new(2, 2, 3, 3), -2.0, 2.0, 22).unwrap());
        let base = correlate(&x, &w, 1, 0).unwrap();
        for t_shift in [-3.0, 1.0, 117.0] {
            let xs = x.map(|v| v + t_shift);
            let ws = w.map(|v| v + t_shift);
            let shifted = correlate(&xs, &ws, 1, 0).unwrap();
            assert_eq!(base.data(), shifted.data());
        }
    }
}
