//! Plain cross-correlation with the same stride/padding semantics as the
//! adder op; the multiplication-based baseline.

use super::{adder::unpad, geometry, zero_padded};
use crate::tensor::{Shape, Tensor, TensorError};

pub fn forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor, TensorError> {
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
                                    *o += xv * wv;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += xrow[ox * g.stride] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    debug_assert!(x.all_finite() == false || w.all_finite() == false || out.all_finite());
    Ok(out)
}

/// Exact gradients: `dw = dy * x`, `dx = dy * w`.
pub fn backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    dy: &Tensor,
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
                                wacc += dyv * xp[xi];
                                dxp[xi] += dyv * wv;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_one_by_one_kernel() {
        let x = Tensor::seeded_uniform(Shape::new(1, 1, 4, 4), -1.0, 1.0, 9).unwrap();
        let w = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap();
        let y = forward(&x, &w, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn high_pass_kernel_cancels_flat_input() {
        let x = Tensor::new(Shape::new(1, 1, 5, 5), 3.25).unwrap();
        let w = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let y = forward(&x, &w, 1, 0).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4)).unwrap();
        let w = Tensor::zeros(Shape::new(1, 3, 3, 3)).unwrap();
        assert!(matches!(forward(&x, &w, 1, 1), Err(TensorError::Shape { .. })));
    }
}
