//! Layer operations: adder correlation, its convolutional baseline, batch
//! normalization, the learnable power activations, and the self-shortcut
//! block composing them.

pub mod act;
pub mod adder;
pub mod block;
pub mod conv;
pub mod norm;

use crate::tensor::{Shape, Tensor, TensorError};

pub use act::{ALPHA_MAX, ALPHA_MIN};
pub use block::self_shortcut_block;

/// Resolved geometry of a sliding-window op: kernel `(c_out, c_in, k, k)`
/// applied to input `(n, c_in, h, w)` with zero padding.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// Padded input extents.
    pub ph: usize,
    pub pw: usize,
    /// Output extents.
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn geometry(
    x: Shape,
    w: Shape,
    stride: usize,
    pad: usize,
) -> Result<Geometry, TensorError> {
    if w.h != w.w {
        return Err(TensorError::Param(format!(
            "kernel must be square, got {}x{}",
            w.h, w.w
        )));
    }
    let k = w.h;
    if k == 0 {
        return Err(TensorError::Param("kernel extent must be positive".into()));
    }
    if stride == 0 {
        return Err(TensorError::Param("stride must be positive".into()));
    }
    if x.c != w.c {
        return Err(TensorError::Shape {
            expected: Shape::new(x.n, w.c, x.h, x.w),
            got: x,
        });
    }
    let ph = x.h + 2 * pad;
    let pw = x.w + 2 * pad;
    if ph < k || pw < k {
        return Err(TensorError::Param(format!(
            "spatial extents {}x{} (after padding {}) smaller than kernel {}",
            ph, pw, pad, k
        )));
    }
    Ok(Geometry {
        n: x.n,
        c_in: w.c,
        c_out: w.n,
        k,
        stride,
        pad,
        ph,
        pw,
        oh: (ph - k) / stride + 1,
        ow: (pw - k) / stride + 1,
    })
}

/// Copies `x` into a zero-padded buffer of `(n, c, ph, pw)`.
pub(crate) fn zero_padded(x: &Tensor, g: &Geometry) -> Vec<f64> {
    let s = x.shape();
    if g.pad == 0 {
        return x.data().to_vec();
    }
    let mut out = vec![0.0; s.n * s.c * g.ph * g.pw];
    for b in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                let src = &x.data()[s.index(b, c, y, 0)..s.index(b, c, y, 0) + s.w];
                let dst_base = ((b * s.c + c) * g.ph + y + g.pad) * g.pw + g.pad;
                out[dst_base..dst_base + s.w].copy_from_slice(src);
            }
        }
    }
    out
}

/// Weights and batch-norm state of one adder (or conv-baseline) layer.
///
/// `w` has shape `(c_out, c_in, k, k)`; the batch-norm vectors are
/// per-output-channel.
#[derive(Clone, Debug)]
pub struct AdderLayerParams {
    pub w: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub bn_running_mean: Vec<f64>,
    pub bn_running_var: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl AdderLayerParams {
    /// Builds layer params around a weight tensor, with unit-gamma batch
    /// norm and "same" padding for the (odd) kernel extent.
    pub fn new(w: Tensor, stride: usize) -> Result<Self, TensorError> {
        let s = w.shape();
        if s.h != s.w {
            return Err(TensorError::Param(format!(
                "kernel must be square, got {}x{}",
                s.h, s.w
            )));
        }
        if s.h % 2 == 0 {
            return Err(TensorError::Param(format!(
                "\"same\" padding requires an odd kernel extent, got {}",
                s.h
            )));
        }
        if stride == 0 {
            return Err(TensorError::Param("stride must be positive".into()));
        }
        let c_out = s.n;
        let padding = (s.h - 1) / 2;
        Ok(AdderLayerParams {
            w,
            bn_gamma: Tensor::new(Shape::new(1, c_out, 1, 1), 1.0)?,
            bn_beta: Tensor::zeros(Shape::new(1, c_out, 1, 1))?,
            bn_running_mean: vec![0.0; c_out],
            bn_running_var: vec![1.0; c_out],
            stride,
            padding,
        })
    }

    pub fn c_in(&self) -> usize {
        self.w.shape().c
    }

    pub fn c_out(&self) -> usize {
        self.w.shape().n
    }

    pub fn kernel(&self) -> usize {
        self.w.shape().h
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.bn_running_var.iter().any(|&v| v < 0.0) {
            return Err(TensorError::Param(
                "running variance must be non-negative".into(),
            ));
        }
        let c_out = self.c_out();
        if self.bn_gamma.numel() != c_out
            || self.bn_beta.numel() != c_out
            || self.bn_running_mean.len() != c_out
            || self.bn_running_var.len() != c_out
        {
            return Err(TensorError::Param(
                "batch-norm state does not match output channel count".into(),
            ));
        }
        Ok(())
    }
}

/// Learnable exponent of the power activations, kept strictly positive.
#[derive(Clone, Debug)]
pub struct PowerActParams {
    pub alpha: Tensor,
}

impl PowerActParams {
    pub fn new(alpha: f64) -> Result<Self, TensorError> {
        if alpha <= 0.0 {
            return Err(TensorError::Param(format!(
                "power exponent must be positive, got {alpha}"
            )));
        }
        Ok(PowerActParams {
            alpha: Tensor::scalar(alpha),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.data()[0]
    }
}
