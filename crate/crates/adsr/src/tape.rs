//! Minimal reverse-mode differentiation tape.
//!
//! Operations record themselves in order during the forward pass; `backward`
//! replays them in exact reverse, accumulating gradients additively across
//! fan-out into each slot's gradient buffer. A tape can be consumed by
//! `backward` once.

use crate::ops::{act, adder, conv, norm};
use crate::tensor::{Shape, Tensor, TensorError};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

enum Step {
    Conv {
        x: Var,
        w: Var,
        y: Var,
        stride: usize,
        pad: usize,
    },
    Adder {
        x: Var,
        w: Var,
        y: Var,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        y: Var,
        stats: norm::BnBatchStats,
    },
    Relu {
        x: Var,
        y: Var,
    },
    PowerRelu {
        x: Var,
        alpha: Var,
        y: Var,
    },
    PowerSigned {
        x: Var,
        alpha: Var,
        y: Var,
    },
    Add {
        a: Var,
        b: Var,
        y: Var,
    },
    Scale {
        x: Var,
        factor: f64,
        y: Var,
    },
    Sum {
        x: Var,
        y: Var,
    },
    MeanLoss {
        pred: Var,
        target: Var,
        y: Var,
        absolute: bool,
    },
}

#[derive(Default)]
pub struct Tape {
    slots: Vec<Tensor>,
    steps: Vec<Step>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Records an input or parameter value.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t)
    }

    fn push(&mut self, t: Tensor) -> Var {
        self.slots.push(t);
        Var(self.slots.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.slots[v.0]
    }

    /// Gradient accumulated for `v`, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.slots[v.0].grad()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let out = conv::forward(self.value(x), self.value(w), stride, pad)?;
        let y = self.push(out);
        self.steps.push(Step::Conv { x, w, y, stride, pad });
        Ok(y)
    }

    pub fn adder(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let out = adder::correlate(self.value(x), self.value(w), stride, pad)?;
        let y = self.push(out);
        self.steps.push(Step::Adder { x, w, y, stride, pad });
        Ok(y)
    }

    /// Training-mode batch norm; returns the output var and the batch
    /// statistics so the caller can fold them into running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, norm::BnBatchStats), TensorError> {
        let (out, stats) = norm::forward_train(self.value(x), self.value(gamma), self.value(beta))?;
        let y = self.push(out);
        self.steps.push(Step::BatchNorm {
            x,
            gamma,
            beta,
            y,
            stats: stats.clone(),
        });
        Ok((y, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = act::relu(self.value(x));
        let y = self.push(out);
        self.steps.push(Step::Relu { x, y });
        y
    }

    pub fn power_relu(&mut self, x: Var, alpha: Var) -> Result<Var, TensorError> {
        let a = self.value(alpha).item()?;
        let out = act::power_relu(self.value(x), a)?;
        let y = self.push(out);
        self.steps.push(Step::PowerRelu { x, alpha, y });
        Ok(y)
    }

    pub fn power_signed(&mut self, x: Var, alpha: Var) -> Result<Var, TensorError> {
        let a = self.value(alpha).item()?;
        let out = act::power_signed(self.value(x), a)?;
        let y = self.push(out);
        self.steps.push(Step::PowerSigned { x, alpha, y });
        Ok(y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).add(self.value(b))?;
        let y = self.push(out);
        self.steps.push(Step::Add { a, b, y });
        Ok(y)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).scale(factor);
        let y = self.push(out);
        self.steps.push(Step::Scale { x, factor, y });
        y
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let y = self.push(out);
        self.steps.push(Step::Sum { x, y });
        y
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.mean_loss(pred, target, false)
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.mean_loss(pred, target, true)
    }

    fn mean_loss(&mut self, pred: Var, target: Var, absolute: bool) -> Result<Var, TensorError> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(TensorError::Shape {
                expected: p.shape(),
                got: t.shape(),
            });
        }
        let n = p.numel() as f64;
        let mut acc = 0.0;
        for (&a, &b) in p.data().iter().zip(t.data()) {
            let d = a - b;
            acc += if absolute { d.abs() } else { d * d };
        }
        let y = self.push(Tensor::scalar(acc / n));
        self.steps.push(Step::MeanLoss {
            pred,
            target,
            y,
            absolute,
        });
        Ok(y)
    }

    fn out_grad(&self, y: Var) -> Option<Vec<f64>> {
        self.slots[y.0].grad().map(|g| g.to_vec())
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        self.slots[v.0]
            .accumulate_grad(delta)
            .expect("gradient shape mismatch inside tape");
    }

    /// Runs reverse-mode accumulation from a scalar loss. Errors if the loss
    /// is not scalar or the tape was already consumed.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::State(
                "tape already consumed by a previous backward pass".into(),
            ));
        }
        let shape = self.value(loss).shape();
        if !shape.is_scalar() {
            return Err(TensorError::Shape {
                expected: Shape::new(1, 1, 1, 1),
                got: shape,
            });
        }
        self.consumed = true;
        self.accumulate(loss, &[1.0]);
        for idx in (0..self.steps.len()).rev() {
            // Steps are taken out one at a time so slot gradients can be
            // updated while the step is inspected.
            let step = std::mem::replace(&mut self.steps[idx], Step::Sum { x: Var(0), y: Var(0) });
            self.run_backward_step(&step)?;
            self.steps[idx] = step;
        }
        Ok(())
    }

    fn run_backward_step(&mut self, step: &Step) -> Result<(), TensorError> {
        match *step {
            Step::Conv { x, w, y, stride, pad } => {
                if let Some(dy) = self.out_grad(y) {
                    let dyt = Tensor::from_vec(self.value(y).shape(), dy)?;
                    let (dx, dw) =
                        conv::backward(self.value(x), self.value(w), stride, pad, &dyt)?;
                    self.accumulate(x, dx.data());
                    self.accumulate(w, dw.data());
                }
            }
            Step::Adder { x, w, y, stride, pad } => {
                if let Some(dy) = self.out_grad(y) {
                    let dyt = Tensor::from_vec(self.value(y).shape(), dy)?;
                    let (dx, dw) = adder::backward_surrogate(
                        self.value(x),
                        self.value(w),
                        stride,
                        pad,
                        &dyt,
                    )?;
                    self.accumulate(x, dx.data());
                    self.accumulate(w, dw.data());
                }
            }
            Step::BatchNorm {
                x,
                gamma,
                beta,
                y,
                ref stats,
            } => {
                if let Some(dy) = self.out_grad(y) {
                    let dyt = Tensor::from_vec(self.value(y).shape(), dy)?;
                    let (dx, dgamma, dbeta) =
                        norm::backward(self.value(x), self.value(gamma), stats, &dyt)?;
                    self.accumulate(x, dx.data());
                    self.accumulate(gamma, dgamma.data());
                    self.accumulate(beta, dbeta.data());
                }
            }
            Step::Relu { x, y } => {
                if let Some(dy) = self.out_grad(y) {
                    let dyt = Tensor::from_vec(self.value(y).shape(), dy)?;
                    let dx = act::relu_backward(self.value(x), &dyt);
                    self.accumulate(x, dx.data());
                }
            }
            Step::PowerRelu { x, alpha, y } => {
                if let Some(dy) = self.out_grad(y) {
                    let a = self.value(alpha).item()?;
                    let dyt = Tensor::from_vec(self.value(y).shape(), dy)?;
                    let (dx, dalpha) = act::power_relu_backward(self.value(x), a, &dyt);
                    self.accumulate(x, dx.data());
                    self.accumulate(alpha, &[dalpha]);
                }
            }
            Step::PowerSigned { x, alpha, y } => {
                if let Some(dy) = self.out_grad(y) {
                    let a = self.value(alpha).item()?;
                    let dyt = Tensor::from_vec(self.value(y).shape(), dy)?;
                    let (dx, dalpha) = act::power_signed_backward(self.value(x), a, &dyt);
                    self.accumulate(x, dx.data());
                    self.accumulate(alpha, &[dalpha]);
                }
            }
            Step::Add { a, b, y } => {
                if let Some(dy) = self.out_grad(y) {
                    self.accumulate(a, &dy);
                    self.accumulate(b, &dy);
                }
            }
            Step::Scale { x, factor, y } => {
                if let Some(dy) = self.out_grad(y) {
                    let dx: Vec<f64> = dy.iter().map(|&g| g * factor).collect();
                    self.accumulate(x, &dx);
                }
            }
            Step::Sum { x, y } => {
                if let Some(dy) = self.out_grad(y) {
                    let dx = vec![dy[0]; self.value(x).numel()];
                    self.accumulate(x, &dx);
                }
            }
            Step::MeanLoss {
                pred,
                target,
                y,
                absolute,
            } => {
                if let Some(dy) = self.out_grad(y) {
                    let g = dy[0];
                    let n = self.value(pred).numel() as f64;
                    let mut dpred = vec![0.0; self.value(pred).numel()];
                    for ((d, &p), &t) in dpred
                        .iter_mut()
                        .zip(self.value(pred).data())
                        .zip(self.value(target).data())
                    {
                        let diff = p - t;
                        *d = if absolute {
                            g * sign(diff) / n
                        } else {
                            g * 2.0 * diff / n
                        };
                    }
                    let dtarget: Vec<f64> = dpred.iter().map(|&v| -v).collect();
                    self.accumulate(pred, &dpred);
                    self.accumulate(target, &dtarget);
                }
            }
        }
        Ok(())
    }
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
