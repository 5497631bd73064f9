//! Reverse-mode differentiation over a linear tape.
//!
//! Every op evaluates eagerly and appends a node; [`Tape::backward`] walks
//! the nodes in exact reverse order of execution. Only the handful of ops
//! the saliency networks and their losses need are supported.

use crate::error::{Error, Result};
use crate::kernels::{self, Padding, Resampler};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    },
    Deconv2d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
        split: usize,
    },
    SliceChannels {
        input: Var,
        start: usize,
        len: usize,
    },
    Resample {
        input: Var,
        rows: Resampler,
        cols: Resampler,
    },
    MseNormalized {
        pred: Var,
        target: Var,
        scale: T,
    },
    Sum {
        input: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Add {
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of executed operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf; receives a gradient on [`backward`](Self::backward).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (inputs, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass. Only leaves keep theirs.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clear gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: Padding) -> Result<Var> {
        let y = kernels::conv2d(self.value(input), self.value(kernel), self.value(bias), stride, padding)?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            y,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn deconv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let y = kernels::deconv2d(self.value(input), self.value(kernel), self.value(bias))?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(y, Op::Deconv2d { input, kernel, bias }, rg))
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (y, argmax) = kernels::maxpool2(self.value(input))?;
        let rg = self.rg(input);
        Ok(self.push(y, Op::MaxPool2 { input, argmax }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let y = kernels::relu(self.value(input));
        let rg = self.rg(input);
        self.push(y, Op::Relu { input }, rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::concat_channels(self.value(a), self.value(b))?;
        let split = self.value(a).shape()[1];
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Concat { a, b, split }, rg))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let y = kernels::slice_channels(self.value(input), start, len)?;
        let rg = self.rg(input);
        Ok(self.push(y, Op::SliceChannels { input, start, len }, rg))
    }

    /// Area-average resize (bilinear when an axis grows).
    pub fn resize_area(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(input).dims4()?;
        let rows = Resampler::auto(h, out_h)?;
        let cols = Resampler::auto(w, out_w)?;
        let y = kernels::resample(self.value(input), &rows, &cols)?;
        let rg = self.rg(input);
        Ok(self.push(y, Op::Resample { input, rows, cols }, rg))
    }

    /// `(1 / (w·h)) · ‖pred − target‖²`, averaged over the batch axis.
    ///
    /// `w` and `h` are the last two extents; for rank < 2 the missing
    /// extents count as 1 and the batch is the leading extent.
    pub fn mse_normalized(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.expect_same_shape(t, "mse_normalized")?;
        let shape = p.shape();
        let rank = shape.len();
        let w = shape[rank - 1];
        let h = if rank >= 2 { shape[rank - 2] } else { 1 };
        let batch = if rank >= 3 { shape[0] } else { 1 };
        let scale = T::one() / T::from_usize(w * h * batch).expect("extent fits scalar");
        let mut acc = T::zero();
        for (&a, &b) in p.data().iter().zip(t.data()) {
            let d = a - b;
            acc += d * d;
        }
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(acc * scale), Op::MseNormalized { pred, target, scale }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.value(input).data() {
            acc += v;
        }
        let rg = self.rg(input);
        self.push(Tensor::scalar(acc), Op::Sum { input }, rg)
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let y = self.value(input).map(|v| v * factor);
        let rg = self.rg(input);
        self.push(y, Op::Scale { input, factor }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.expect_same_shape(y, "add")?;
        let out = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(&u, &v)| u + v).collect(),
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Populate gradients of `loss` on every `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autodiff(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        let l = &self.nodes[loss.0];
        if l.value.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                l.value.shape()
            )));
        }
        if !l.requires_grad {
            return Err(Error::Autodiff(
                "loss is detached: no trainable leaf feeds it".into(),
            ));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Tensor::full(l.value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, g)?;
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: Tensor<T>) -> Result<()> {
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let res = self.propagate_op(&op, g);
        self.nodes[i].op = op;
        res
    }

    fn propagate_op(&mut self, op: &Op<T>, g: Tensor<T>) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (dx, dk, db) =
                    kernels::conv2d_backward(self.value(input), self.value(kernel), &g, stride, padding)?;
                self.accumulate(input, dx);
                self.accumulate(kernel, dk);
                self.accumulate(bias, db);
            }
            Op::Deconv2d { input, kernel, bias } => {
                let (dx, dk, db) = kernels::deconv2d_backward(self.value(input), self.value(kernel), &g)?;
                self.accumulate(input, dx);
                self.accumulate(kernel, dk);
                self.accumulate(bias, db);
            }
            Op::MaxPool2 { input, ref argmax } => {
                let dx = kernels::maxpool2_backward(self.value(input).shape(), argmax, &g);
                self.accumulate(input, dx);
            }
            Op::Relu { input } => {
                let dx = kernels::relu_backward(self.value(input), &g);
                self.accumulate(input, dx);
            }
            Op::Concat { a, b, split } => {
                let total = g.shape()[1];
                let ga = kernels::slice_channels(&g, 0, split)?;
                let gb = kernels::slice_channels(&g, split, total - split)?;
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::SliceChannels { input, start, len } => {
                let shape = self.value(input).shape().to_vec();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let plane = h * w;
                let mut dx = Tensor::zeros(&shape);
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    dx.data_mut()[dst..dst + len * plane]
                        .copy_from_slice(&g.data()[src..src + len * plane]);
                }
                self.accumulate(input, dx);
            }
            Op::Resample {
                input,
                ref rows,
                ref cols,
            } => {
                let dx = kernels::resample_backward(self.value(input).shape(), rows, cols, &g);
                self.accumulate(input, dx);
            }
            Op::MseNormalized { pred, target, scale } => {
                let seed = g.data()[0] * scale * T::from_f64_lossy(2.0);
                let (p, t) = (self.value(pred), self.value(target));
                let dp = Tensor::from_parts(
                    p.shape().to_vec(),
                    p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * seed).collect(),
                );
                if self.rg(target) {
                    let dt = dp.map(|v| -v);
                    self.accumulate(target, dt);
                }
                self.accumulate(pred, dp);
            }
            Op::Sum { input } => {
                let dx = Tensor::full(self.value(input).shape(), g.data()[0]);
                self.accumulate(input, dx);
            }
            Op::Scale { input, factor } => {
                self.accumulate(input, g.map(|v| v * factor));
            }
            Op::Add { a, b } => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::from_fn(&[2, 3], |i| i as f32));
        let l = tape.sum(x);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn mse_scalar_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::new(vec![1], vec![2.0]).unwrap());
        let z = tape.constant(Tensor::zeros(&[1]));
        let l = tape.mse_normalized(x, z).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 4.0);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn mse_worked_example() {
        let mut tape = Tape::<f32>::new();
        let p = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let t = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap());
        let l = tape.mse_normalized(p, t).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.25);
        let same = tape.mse_normalized(p, p).unwrap();
        assert_eq!(tape.value(same).item().unwrap(), 0.0);
    }

    #[test]
    fn relu_indicator_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let r = tape.relu(x);
        let l = tape.sum(r);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn concat_gradient_splits() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::ones(&[1, 1, 2, 2]));
        let b = tape.param(Tensor::ones(&[1, 2, 2, 2]));
        let c = tape.concat_channels(a, b).unwrap();
        let l = tape.sum(c);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &Tensor::ones(&[1, 1, 2, 2]));
        assert_eq!(tape.grad(b).unwrap(), &Tensor::ones(&[1, 2, 2, 2]));
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Autodiff(_))));

        let c = tape.constant(Tensor::ones(&[2]));
        let detached = tape.sum(c);
        assert!(matches!(tape.backward(detached), Err(Error::Autodiff(_))));

        let l = tape.sum(x);
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::Autodiff(_))));
        tape.reset_grads();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &Tensor::ones(&[2]));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[3], 1.5));
        let y = tape.add(x, x).unwrap();
        let s = tape.scale(y, 3.0);
        let l = tape.sum(s);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &Tensor::full(&[3], 6.0));
    }
}
