//! Reverse-mode autodiff over a linear recording of executed ops.
//!
//! Each differentiable op appends a node referencing the tape indices of its
//! inputs and output; `backward` replays the record in reverse and routes
//! gradients with the kernels in [`crate::layers`]. A tape supports exactly
//! one backward pass; any use after that is an error.

use crate::error::{Error, Result};
use crate::layers;
use crate::layers::BatchNormCache;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Per-channel batch statistics surfaced by a training-mode batchnorm so the
/// caller can fold them into running buffers.
#[derive(Clone, Debug)]
pub struct BatchStats<F: Scalar> {
    pub mean: Vec<F>,
    pub variance: Vec<F>,
    pub group_size: usize,
}

enum Node<F: Scalar> {
    Conv2d { input: Var, weight: Var, bias: Var, out: Var, stride: usize, padding: usize },
    BatchNormTrain { input: Var, gamma: Var, beta: Var, out: Var, cache: BatchNormCache<F> },
    /// Inference-mode batchnorm folded to a per-channel affine map.
    BatchNormAffine { input: Var, out: Var, scale: Vec<F> },
    MaxPool { input: Var, out: Var, argmax: Vec<usize> },
    Linear { input: Var, weight: Var, bias: Var, out: Var },
    Relu { input: Var, out: Var },
    Softmax { input: Var, out: Var },
    CrossEntropy { logits: Var, out: Var, labels: Vec<usize>, probs: Tensor<F> },
    Flatten { input: Var, out: Var },
    Mul { lhs: Var, rhs: Var, out: Var },
    Sum { input: Var, out: Var },
    Pick { input: Var, out: Var, index: usize },
}

/// Wengert tape: forward values plus the op record.
pub struct Tape<F: Scalar = f32> {
    values: Vec<Tensor<F>>,
    needs_grad: Vec<bool>,
    nodes: Vec<Node<F>>,
    spent: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { values: Vec::new(), needs_grad: Vec::new(), nodes: Vec::new(), spent: false }
    }

    /// Registers a leaf value. Gradient participation follows the tensor's
    /// `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> Result<Var> {
        self.check_live()?;
        let needs = tensor.requires_grad();
        Ok(self.push(tensor, needs))
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.values[var.0]
    }

    fn push(&mut self, tensor: Tensor<F>, needs_grad: bool) -> Var {
        self.values.push(tensor);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn check_live(&self) -> Result<()> {
        if self.spent {
            Err(Error::TapeConsumed)
        } else {
            Ok(())
        }
    }

    fn needs_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.check_live()?;
        let out = layers::conv2d_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            stride,
            padding,
        )?;
        let needs = self.needs_any(&[input, weight, bias]);
        let out = self.push(out, needs);
        self.nodes.push(Node::Conv2d { input, weight, bias, out, stride, padding });
        Ok(out)
    }

    /// Training-mode batchnorm; the returned stats feed the running buffers.
    pub fn batchnorm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: F,
    ) -> Result<(Var, BatchStats<F>)> {
        self.check_live()?;
        let (out, cache) =
            layers::batchnorm2d_train(self.value(input), self.value(gamma), self.value(beta), eps)?;
        let stats = BatchStats {
            mean: cache.mean.clone(),
            variance: cache.variance.clone(),
            group_size: cache.group_size,
        };
        let needs = self.needs_any(&[input, gamma, beta]);
        let out = self.push(out, needs);
        self.nodes.push(Node::BatchNormTrain { input, gamma, beta, out, cache });
        Ok((out, stats))
    }

    /// Inference-mode batchnorm as a fixed per-channel affine map. Only the
    /// input gradient flows; the folded parameters are constants here.
    pub fn batchnorm_affine(&mut self, input: Var, scale: Vec<F>, shift: Vec<F>) -> Result<Var> {
        self.check_live()?;
        let x = self.value(input);
        let [_, c, h, w] = x.dims4()?;
        if scale.len() != c || shift.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "affine batchnorm params of {} channels vs input {c}",
                scale.len()
            )));
        }
        let mut out = Tensor::zeros(x.shape().to_vec());
        {
            let od = out.data_mut();
            let xd = x.data();
            for idx in 0..xd.len() {
                let ch = (idx / (h * w)) % c;
                od[idx] = xd[idx] * scale[ch] + shift[ch];
            }
        }
        let needs = self.needs_grad[input.0];
        let out = self.push(out, needs);
        self.nodes.push(Node::BatchNormAffine { input, out, scale });
        Ok(out)
    }

    pub fn maxpool2d(&mut self, input: Var, size: usize, stride: usize) -> Result<Var> {
        self.check_live()?;
        let (out, argmax) = layers::maxpool2d_forward(self.value(input), size, stride)?;
        let needs = self.needs_grad[input.0];
        let out = self.push(out, needs);
        self.nodes.push(Node::MaxPool { input, out, argmax });
        Ok(out)
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.check_live()?;
        let out =
            layers::linear_forward(self.value(input), self.value(weight), self.value(bias))?;
        let needs = self.needs_any(&[input, weight, bias]);
        let out = self.push(out, needs);
        self.nodes.push(Node::Linear { input, weight, bias, out });
        Ok(out)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check_live()?;
        let out = layers::relu_forward(self.value(input));
        let needs = self.needs_grad[input.0];
        let out = self.push(out, needs);
        self.nodes.push(Node::Relu { input, out });
        Ok(out)
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        self.check_live()?;
        let out = layers::softmax(self.value(input))?;
        let needs = self.needs_grad[input.0];
        let out = self.push(out, needs);
        self.nodes.push(Node::Softmax { input, out });
        Ok(out)
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check_live()?;
        let (loss, probs) = layers::cross_entropy_forward(self.value(logits), labels)?;
        let needs = self.needs_grad[logits.0];
        let out = self.push(loss, needs);
        self.nodes.push(Node::CrossEntropy {
            logits,
            out,
            labels: labels.to_vec(),
            probs,
        });
        Ok(out)
    }

    /// `[N, C, H, W]` to `[N, C*H*W]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        self.check_live()?;
        let x = self.value(input);
        let [n, c, h, w] = x.dims4()?;
        let out = x.clone().reshaped(vec![n, c * h * w])?;
        let needs = self.needs_grad[input.0];
        let out = self.push(out, needs);
        self.nodes.push(Node::Flatten { input, out });
        Ok(out)
    }

    /// Elementwise product of two same-shaped values.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.check_live()?;
        let out = self.value(lhs).zip(self.value(rhs), |a, b| a * b)?;
        let needs = self.needs_any(&[lhs, rhs]);
        let out = self.push(out, needs);
        self.nodes.push(Node::Mul { lhs, rhs, out });
        Ok(out)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check_live()?;
        let total = self.value(input).data().iter().copied().sum();
        let needs = self.needs_grad[input.0];
        let out = self.push(Tensor::scalar(total), needs);
        self.nodes.push(Node::Sum { input, out });
        Ok(out)
    }

    /// Extracts one element as a scalar (e.g. a single logit).
    pub fn pick(&mut self, input: Var, index: usize) -> Result<Var> {
        self.check_live()?;
        let x = self.value(input);
        if index >= x.numel() {
            return Err(Error::InvalidArgument(format!(
                "pick index {index} out of range for {} elements",
                x.numel()
            )));
        }
        let value = x.data()[index];
        let needs = self.needs_grad[input.0];
        let out = self.push(Tensor::scalar(value), needs);
        self.nodes.push(Node::Pick { input, out, index });
        Ok(out)
    }

    /// Runs the backward pass from a scalar loss, consuming the recording.
    ///
    /// Gradients accumulate for every var on a path from a `requires_grad`
    /// leaf to the loss; everything else is skipped.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        self.check_live()?;
        let loss_val = self.value(loss);
        if !loss_val.is_scalar() {
            return Err(Error::NonScalarLoss(loss_val.shape().to_vec()));
        }
        self.spent = true;

        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for node in self.nodes.iter().rev() {
            let out = node_output(node);
            if !self.needs_grad[out.0] {
                continue;
            }
            let Some(gout) = grads[out.0].clone() else { continue };
            match node {
                Node::Conv2d { input, weight, bias, stride, padding, .. } => {
                    let (gi, gw, gb) = layers::conv2d_backward(
                        &self.values[input.0],
                        &self.values[weight.0],
                        &gout,
                        *stride,
                        *padding,
                    )?;
                    self.accumulate(&mut grads, *input, gi)?;
                    self.accumulate(&mut grads, *weight, gw)?;
                    self.accumulate(&mut grads, *bias, gb)?;
                }
                Node::BatchNormTrain { input, gamma, beta, cache, .. } => {
                    let (gi, gg, gb) =
                        layers::batchnorm2d_backward(cache, &self.values[gamma.0], &gout)?;
                    self.accumulate(&mut grads, *input, gi)?;
                    self.accumulate(&mut grads, *gamma, gg)?;
                    self.accumulate(&mut grads, *beta, gb)?;
                }
                Node::BatchNormAffine { input, scale, .. } => {
                    let x = &self.values[input.0];
                    let [_, c, h, w] = x.dims4()?;
                    let mut gi = Tensor::zeros(x.shape().to_vec());
                    {
                        let gd = gi.data_mut();
                        let god = gout.data();
                        for idx in 0..god.len() {
                            let ch = (idx / (h * w)) % c;
                            gd[idx] = god[idx] * scale[ch];
                        }
                    }
                    self.accumulate(&mut grads, *input, gi)?;
                }
                Node::MaxPool { input, argmax, .. } => {
                    let gi = layers::maxpool2d_backward(
                        self.values[input.0].shape(),
                        argmax,
                        &gout,
                    )?;
                    self.accumulate(&mut grads, *input, gi)?;
                }
                Node::Linear { input, weight, bias, .. } => {
                    let (gi, gw, gb) = layers::linear_backward(
                        &self.values[input.0],
                        &self.values[weight.0],
                        &gout,
                    )?;
                    self.accumulate(&mut grads, *input, gi)?;
                    self.accumulate(&mut grads, *weight, gw)?;
                    self.accumulate(&mut grads, *bias, gb)?;
                }
                Node::Relu { input, .. } => {
                    let gi = layers::relu_backward(&self.values[input.0], &gout)?;
                    self.accumulate(&mut grads, *input, gi)?;
                }
                Node::Softmax { input, out } => {
                    let gi = layers::softmax_backward(&self.values[out.0], &gout)?;
                    self.accumulate(&mut grads, *input, gi)?;
                }
                Node::CrossEntropy { logits, labels, probs, .. } => {
                    let gi = layers::cross_entropy_backward(probs, labels, gout.item())?;
                    self.accumulate(&mut grads, *logits, gi)?;
                }
                Node::Flatten { input, .. } => {
                    let shape = self.values[input.0].shape().to_vec();
                    let gi = gout.clone().reshaped(shape)?;
                    self.accumulate(&mut grads, *input, gi)?;
                }
                Node::Mul { lhs, rhs, .. } => {
                    let gl = gout.zip(&self.values[rhs.0], |g, b| g * b)?;
                    let gr = gout.zip(&self.values[lhs.0], |g, a| g * a)?;
                    self.accumulate(&mut grads, *lhs, gl)?;
                    self.accumulate(&mut grads, *rhs, gr)?;
                }
                Node::Sum { input, .. } => {
                    let gi = Tensor::full(self.values[input.0].shape().to_vec(), gout.item());
                    self.accumulate(&mut grads, *input, gi)?;
                }
                Node::Pick { input, index, .. } => {
                    let mut gi = Tensor::zeros(self.values[input.0].shape().to_vec());
                    gi.data_mut()[*index] = gout.item();
                    self.accumulate(&mut grads, *input, gi)?;
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<F>>],
        var: Var,
        grad: Tensor<F>,
    ) -> Result<()> {
        if !self.needs_grad[var.0] {
            return Ok(());
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&grad)?,
            slot @ None => *slot = Some(grad),
        }
        Ok(())
    }
}

fn node_output<F: Scalar>(node: &Node<F>) -> Var {
    match node {
        Node::Conv2d { out, .. }
        | Node::BatchNormTrain { out, .. }
        | Node::BatchNormAffine { out, .. }
        | Node::MaxPool { out, .. }
        | Node::Linear { out, .. }
        | Node::Relu { out, .. }
        | Node::Softmax { out, .. }
        | Node::CrossEntropy { out, .. }
        | Node::Flatten { out, .. }
        | Node::Mul { out, .. }
        | Node::Sum { out, .. }
        | Node::Pick { out, .. } => *out,
    }
}

/// Gradients produced by one backward pass, indexed by tape var.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape
            .leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().with_requires_grad(true))
            .unwrap();
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape
            .leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_requires_grad(true))
            .unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape
            .leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_requires_grad(true))
            .unwrap();
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn tape_reuse_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape
            .leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_requires_grad(true))
            .unwrap();
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
        assert!(matches!(tape.sum(x), Err(Error::TapeConsumed)));
    }

    #[test]
    fn no_gradient_for_non_grad_leaf() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn fanout_accumulates_gradients() {
        // x feeds mul twice, so its gradient is the sum of both branches:
        // d/dx sum(x * x) = 2x.
        let mut tape = Tape::<f32>::new();
        let x = tape
            .leaf(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap().with_requires_grad(true))
            .unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0, -2.0]);
    }
}
