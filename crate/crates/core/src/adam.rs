//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Optimizer state over a fixed, ordered set of parameters.
///
/// First and second moments are kept per parameter in the same order the
/// parameters are passed to [`AdamState::step`]; the update is the standard
/// bias-corrected rule and is fully deterministic.
#[derive(Clone, Debug)]
pub struct AdamState<F: Scalar = f32> {
    pub step: u64,
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Canonical defaults: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(param_shapes: &[Vec<usize>], learning_rate: F) -> Self {
        AdamState {
            step: 0,
            learning_rate,
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            epsilon: F::from_f64(1e-8),
            m: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    /// Applies one update in place. `params` and `grads` must line up with
    /// the shapes the state was built from.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[&Tensor<F>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam step over {} params / {} grads, state has {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for i in 0..params.len() {
            if params[i].shape() != self.m[i].shape() || grads[i].shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch(format!(
                    "adam param {i}: param {:?}, grad {:?}, state {:?}",
                    params[i].shape(),
                    grads[i].shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = F::one() - F::from_f64(self.beta1.to_f64().powf(t));
        let bc2 = F::one() - F::from_f64(self.beta2.to_f64().powf(t));
        let one = F::one();
        for i in 0..params.len() {
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            let gd = grads[i].data();
            let pd = params[i].data_mut();
            for j in 0..pd.len() {
                let g = gd[j];
                md[j] = self.beta1 * md[j] + (one - self.beta1) * g;
                vd[j] = self.beta2 * vd[j] + (one - self.beta2) * g * g;
                let m_hat = md[j] / bc1;
                let v_hat = vd[j] / bc2;
                pd[j] = pd[j] - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
